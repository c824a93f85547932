use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape_err, Result};
use crate::scalar::Scalar;
use crate::tensor::{RealTensor, Shape, Tensor};

/// Index of a parameter inside a [`ParameterStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamId(pub usize);

#[derive(Clone, Debug)]
pub struct Parameter<T: Scalar> {
    pub name: String,
    value: RealTensor<T>,
    m: Vec<T>,
    v: Vec<T>,
    version: u64,
}

impl<T: Scalar> Parameter<T> {
    pub fn value(&self) -> &RealTensor<T> {
        &self.value
    }

    /// Bumped on every write so layers can drop derived caches.
    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn moments(&self) -> (&[T], &[T]) {
        (&self.m, &self.v)
    }
}

/// Named parameters with their Adam moments and the shared step counter.
#[derive(Clone, Debug, Default)]
pub struct ParameterStore<T: Scalar> {
    params: Vec<Parameter<T>>,
    step: u64,
}

impl<T: Scalar> ParameterStore<T> {
    pub fn new() -> Self {
        ParameterStore {
            params: Vec::new(),
            step: 0,
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: RealTensor<T>) -> ParamId {
        let n = value.shape().len();
        self.params.push(Parameter {
            name: name.into(),
            value: value.contiguous(),
            m: vec![T::zero(); n],
            v: vec![T::zero(); n],
            version: 0,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &RealTensor<T> {
        &self.params[id.0].value
    }

    pub fn param(&self, id: ParamId) -> &Parameter<T> {
        &self.params[id.0]
    }

    pub fn version(&self, id: ParamId) -> u64 {
        self.params[id.0].version
    }

    /// Overwrites a parameter value; the shape must not change.
    pub fn set(&mut self, id: ParamId, value: RealTensor<T>) -> Result<()> {
        let p = &mut self.params[id.0];
        if value.shape() != p.value.shape() {
            return Err(shape_err(format!(
                "parameter {} has shape {}, got {}",
                p.name,
                p.value.shape(),
                value.shape()
            )));
        }
        p.value = value.contiguous();
        p.version += 1;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.value.shape().len()).sum()
    }
}

/// Gradient buffers aligned with a [`ParameterStore`].
#[derive(Clone, Debug)]
pub struct Gradients<T: Scalar> {
    grads: Vec<Vec<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn zeros_like(store: &ParameterStore<T>) -> Self {
        Gradients {
            grads: store
                .params
                .iter()
                .map(|p| vec![T::zero(); p.value.shape().len()])
                .collect(),
        }
    }

    pub fn accumulate(&mut self, id: ParamId, grad: &RealTensor<T>) -> Result<()> {
        let g = &mut self.grads[id.0];
        if grad.shape().len() != g.len() {
            return Err(shape_err(format!(
                "gradient of {} elements for a parameter of {}",
                grad.shape().len(),
                g.len()
            )));
        }
        for (a, b) in g.iter_mut().zip(grad.to_vec()) {
            *a = *a + b;
        }
        Ok(())
    }

    pub fn get(&self, id: ParamId) -> &[T] {
        &self.grads[id.0]
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn scale(&mut self, k: T) {
        for g in self.grads.iter_mut().flatten() {
            *g = *g * k;
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-5,
            weight_decay: 1e-6,
            batch_size: 4,
            epochs: 15,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(invalid(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(invalid(format!("weight decay must be non-negative, got {}", self.weight_decay)));
        }
        if self.batch_size == 0 {
            return Err(invalid("batch size must be at least 1"));
        }
        Ok(())
    }
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// One Adam update. Weight decay enters as `lambda * theta` added to the gradient.
pub fn adam_step<T: Scalar>(store: &mut ParameterStore<T>, grads: &Gradients<T>, cfg: &TrainConfig) -> Result<()> {
    cfg.validate()?;
    if grads.len() != store.len() {
        return Err(shape_err(format!(
            "{} gradient buffers for {} parameters",
            grads.len(),
            store.len()
        )));
    }
    store.step += 1;
    let t = store.step as i32;
    let (b1, b2) = (T::of(ADAM_BETA1), T::of(ADAM_BETA2));
    let (one, eps) = (T::one(), T::of(ADAM_EPS));
    let c1 = one - b1.powi(t);
    let c2 = one - b2.powi(t);
    let lr = T::of(cfg.learning_rate);
    let wd = T::of(cfg.weight_decay);
    for (p, g) in store.params.iter_mut().zip(&grads.grads) {
        if g.len() != p.m.len() {
            return Err(shape_err(format!("gradient for {} has the wrong length", p.name)));
        }
        let shape: Shape = p.value.shape();
        let mut theta = std::mem::replace(&mut p.value, Tensor::zeros(shape)).into_vec();
        for i in 0..theta.len() {
            let gi = g[i] + wd * theta[i];
            p.m[i] = b1 * p.m[i] + (one - b1) * gi;
            p.v[i] = b2 * p.v[i] + (one - b2) * gi * gi;
            let mhat = p.m[i] / c1;
            let vhat = p.v[i] / c2;
            theta[i] = theta[i] - lr * mhat / (vhat.sqrt() + eps);
        }
        p.value = Tensor::from_parts(shape, theta);
        p.version += 1;
    }
    Ok(())
}
