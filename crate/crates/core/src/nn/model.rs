use crate::error::{shape_err, Result};
use crate::nn::layers::{Activation, Layer};
use crate::nn::loss::softmax;
use crate::nn::params::{Gradients, ParameterStore};
use crate::scalar::Scalar;
use crate::tensor::RealTensor;

/// A sequential stack of layers with its parameters.
pub struct Model<T: Scalar> {
    layers: Vec<Box<dyn Layer<T>>>,
    pub store: ParameterStore<T>,
    classes: usize,
    last_transforms: usize,
}

impl<T: Scalar> std::fmt::Debug for Model<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Model")
            .field("layers", &self.layer_kinds())
            .field("parameters", &self.store.scalar_count())
            .field("classes", &self.classes)
            .finish()
    }
}

impl<T: Scalar> Model<T> {
    pub fn new(layers: Vec<Box<dyn Layer<T>>>, store: ParameterStore<T>, classes: usize) -> Self {
        Model { layers, store, classes, last_transforms: 0 }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn layer_kinds(&self) -> Vec<&'static str> {
        self.layers.iter().map(|l| l.kind()).collect()
    }

    /// Domain transforms executed by the most recent forward pass.
    pub fn transforms_last_forward(&self) -> usize {
        self.last_transforms
    }

    /// Logits of shape `(B, classes, 1, 1)`.
    pub fn forward(&mut self, x: &RealTensor<T>) -> Result<RealTensor<T>> {
        let mut a = Activation::Real(x.clone());
        self.last_transforms = 0;
        for layer in &mut self.layers {
            a = layer.forward(&self.store, a)?;
            self.last_transforms += layer.domain_transforms();
        }
        let logits = a.into_real("model output")?;
        let s = logits.shape();
        if s.channels * s.height * s.width != self.classes {
            return Err(shape_err(format!("model produced {s}, expected {} logits per sample", self.classes)));
        }
        Ok(logits)
    }

    /// Backpropagates a gradient on the logits of the last forward pass.
    pub fn backward(&mut self, grad_logits: &RealTensor<T>) -> Result<Gradients<T>> {
        let mut grads = Gradients::zeros_like(&self.store);
        let mut g = Activation::Real(grad_logits.clone());
        for layer in self.layers.iter_mut().rev() {
            g = layer.backward(&self.store, g, &mut grads)?;
        }
        Ok(grads)
    }

    /// Softmax probabilities per sample.
    pub fn predict(&mut self, x: &RealTensor<T>) -> Result<Vec<Vec<T>>> {
        let logits = self.forward(x)?.to_vec();
        Ok(logits.chunks_exact(self.classes).map(softmax).collect())
    }
}
