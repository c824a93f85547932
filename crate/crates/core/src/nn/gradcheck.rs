use num_complex::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::nn::layers::{Activation, Layer};
use crate::nn::params::{Gradients, ParameterStore};
use crate::tensor::{ComplexTensor, Tensor};

/// Central difference step.
pub const FD_STEP: f64 = 1e-5;
/// Magnitudes below this are compared absolutely rather than relatively.
pub const REL_FLOOR: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_index: Option<usize>,
    pub checked: usize,
    pub skipped: usize,
    pub tolerance: f64,
    pub passed: bool,
}

impl GradCheckReport {
    fn merge(self, other: GradCheckReport) -> GradCheckReport {
        let worse = other.max_rel_error > self.max_rel_error;
        GradCheckReport {
            max_rel_error: self.max_rel_error.max(other.max_rel_error),
            worst_index: if worse { other.worst_index } else { self.worst_index },
            checked: self.checked + other.checked,
            skipped: self.skipped + other.skipped,
            tolerance: self.tolerance,
            passed: self.passed && other.passed,
        }
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compares `analytic` with central differences of `f` at `x`, skipping
/// the indices for which `skip` is true.
pub fn gradient_check(
    mut f: impl FnMut(&[f64]) -> f64,
    x: &[f64],
    analytic: &[f64],
    tolerance: f64,
    skip: impl Fn(usize) -> bool,
) -> GradCheckReport {
    assert_eq!(x.len(), analytic.len(), "gradient length must match the point");
    let mut p = x.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_index: None,
        checked: 0,
        skipped: 0,
        tolerance,
        passed: true,
    };
    for i in 0..x.len() {
        if skip(i) {
            report.skipped += 1;
            continue;
        }
        p[i] = x[i] + FD_STEP;
        let up = f(&p);
        p[i] = x[i] - FD_STEP;
        let down = f(&p);
        p[i] = x[i];
        let numeric = (up - down) / (2.0 * FD_STEP);
        let e = relative_error(analytic[i], numeric);
        if e > report.max_rel_error || report.worst_index.is_none() {
            report.max_rel_error = report.max_rel_error.max(e);
            report.worst_index = Some(i);
        }
        report.checked += 1;
    }
    report.passed = report.max_rel_error <= tolerance;
    report
}

fn flatten(a: &Activation<f64>) -> Vec<f64> {
    match a {
        Activation::Real(x) => x.to_vec(),
        Activation::Spectrum { values, .. } => values.values().to_vec().iter().flat_map(|z| [z.re, z.im]).collect(),
    }
}

fn rebuild(like: &Activation<f64>, v: &[f64]) -> Activation<f64> {
    match like {
        Activation::Real(x) => Activation::Real(Tensor::from_parts(x.shape(), v.to_vec())),
        Activation::Spectrum { values, shifted } => {
            let data = v.chunks_exact(2).map(|p| Complex::new(p[0], p[1])).collect();
            Activation::Spectrum {
                values: ComplexTensor::from_parts(Tensor::from_parts(values.shape(), data), values.spatial_width()),
                shifted: *shifted,
            }
        }
    }
}

/// Gradient reports for a layer's input and its parameters.
#[derive(Clone, Debug)]
pub struct LayerCheck {
    pub input: GradCheckReport,
    pub params: Option<GradCheckReport>,
}

impl LayerCheck {
    pub fn passed(&self) -> bool {
        self.input.passed && self.params.as_ref().is_none_or(|p| p.passed)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.params.as_ref().map_or(self.input.max_rel_error, |p| p.max_rel_error.max(self.input.max_rel_error))
    }
}

/// Checks a layer under the loss `<R, layer(x)>` for a random projection `R`.
pub fn check_layer(
    layer: &mut dyn Layer<f64>,
    store: &mut ParameterStore<f64>,
    input: Activation<f64>,
    seed: u64,
    tolerance: f64,
    skip_input: impl Fn(usize) -> bool,
) -> Result<LayerCheck> {
    let out = layer.forward(store, input.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r: Vec<f64> = (0..flatten(&out).len()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let upstream = rebuild(&out, &r);
    let mut grads = Gradients::zeros_like(store);
    let gx = flatten(&layer.backward(store, upstream, &mut grads)?);

    let project = |y: &Activation<f64>| flatten(y).iter().zip(&r).map(|(a, b)| a * b).sum::<f64>();
    let x0 = flatten(&input);
    let mut forward_err = None;
    let input_report = {
        let store_ref = &*store;
        let mut loss = |x: &[f64]| match layer.forward(store_ref, rebuild(&input, x)) {
            Ok(y) => project(&y),
            Err(e) => {
                forward_err.get_or_insert(e);
                f64::NAN
            }
        };
        gradient_check(&mut loss, &x0, &gx, tolerance, skip_input)
    };
    if let Some(e) = forward_err {
        return Err(e);
    }

    let mut params = None;
    for id in layer.params() {
        let w0 = store.get(id).to_vec();
        let shape = store.get(id).shape();
        let analytic = grads.get(id).to_vec();
        let mut p = w0.clone();
        let mut report_err = None;
        let mut numeric = Vec::with_capacity(w0.len());
        for i in 0..w0.len() {
            let mut eval = |v: f64| -> f64 {
                p[i] = v;
                store.set(id, Tensor::from_parts(shape, p.clone())).expect("same shape");
                match layer.forward(store, input.clone()) {
                    Ok(y) => project(&y),
                    Err(e) => {
                        report_err.get_or_insert(e);
                        f64::NAN
                    }
                }
            };
            let up = eval(w0[i] + FD_STEP);
            let down = eval(w0[i] - FD_STEP);
            p[i] = w0[i];
            numeric.push((up - down) / (2.0 * FD_STEP));
        }
        store.set(id, Tensor::from_parts(shape, w0))?;
        if let Some(e) = report_err {
            return Err(e);
        }
        let rep = compare(&analytic, &numeric, tolerance);
        params = Some(match params {
            None => rep,
            Some(prev) => GradCheckReport::merge(prev, rep),
        });
    }
    Ok(LayerCheck { input: input_report, params })
}

fn compare(analytic: &[f64], numeric: &[f64], tolerance: f64) -> GradCheckReport {
    let (mut worst, mut idx) = (0.0f64, None);
    for (i, (&a, &n)) in analytic.iter().zip(numeric).enumerate() {
        let e = relative_error(a, n);
        if idx.is_none() || e > worst {
            worst = worst.max(e);
            idx = Some(i);
        }
    }
    GradCheckReport {
        max_rel_error: worst,
        worst_index: idx,
        checked: analytic.len(),
        skipped: 0,
        tolerance,
        passed: worst <= tolerance,
    }
}
