//! Finite-difference checks for every differentiable layer.

use fdcnn::conv::ConvConfig;
use fdcnn::fd::{full_fdc_forward, full_fdc_backward, kaiming_init, ArtifactHandling, FdcLayer, FdpLayer};
use fdcnn::conv::{KernelBank, KernelLayout};
use fdcnn::nn::gradcheck::{check_layer, gradient_check};
use fdcnn::nn::layers::*;
use fdcnn::nn::{cross_entropy_batch, Activation, ParameterStore};
use fdcnn::spectral::{rfft2, rfft_shift};
use fdcnn::{ComplexTensor, RealTensor, Shape, Tensor};
use num_complex::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TRIALS: u64 = 20;
const LINEAR_TOL: f64 = 1e-6;
const TOL: f64 = 1e-5;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn real(shape: Shape, r: &mut ChaCha8Rng) -> RealTensor<f64> {
    Tensor::from_fn(shape, |_, _, _, _| r.random_range(-1.0..1.0))
}

fn spectrum(shape: Shape, spatial_width: usize, r: &mut ChaCha8Rng) -> ComplexTensor<f64> {
    let s = shape.with_spatial(shape.height, spatial_width / 2 + 1);
    ComplexTensor::new(Tensor::from_fn(s, |_, _, _, _| Complex::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0))), spatial_width).unwrap()
}

fn sh(b: usize, c: usize, h: usize, w: usize) -> Shape {
    Shape::new(b, c, h, w).unwrap()
}

fn assert_layer(name: &str, layer: &mut dyn Layer<f64>, store: &mut ParameterStore<f64>, input: Activation<f64>, seed: u64, tol: f64) {
    let rep = check_layer(layer, store, input, seed, tol, |_| false).unwrap();
    assert!(rep.passed(), "{name} trial {seed}: {rep:?}");
    assert!(rep.input.checked > 0);
}

fn fdc_weights(store: &mut ParameterStore<f64>, cfg: ConvConfig, seed: u64) -> fdcnn::nn::ParamId {
    let bank = kaiming_init(&KernelBank::zeros(cfg, KernelLayout::Cic), seed);
    store.add("fdc", bank.weights)
}

#[test]
fn rfft_layer() {
    for t in 0..TRIALS {
        let mut r = rng(t);
        let (h, w) = (2 * r.random_range(1..5), r.random_range(2..9));
        let x = real(sh(r.random_range(1..3), r.random_range(1..3), h, w), &mut r);
        assert_layer("rfft", &mut Rfft, &mut ParameterStore::new(), Activation::Real(x), t, LINEAR_TOL);
    }
}

#[test]
fn irfft_layer() {
    for t in 0..TRIALS {
        let mut r = rng(100 + t);
        let (h, w) = (r.random_range(2..9), r.random_range(2..9));
        let x = spectrum(sh(1, r.random_range(1..3), h, 1), w, &mut r);
        let mut layer = Irfft { scale: r.random_range(0.5..2.0) };
        assert_layer("irfft", &mut layer, &mut ParameterStore::new(), Activation::Spectrum { values: x, shifted: false }, t, LINEAR_TOL);
    }
}

#[test]
fn shift_layer() {
    for t in 0..TRIALS {
        let mut r = rng(200 + t);
        let h = 2 * r.random_range(1..5);
        let x = spectrum(sh(1, 2, h, 1), r.random_range(2..9), &mut r);
        let shifted = t % 2 == 0;
        assert_layer("rfft_shift", &mut RfftShift, &mut ParameterStore::new(), Activation::Spectrum { values: x, shifted }, t, LINEAR_TOL);
    }
}

#[test]
fn fdc_layer() {
    for t in 0..TRIALS {
        let mut r = rng(300 + t);
        let c = r.random_range(1..3);
        let cfg = ConvConfig::new(c, c * r.random_range(1..3), [1, 3, 5][r.random_range(0..3)]).unwrap();
        let (h, w) = (2 * r.random_range(3..5), r.random_range(5..9));
        let mut store = ParameterStore::new();
        let id = fdc_weights(&mut store, cfg, t);
        let x = spectrum(sh(r.random_range(1..3), c, h, 1), w, &mut r);
        let mut layer = Fdc::new(cfg, id).unwrap();
        assert_layer("fdc", &mut layer, &mut store, Activation::Spectrum { values: x, shifted: t % 2 == 1 }, t, LINEAR_TOL);
    }
}

#[test]
fn fdp_layer() {
    for t in 0..TRIALS {
        let mut r = rng(400 + t);
        let h = 2 * r.random_range(2..6);
        let w = r.random_range(3..12);
        let x = spectrum(sh(1, r.random_range(1..3), h, 1), w, &mut r);
        let pool = FdpLayer::new(2 * r.random_range(1..h / 2), r.random_range(1..w));
        assert_layer("fdp", &mut Fdp::new(pool), &mut ParameterStore::new(), Activation::Spectrum { values: x, shifted: true }, t, LINEAR_TOL);
    }
}

#[test]
fn full_fdc_layer() {
    for t in 0..TRIALS {
        let mut r = rng(500 + t);
        let c = r.random_range(1..3);
        let n = [1, 3, 5][r.random_range(0..3)];
        let cfg = ConvConfig::new(c, 2 * c, n).unwrap();
        let mut store = ParameterStore::new();
        let id = fdc_weights(&mut store, cfg, t);
        let x = real(sh(r.random_range(1..3), c, r.random_range(n..n + 5), r.random_range(n..n + 5)), &mut r);
        let artifacts = if t % 3 == 0 { ArtifactHandling::Distribute } else { ArtifactHandling::Remove };
        let mut layer = FullFdc::new(cfg, id, artifacts).unwrap();
        assert_layer("full_fdc", &mut layer, &mut store, Activation::Real(x), t, LINEAR_TOL);
    }
}

#[test]
fn full_fdc_sum_loss_kernel_gradient() {
    // L = sum(full_fdc(x)) on 5x5 images with 3x3 kernels.
    for t in 0..TRIALS {
        let mut r = rng(600 + t);
        let x = real(sh(1, 1, 5, 5), &mut r);
        let w0 = real(sh(1, 1, 3, 3), &mut r);
        let cfg = ConvConfig::new(1, 1, 3).unwrap();
        let layer_for = |w: &[f64]| {
            let mut l = FdcLayer::new(cfg).unwrap();
            l.set_weights(Tensor::from_vec(sh(1, 1, 3, 3), w.to_vec()).unwrap()).unwrap();
            l
        };
        let layer = layer_for(&w0.to_vec());
        let ones = Tensor::from_fn(sh(1, 1, 3, 3), |_, _, _, _| 1.0);
        let (_, gw) = full_fdc_backward(&layer, &x, &ones, ArtifactHandling::Remove).unwrap();
        let rep = gradient_check(|w| full_fdc_forward(&layer_for(w), &x).unwrap().sum(), &w0.to_vec(), &gw.to_vec(), LINEAR_TOL, |_| false);
        assert!(rep.passed, "{rep:?}");
    }
}

#[test]
fn remove_artifacts_layer() {
    for t in 0..TRIALS {
        let mut r = rng(700 + t);
        let n = [1, 3, 5][r.random_range(0..3)];
        let x = real(sh(1, 2, n + r.random_range(0..4), n + r.random_range(0..4)), &mut r);
        assert_layer("remove_artifacts", &mut RemoveArtifacts { kernel_size: n }, &mut ParameterStore::new(), Activation::Real(x), t, LINEAR_TOL);
    }
}

#[test]
fn conv_layer() {
    for t in 0..TRIALS {
        let mut r = rng(800 + t);
        let cfg = ConvConfig::new(r.random_range(1..3), r.random_range(1..4), [1, 3][r.random_range(0..2)]).unwrap();
        let mut store = ParameterStore::new();
        let w = store.add("w", real(sh(cfg.out_channels, cfg.in_channels, cfg.kernel_size, cfg.kernel_size), &mut r));
        let b = (t % 2 == 0).then(|| store.add("b", real(sh(1, 1, 1, cfg.out_channels), &mut r)));
        let x = real(sh(r.random_range(1..3), cfg.in_channels, cfg.kernel_size + r.random_range(0..4), cfg.kernel_size + 2), &mut r);
        assert_layer("spatial_conv", &mut Conv2d::new(cfg, w, b), &mut store, Activation::Real(x), t, LINEAR_TOL);
    }
}

#[test]
fn zero_pad_and_flatten_layers() {
    for t in 0..TRIALS {
        let mut r = rng(900 + t);
        let x = real(sh(r.random_range(1..3), 2, r.random_range(1..5), r.random_range(1..5)), &mut r);
        assert_layer("zero_pad", &mut ZeroPad { pad: r.random_range(0..3) }, &mut ParameterStore::new(), Activation::Real(x.clone()), t, LINEAR_TOL);
        assert_layer("flatten", &mut Flatten::default(), &mut ParameterStore::new(), Activation::Real(x), t, LINEAR_TOL);
    }
}

#[test]
fn pooling_layers() {
    for t in 0..TRIALS {
        let mut r = rng(1000 + t);
        let x = real(sh(r.random_range(1..3), 2, 2 * r.random_range(1..4), 2 * r.random_range(1..4)), &mut r);
        assert_layer("max_pool", &mut MaxPool2::default(), &mut ParameterStore::new(), Activation::Real(x.clone()), t, TOL);
        assert_layer("avg_pool", &mut AvgPool2::default(), &mut ParameterStore::new(), Activation::Real(x), t, LINEAR_TOL);
    }
}

#[test]
fn relu_layer_skips_exact_zeros() {
    for t in 0..TRIALS {
        let mut r = rng(1100 + t);
        let x = Tensor::from_fn(sh(1, 2, 4, 4), |_, _, _, _| if r.random_bool(0.2) { 0.0 } else { r.random_range(-1.0..1.0) });
        let zeros: Vec<bool> = x.to_vec().iter().map(|v| *v == 0.0).collect();
        let rep = check_layer(&mut Relu::default(), &mut ParameterStore::new(), Activation::Real(x), t, TOL, |i| zeros[i]).unwrap();
        assert!(rep.passed(), "{rep:?}");
        assert_eq!(rep.input.skipped, zeros.iter().filter(|&&z| z).count());
    }
}

#[test]
fn dense_layer() {
    for t in 0..TRIALS {
        let mut r = rng(1200 + t);
        let (f, o) = (r.random_range(1..10), r.random_range(1..5));
        let mut store = ParameterStore::new();
        let w = store.add("w", real(sh(1, 1, o, f), &mut r));
        let b = store.add("b", real(sh(1, 1, 1, o), &mut r));
        let x = real(sh(r.random_range(1..4), f, 1, 1), &mut r);
        let rep = check_layer(&mut Dense::new(w, b), &mut store, Activation::Real(x), t, 1e-8, |_| false).unwrap();
        assert!(rep.passed(), "{rep:?}");
    }
}

#[test]
fn cross_entropy_loss() {
    for t in 0..TRIALS {
        let mut r = rng(1300 + t);
        let (b, k) = (r.random_range(1..5), r.random_range(2..5));
        let logits = real(sh(b, k, 1, 1), &mut r).scale(3.0);
        let labels: Vec<usize> = (0..b).map(|_| r.random_range(0..k)).collect();
        let (_, g) = cross_entropy_batch(&logits, &labels).unwrap();
        let f = |v: &[f64]| cross_entropy_batch(&Tensor::from_vec(logits.shape(), v.to_vec()).unwrap(), &labels).unwrap().0;
        let rep = gradient_check(f, &logits.to_vec(), &g.to_vec(), TOL, |_| false);
        assert!(rep.passed, "{rep:?}");
    }
}

#[test]
fn shifted_spectrum_pipeline() {
    // rfft -> shift -> fdc -> fdp -> shift -> irfft as one composite check.
    for t in 0..TRIALS {
        let mut r = rng(1400 + t);
        let cfg = ConvConfig::new(1, 2, 3).unwrap();
        let mut store = ParameterStore::new();
        let id = fdc_weights(&mut store, cfg, t);
        let x = real(sh(1, 1, 8, 8), &mut r);
        let spec = rfft_shift(&rfft2(&x)).unwrap();
        let mut fdc = Fdc::new(cfg, id).unwrap();
        assert_layer("fdc (shifted)", &mut fdc, &mut store, Activation::Spectrum { values: spec.clone(), shifted: true }, t, LINEAR_TOL);
        let mut fdp = Fdp::new(FdpLayer::halving(8, 8));
        assert_layer("fdp (from rfft)", &mut fdp, &mut store, Activation::Spectrum { values: spec, shifted: true }, t, LINEAR_TOL);
    }
}
