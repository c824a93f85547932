//! Spatial-domain valid convolution, used as the correctness oracle and the
//! timing baseline for the frequency-domain layers.
//!
//! "Convolution" here follows the deep-learning convention: the kernel is not
//! flipped, `O(i, j) = sum_k sum_l I(i + k, j + l) * K(k, l)`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape_err, Result};
use crate::scalar::Scalar;
use crate::tensor::{RealTensor, Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConvConfig {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_size: usize,
}

impl ConvConfig {
    pub fn new(in_channels: usize, out_channels: usize, kernel_size: usize) -> Result<Self> {
        if in_channels == 0 || out_channels == 0 || kernel_size == 0 {
            return Err(invalid("channel counts and kernel size must be >= 1"));
        }
        if kernel_size.is_multiple_of(2) {
            return Err(invalid(format!(
                "kernel size must be odd, got {kernel_size}"
            )));
        }
        Ok(ConvConfig {
            in_channels,
            out_channels,
            kernel_size,
        })
    }
}

/// How single-channel kernels are arranged in a [`KernelBank`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelLayout {
    /// `S * C` kernels; every output channel sums over all input channels.
    Cov,
    /// `S` kernels; each input channel is convolved independently.
    Cic,
}

/// `S * C * n * n`
pub fn weight_count_cov(cfg: &ConvConfig) -> usize {
    cfg.out_channels * cfg.in_channels * cfg.kernel_size * cfg.kernel_size
}

/// `S * n * n`
pub fn weight_count_cic(cfg: &ConvConfig) -> usize {
    cfg.out_channels * cfg.kernel_size * cfg.kernel_size
}

/// Learnable kernels. Weights have shape `(S, C, n, n)` for COV and
/// `(S, 1, n, n)` for CIC.
#[derive(Clone, Debug)]
pub struct KernelBank<T> {
    pub config: ConvConfig,
    pub layout: KernelLayout,
    pub weights: RealTensor<T>,
}

impl<T: Scalar> KernelBank<T> {
    pub fn zeros(config: ConvConfig, layout: KernelLayout) -> Self {
        let n = config.kernel_size;
        let c = match layout {
            KernelLayout::Cov => config.in_channels,
            KernelLayout::Cic => 1,
        };
        let shape = Shape {
            batch: config.out_channels,
            channels: c,
            height: n,
            width: n,
        };
        KernelBank {
            config,
            layout,
            weights: Tensor::zeros(shape),
        }
    }

    pub fn from_weights(
        config: ConvConfig,
        layout: KernelLayout,
        weights: RealTensor<T>,
    ) -> Result<Self> {
        let expect = Self::zeros(config, layout).weights.shape();
        if weights.shape() != expect {
            return Err(shape_err(format!(
                "kernel weights {} do not match {layout:?} layout {expect}",
                weights.shape()
            )));
        }
        Ok(KernelBank {
            config,
            layout,
            weights,
        })
    }

    pub fn weight_count(&self) -> usize {
        match self.layout {
            KernelLayout::Cov => weight_count_cov(&self.config),
            KernelLayout::Cic => weight_count_cic(&self.config),
        }
    }

    /// Fan-in of one output value.
    pub fn fan_in(&self) -> usize {
        let n2 = self.config.kernel_size * self.config.kernel_size;
        match self.layout {
            KernelLayout::Cov => n2 * self.config.in_channels,
            KernelLayout::Cic => n2,
        }
    }
}

#[inline]
fn axpy<T: Scalar>(out: &mut [T], w: T, x: &[T]) {
    for (o, &v) in out.iter_mut().zip(x) {
        *o = *o + w * v;
    }
}

#[inline]
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

/// Accumulates the valid correlation of one input plane with one `n x n`
/// kernel into `out` (`oh x ow`, row-major).
fn correlate_accumulate<'a, T: Scalar>(
    in_row: impl Fn(usize) -> &'a [T],
    kernel: &[T],
    n: usize,
    out: &mut [T],
    ow: usize,
) {
    #[cfg(target_arch = "x86_64")]
    if std::is_x86_feature_detected!("avx2") {
        // SAFETY: the feature was detected at runtime.
        unsafe { correlate_avx2(in_row, kernel, n, out, ow) };
        return;
    }
    correlate_portable(in_row, kernel, n, out, ow);
}

/// Same loop compiled with 256-bit vectors. No fused multiply-add, so the
/// results are bitwise identical to the portable build.
#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
fn correlate_avx2<'a, T: Scalar>(in_row: impl Fn(usize) -> &'a [T], kernel: &[T], n: usize, out: &mut [T], ow: usize) {
    correlate_portable(in_row, kernel, n, out, ow);
}

#[inline(always)]
fn correlate_portable<'a, T: Scalar>(
    in_row: impl Fn(usize) -> &'a [T],
    kernel: &[T],
    n: usize,
    out: &mut [T],
    ow: usize,
) {
    const BLOCK: usize = 64;
    let full = ow - ow % BLOCK;
    for (i, out_row) in out.chunks_exact_mut(ow).enumerate() {
        // Column blocks keep the partial sums in registers across all taps.
        // Summation order matches the plain loop below.
        for j0 in (0..full).step_by(BLOCK) {
            let mut acc = [T::zero(); BLOCK];
            acc.copy_from_slice(&out_row[j0..j0 + BLOCK]);
            for ki in 0..n {
                let src = in_row(i + ki);
                for (kj, &w) in kernel[ki * n..(ki + 1) * n].iter().enumerate() {
                    let s: &[T; BLOCK] = src[j0 + kj..j0 + kj + BLOCK].try_into().expect("block width");
                    for t in 0..BLOCK {
                        acc[t] = acc[t] + w * s[t];
                    }
                }
            }
            out_row[j0..j0 + BLOCK].copy_from_slice(&acc);
        }
        for ki in 0..n {
            let src = in_row(i + ki);
            for (kj, &w) in kernel[ki * n..(ki + 1) * n].iter().enumerate() {
                axpy(&mut out_row[full..], w, &src[full + kj..kj + ow]);
            }
        }
    }
}

fn valid_extent(len: usize, n: usize, axis: &str) -> Result<usize> {
    if n > len {
        return Err(shape_err(format!(
            "kernel extent {n} exceeds image {axis} {len}"
        )));
    }
    Ok(len - n + 1)
}

/// Valid correlation of single-channel images with one square kernel of
/// shape `(1, 1, n, n)`. Accepts any batch size.
pub fn conv2d_valid<T: Scalar>(image: &RealTensor<T>, kernel: &RealTensor<T>) -> Result<RealTensor<T>> {
    let s = image.shape();
    let ks = kernel.shape();
    if s.channels != 1 || ks.batch != 1 || ks.channels != 1 || ks.height != ks.width {
        return Err(shape_err(format!(
            "conv2d_valid expects (B, 1, H, W) images and a (1, 1, n, n) kernel, got {s} and {ks}"
        )));
    }
    let n = ks.height;
    let oh = valid_extent(s.height, n, "height")?;
    let ow = valid_extent(s.width, n, "width")?;
    let k = kernel.to_vec();
    let out_shape = s.with_spatial(oh, ow);
    let mut out = vec![T::zero(); out_shape.len()];
    for (b, plane) in out.chunks_exact_mut(oh * ow).enumerate() {
        correlate_accumulate(|r| image.row(b, 0, r), &k, n, plane, ow);
    }
    Ok(Tensor::from_parts(out_shape, out))
}

/// Convolutions over volume: output channel `s` is `sum_c conv2d_valid(I_c, K_sc)`.
pub fn conv_over_volume<T: Scalar>(image: &RealTensor<T>, bank: &KernelBank<T>) -> Result<RealTensor<T>> {
    Ok(conv_over_volume_counted(image, bank)?.0)
}

/// [`conv_over_volume`] that also reports the number of single-channel
/// convolutions performed per image (`S * C`).
pub fn conv_over_volume_counted<T: Scalar>(
    image: &RealTensor<T>,
    bank: &KernelBank<T>,
) -> Result<(RealTensor<T>, usize)> {
    if bank.layout != KernelLayout::Cov {
        return Err(invalid("conv_over_volume needs a COV kernel bank"));
    }
    let s = image.shape();
    let cfg = bank.config;
    if s.channels != cfg.in_channels {
        return Err(shape_err(format!(
            "image has {} channels, kernel bank expects {}",
            s.channels, cfg.in_channels
        )));
    }
    let n = cfg.kernel_size;
    let oh = valid_extent(s.height, n, "height")?;
    let ow = valid_extent(s.width, n, "width")?;
    let out_shape = Shape {
        batch: s.batch,
        channels: cfg.out_channels,
        height: oh,
        width: ow,
    };
    let weights = bank.weights.to_vec();
    let kn = n * n;
    let mut out = vec![T::zero(); out_shape.len()];
    // Bands of output rows for a group of output channels stay cache resident
    // while every input channel streams through them once.
    const BAND_ROWS: usize = 8;
    const GROUP: usize = 8;
    let plane_len = oh * ow;
    for (b, batch_out) in out.chunks_mut(cfg.out_channels * plane_len).enumerate() {
        batch_out.par_chunks_mut(GROUP * plane_len).enumerate().for_each(|(g, group)| {
            let mut planes: Vec<&mut [T]> = group.chunks_mut(plane_len).collect();
            for r0 in (0..oh).step_by(BAND_ROWS) {
                let r1 = (r0 + BAND_ROWS).min(oh);
                for c in 0..cfg.in_channels {
                    for (t, plane) in planes.iter_mut().enumerate() {
                        let so = g * GROUP + t;
                        let k = &weights[(so * cfg.in_channels + c) * kn..][..kn];
                        correlate_accumulate(|r| image.row(b, c, r0 + r), k, n, &mut plane[r0 * ow..r1 * ow], ow);
                    }
                }
            }
        });
    }
    Ok((
        Tensor::from_parts(out_shape, out),
        cfg.out_channels * cfg.in_channels,
    ))
}

/// Gradients of [`conv_over_volume`] with respect to the image and the
/// kernel weights, given the upstream gradient on its output.
pub fn conv_over_volume_backward<T: Scalar>(
    image: &RealTensor<T>,
    bank: &KernelBank<T>,
    grad_out: &RealTensor<T>,
) -> Result<(RealTensor<T>, RealTensor<T>)> {
    let s = image.shape();
    let cfg = bank.config;
    let n = cfg.kernel_size;
    let (oh, ow) = (s.height + 1 - n, s.width + 1 - n);
    let gs = grad_out.shape();
    if gs != (Shape { batch: s.batch, channels: cfg.out_channels, height: oh, width: ow }) {
        return Err(shape_err(format!(
            "upstream gradient {gs} does not match the forward output"
        )));
    }
    let weights = bank.weights.to_vec();
    let kn = n * n;

    let mut grad_image = vec![T::zero(); s.len()];
    let plane = s.plane_len();
    grad_image.par_chunks_mut(plane).enumerate().for_each(|(i, gx)| {
        let (b, c) = (i / s.channels, i % s.channels);
        for so in 0..cfg.out_channels {
            let k = &weights[(so * cfg.in_channels + c) * kn..][..kn];
            for i in 0..oh {
                let g = grad_out.row(b, so, i);
                for ki in 0..n {
                    let dst = &mut gx[(i + ki) * s.width..(i + ki + 1) * s.width];
                    for kj in 0..n {
                        axpy(&mut dst[kj..kj + ow], k[ki * n + kj], g);
                    }
                }
            }
        }
    });

    let mut grad_w = vec![T::zero(); weights.len()];
    grad_w.par_chunks_mut(kn).enumerate().for_each(|(idx, gk)| {
        let (so, c) = (idx / cfg.in_channels, idx % cfg.in_channels);
        for b in 0..s.batch {
            for i in 0..oh {
                let g = grad_out.row(b, so, i);
                for ki in 0..n {
                    let x = image.row(b, c, i + ki);
                    for kj in 0..n {
                        gk[ki * n + kj] = gk[ki * n + kj] + dot(g, &x[kj..kj + ow]);
                    }
                }
            }
        }
    });

    Ok((
        Tensor::from_parts(s, grad_image),
        Tensor::from_parts(bank.weights.shape(), grad_w),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: Shape, seed: u64) -> RealTensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(shape, |_, _, _, _| rng.random_range(-1.0..1.0))
    }

    fn sh(b: usize, c: usize, h: usize, w: usize) -> Shape {
        Shape::new(b, c, h, w).unwrap()
    }

    /// Direct transcription of the correlation sum, 1-based as written.
    fn brute_valid(img: &RealTensor<f64>, c: usize, k: &RealTensor<f64>, s: usize, kc: usize) -> Vec<f64> {
        let n = k.shape().height;
        let (h, w) = (img.shape().height, img.shape().width);
        let mut out = vec![];
        for i in 1..=h - n + 1 {
            for j in 1..=w - n + 1 {
                let mut acc = 0.0;
                for kk in 1..=n {
                    for l in 1..=n {
                        acc += img.get(0, c, i + kk - 2, j + l - 2) * k.get(s, kc, kk - 1, l - 1);
                    }
                }
                out.push(acc);
            }
        }
        out
    }

    #[test]
    fn config_validation() {
        assert!(ConvConfig::new(1, 1, 4).is_err());
        assert!(ConvConfig::new(0, 1, 3).is_err());
        assert!(ConvConfig::new(2, 4, 3).is_ok());
    }

    #[test]
    fn ones_give_nines() {
        let img = Tensor::from_fn(sh(1, 1, 4, 4), |_, _, _, _| 1.0f64);
        let k = Tensor::from_fn(sh(1, 1, 3, 3), |_, _, _, _| 1.0f64);
        let out = conv2d_valid(&img, &k).unwrap();
        assert_eq!(out.shape(), sh(1, 1, 2, 2));
        assert_eq!(out.to_vec(), vec![9.0; 4]);
    }

    #[test]
    fn centre_delta_crops() {
        let img = random(sh(1, 1, 6, 7), 1);
        let k = Tensor::from_fn(sh(1, 1, 3, 3), |_, _, r, c| if r == 1 && c == 1 { 1.0 } else { 0.0 });
        let out = conv2d_valid(&img, &k).unwrap();
        assert_eq!(out.to_vec(), img.crop_region(1, 1, 1, 1).unwrap().to_vec());
    }

    #[test]
    fn matches_brute_force() {
        let img = random(sh(1, 1, 5, 5), 2);
        let k = random(sh(1, 1, 3, 3), 3);
        let out = conv2d_valid(&img, &k).unwrap().to_vec();
        let expect = brute_valid(&img, 0, &k, 0, 0);
        for (a, b) in out.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn kernel_too_large() {
        let img = random(sh(1, 1, 2, 5), 2);
        let k = random(sh(1, 1, 3, 3), 3);
        assert!(conv2d_valid(&img, &k).is_err());
    }

    #[test]
    fn cov_degenerates_to_single() {
        let img = random(sh(1, 1, 6, 6), 4);
        let cfg = ConvConfig::new(1, 1, 3).unwrap();
        let bank = KernelBank::from_weights(cfg, KernelLayout::Cov, random(sh(1, 1, 3, 3), 5)).unwrap();
        let a = conv_over_volume(&img, &bank).unwrap();
        let b = conv2d_valid(&img, &bank.weights).unwrap();
        assert_eq!(a.to_vec(), b.to_vec());
    }

    #[test]
    fn cov_zero_channel_annihilates() {
        let img = random(sh(1, 2, 6, 6), 6);
        let cfg = ConvConfig::new(2, 1, 3).unwrap();
        let k0 = random(sh(1, 1, 3, 3), 7);
        let w = Tensor::from_fn(sh(1, 2, 3, 3), |_, c, r, col| if c == 0 { k0.get(0, 0, r, col) } else { 0.0 });
        let bank = KernelBank::from_weights(cfg, KernelLayout::Cov, w).unwrap();
        let out = conv_over_volume(&img, &bank).unwrap();
        let alone = conv2d_valid(&img.channel_slice(0, 1).unwrap(), &k0).unwrap();
        assert!(out.max_abs_diff(&alone).unwrap() < 1e-12);
    }

    #[test]
    fn cov_matches_triple_loop() {
        let img = random(sh(1, 2, 6, 6), 8);
        let cfg = ConvConfig::new(2, 3, 3).unwrap();
        let bank = KernelBank::from_weights(cfg, KernelLayout::Cov, random(sh(3, 2, 3, 3), 9)).unwrap();
        let (out, count) = conv_over_volume_counted(&img, &bank).unwrap();
        assert_eq!(count, 6);
        assert_eq!(out.shape(), sh(1, 3, 4, 4));
        for s in 0..3 {
            let mut expect = vec![0.0; 16];
            for c in 0..2 {
                for (e, v) in expect.iter_mut().zip(brute_valid(&img, c, &bank.weights, s, c)) {
                    *e += v;
                }
            }
            let got = out.channel_slice(s, 1).unwrap().to_vec();
            for (a, b) in got.iter().zip(&expect) {
                assert!((a - b).abs() < 1e-12);
            }
        }
        let wrong = random(sh(1, 3, 6, 6), 1);
        assert!(conv_over_volume(&wrong, &bank).is_err());
    }

    #[test]
    fn weight_counts() {
        assert_eq!(weight_count_cov(&ConvConfig::new(8, 16, 3).unwrap()), 1152);
        assert_eq!(weight_count_cov(&ConvConfig::new(1, 1, 1).unwrap()), 1);
        assert_eq!(weight_count_cov(&ConvConfig::new(256, 512, 3).unwrap()), 1_179_648);
        assert_eq!(weight_count_cic(&ConvConfig::new(8, 16, 3).unwrap()), 144);
    }

    #[test]
    fn output_shape_law() {
        for (c, s, n, h) in [(1, 2, 1, 5), (3, 2, 5, 9), (2, 4, 7, 7)] {
            let img = random(sh(2, c, h, h), 1);
            let cfg = ConvConfig::new(c, s, n).unwrap();
            let bank = KernelBank::<f64>::zeros(cfg, KernelLayout::Cov);
            let out = conv_over_volume(&img, &bank).unwrap();
            assert_eq!(out.shape(), sh(2, s, h - n + 1, h - n + 1));
        }
    }

    #[test]
    fn backward_matches_inner_product_identity() {
        let img = random(sh(2, 2, 6, 5), 10);
        let cfg = ConvConfig::new(2, 3, 3).unwrap();
        let bank = KernelBank::from_weights(cfg, KernelLayout::Cov, random(sh(3, 2, 3, 3), 11)).unwrap();
        let g = random(sh(2, 3, 4, 3), 12);
        let (gx, gw) = conv_over_volume_backward(&img, &bank, &g).unwrap();
        // Linear in the image: <conv(x), g> == <x, gx>.
        let y = conv_over_volume(&img, &bank).unwrap();
        assert!((y.dot(&g).unwrap() - img.dot(&gx).unwrap()).abs() < 1e-10);
        // Linear in the weights: <conv(w), g> == <w, gw>.
        assert!((y.dot(&g).unwrap() - bank.weights.dot(&gw).unwrap()).abs() < 1e-10);
    }

    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn bilinear(seed in 0u64..500, a in -2.0f64..2.0, b in -2.0f64..2.0) {
            let s = sh(1, 1, 7, 6);
            let (x, y) = (random(s, seed), random(s, seed + 1));
            let (k, m) = (random(sh(1, 1, 3, 3), seed + 2), random(sh(1, 1, 3, 3), seed + 3));
            let lhs = conv2d_valid(&x.scale(a).add(&y.scale(b)).unwrap(), &k).unwrap();
            let rhs = conv2d_valid(&x, &k).unwrap().scale(a).add(&conv2d_valid(&y, &k).unwrap().scale(b)).unwrap();
            prop_assert!(lhs.max_abs_diff(&rhs).unwrap() < 1e-10);
            let lhs = conv2d_valid(&x, &k.scale(a).add(&m.scale(b)).unwrap()).unwrap();
            let rhs = conv2d_valid(&x, &k).unwrap().scale(a).add(&conv2d_valid(&x, &m).unwrap().scale(b)).unwrap();
            prop_assert!(lhs.max_abs_diff(&rhs).unwrap() < 1e-10);
        }
    }
}
