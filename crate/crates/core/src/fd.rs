//! Frequency-domain convolution and pooling layers.
//!
//! An FDC layer keeps `S` spatial `n x n` kernels (channel independent layout)
//! and convolves spectra produced by [`rfft2`] with a pointwise product. Input
//! channel `c` is multiplied with kernels `[c*J, (c+1)*J)` where `J = S / C`,
//! and the products are concatenated, never summed.
//!
//! Kernels are stored in correlation orientation, the same orientation as
//! [`conv2d_valid`](crate::conv::conv2d_valid). A pointwise product of spectra
//! is a circular *convolution*, so each kernel is flipped before it is padded
//! to the image size. With the flipped kernel at the top-left corner the
//! wrap-around artifacts land in the first `n - 1` rows and columns, and
//! cropping them leaves exactly the valid correlation.

use std::sync::{Arc, Mutex};

use num_complex::Complex;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::conv::{ConvConfig, KernelBank, KernelLayout};
use crate::error::{shape_err, Error, Result};
use crate::scalar::Scalar;
use crate::spectral::{
    irfft2, irfft2_adjoint, pad_kernel_to_image, rfft2, rfft2_adjoint, rfft2_rows, rfft_shift,
};
use crate::tensor::{reduced_width, ComplexTensor, RealTensor, Shape, Tensor};

/// Draws every weight from `Normal(0, sqrt(2 / fan_in))`, where fan-in is
/// `n*n` for CIC banks and `n*n*C` for COV banks. Deterministic in `seed`.
pub fn kaiming_init<T: Scalar>(bank: &KernelBank<T>, seed: u64) -> KernelBank<T> {
    let std = (2.0 / bank.fan_in() as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("finite positive std");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = bank.weights.shape();
    let data = (0..shape.len())
        .map(|_| T::of(normal.sample(&mut rng)))
        .collect();
    KernelBank {
        config: bank.config,
        layout: bank.layout,
        weights: Tensor::from_parts(shape, data),
    }
}

/// `J = S / C`, or an error naming the `S mod C = 0` constraint.
pub fn cic_factor(in_channels: usize, out_channels: usize) -> Result<usize> {
    if in_channels == 0 || !out_channels.is_multiple_of(in_channels) {
        return Err(Error::Constraint(format!(
            "channel independent convolution needs S mod C = 0, got S = {out_channels}, C = {in_channels}"
        )));
    }
    Ok(out_channels / in_channels)
}

/// Channel independent convolution of spectra.
///
/// `images` is `(B, C, h, w')`, `kernels_fd` is `(1, S, h, w')` and shared by
/// every batch item. Output channel `c*J + j` is `I_c * K_{c*J+j}`.
pub fn cic<T: Scalar>(images: &ComplexTensor<T>, kernels_fd: &ComplexTensor<T>) -> Result<ComplexTensor<T>> {
    Ok(cic_counted(images, kernels_fd)?.0)
}

/// [`cic`] that also returns the number of channel products per image (`S`).
pub fn cic_counted<T: Scalar>(
    images: &ComplexTensor<T>,
    kernels_fd: &ComplexTensor<T>,
) -> Result<(ComplexTensor<T>, usize)> {
    let si = images.shape();
    let sk = kernels_fd.shape();
    if sk.batch != 1 || si.height != sk.height || si.width != sk.width
        || images.spatial_width() != kernels_fd.spatial_width()
    {
        return Err(shape_err(format!(
            "images {si} and kernel spectra {sk} must share spatial extents (kernels with batch 1)"
        )));
    }
    let (c_in, s_out) = (si.channels, sk.channels);
    let j = cic_factor(c_in, s_out)?;
    let plane = si.plane_len();
    let out_shape = si.with_channels(s_out);
    let mut out = vec![Complex::default(); out_shape.len()];
    let kv = kernels_fd.values();
    let iv = images.values();
    out.par_chunks_mut(plane).enumerate().for_each(|(idx, dst)| {
        let (b, o) = (idx / s_out, idx % s_out);
        let c = o / j;
        for (r, dst_row) in dst.chunks_exact_mut(si.width).enumerate() {
            let a = iv.row(b, c, r);
            let k = kv.row(0, o, r);
            for ((d, &x), &y) in dst_row.iter_mut().zip(a).zip(k) {
                *d = x * y;
            }
        }
    });
    Ok((
        ComplexTensor::from_parts(Tensor::from_parts(out_shape, out), images.spatial_width()),
        s_out,
    ))
}

/// Gradients of [`cic`] with respect to the image spectra and the kernel
/// spectra. Gradients of complex values are `dL/dRe + i dL/dIm`.
pub fn cic_backward<T: Scalar>(
    images: &ComplexTensor<T>,
    kernels_fd: &ComplexTensor<T>,
    grad_out: &ComplexTensor<T>,
) -> Result<(ComplexTensor<T>, ComplexTensor<T>)> {
    let si = images.shape();
    let sk = kernels_fd.shape();
    let j = cic_factor(si.channels, sk.channels)?;
    if grad_out.shape() != si.with_channels(sk.channels) {
        return Err(shape_err(format!(
            "upstream gradient {} does not match cic output",
            grad_out.shape()
        )));
    }
    let (iv, kv, gv) = (images.values(), kernels_fd.values(), grad_out.values());
    let gi = Tensor::from_fn(si, |b, c, r, col| {
        (0..j).fold(Complex::default(), |acc, jj| {
            let o = c * j + jj;
            acc + gv.get(b, o, r, col) * kv.get(0, o, r, col).conj()
        })
    });
    let gk = Tensor::from_fn(sk, |_, o, r, col| {
        (0..si.batch).fold(Complex::default(), |acc, b| {
            acc + gv.get(b, o, r, col) * iv.get(b, o / j, r, col).conj()
        })
    });
    Ok((
        ComplexTensor::from_parts(gi, images.spatial_width()),
        ComplexTensor::from_parts(gk, kernels_fd.spatial_width()),
    ))
}

/// Removes the wrap-around region left by a top-left padded kernel: the
/// first `n - 1` rows and columns.
pub fn remove_artifacts<T: Scalar>(image: &RealTensor<T>, kernel_size: usize) -> Result<RealTensor<T>> {
    let cut = kernel_size.saturating_sub(1);
    let s = image.shape();
    if kernel_size == 0 || s.height <= cut || s.width <= cut {
        return Err(shape_err(format!(
            "cannot remove {cut} artifact rows/columns from {}x{}",
            s.height, s.width
        )));
    }
    image.crop_region(cut, 0, cut, 0)
}

/// What a Full FDC layer does with the circular artifact region.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArtifactHandling {
    /// Crop `n - 1` rows/columns from the top and left (valid output size).
    #[default]
    Remove,
    /// Roll by `(n - 1) / 2` so the artifact spreads over all edges; the
    /// output keeps the input size.
    Distribute,
}

struct KernelCache<T> {
    version: u64,
    height: usize,
    width: usize,
    spectra: Arc<ComplexTensor<T>>,
}

/// Frequency-domain convolution layer with `S` spatial kernels in CIC layout.
pub struct FdcLayer<T> {
    bank: KernelBank<T>,
    shifted: bool,
    version: u64,
    cache: Mutex<Option<KernelCache<T>>>,
}

impl<T: Scalar> Clone for FdcLayer<T> {
    fn clone(&self) -> Self {
        FdcLayer {
            bank: self.bank.clone(),
            shifted: self.shifted,
            version: self.version,
            cache: Mutex::new(None),
        }
    }
}

impl<T: Scalar> std::fmt::Debug for FdcLayer<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FdcLayer")
            .field("config", &self.bank.config)
            .field("shifted", &self.shifted)
            .field("version", &self.version)
            .finish()
    }
}

impl<T: Scalar> FdcLayer<T> {
    /// Zero kernels; see [`FdcLayer::kaiming`].
    pub fn new(config: ConvConfig) -> Result<Self> {
        cic_factor(config.in_channels, config.out_channels)?;
        Ok(Self::from_bank(KernelBank::zeros(config, KernelLayout::Cic)))
    }

    pub fn kaiming(config: ConvConfig, seed: u64) -> Result<Self> {
        let mut layer = Self::new(config)?;
        layer.bank = kaiming_init(&layer.bank, seed);
        Ok(layer)
    }

    pub fn from_bank(bank: KernelBank<T>) -> Self {
        FdcLayer {
            bank,
            shifted: false,
            version: 0,
            cache: Mutex::new(None),
        }
    }

    pub fn with_shifted(mut self, shifted: bool) -> Self {
        self.set_shifted(shifted);
        self
    }

    /// Whether the input spectra are RFFT-shifted. Kernel spectra are then
    /// shifted the same way, which leaves the pointwise product unchanged.
    pub fn shifted(&self) -> bool {
        self.shifted
    }

    pub fn set_shifted(&mut self, shifted: bool) {
        if shifted != self.shifted {
            self.shifted = shifted;
            *self.cache.get_mut().unwrap_or_else(|p| p.into_inner()) = None;
        }
    }

    pub fn config(&self) -> ConvConfig {
        self.bank.config
    }

    pub fn bank(&self) -> &KernelBank<T> {
        &self.bank
    }

    pub fn weights(&self) -> &RealTensor<T> {
        &self.bank.weights
    }

    /// Replaces the kernel weights and invalidates cached kernel spectra.
    pub fn set_weights(&mut self, weights: RealTensor<T>) -> Result<()> {
        self.bank = KernelBank::from_weights(self.bank.config, KernelLayout::Cic, weights)?;
        self.version += 1;
        *self.cache.get_mut().unwrap_or_else(|p| p.into_inner()) = None;
        Ok(())
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    /// Kernels flipped, padded to `height x width`, transformed and (when the
    /// layer is shifted) RFFT-shifted. Shape `(1, S, height, width/2 + 1)`.
    pub fn kernel_spectra(&self, height: usize, width: usize) -> Result<ComplexTensor<T>> {
        let n = self.bank.config.kernel_size;
        let w = &self.bank.weights;
        let s = w.shape();
        let kernels = w.reshape(Shape { batch: 1, channels: s.batch, height: n, width: n })?;
        let padded = pad_kernel_to_image(&kernels.flip_spatial(), height, width)?;
        let spectra = rfft2_rows(&padded, n);
        if self.shifted {
            rfft_shift(&spectra)
        } else {
            Ok(spectra)
        }
    }

    /// [`kernel_spectra`](Self::kernel_spectra), reused while the weights
    /// and the size are unchanged.
    pub fn cached_kernel_spectra(&self, height: usize, width: usize) -> Result<Arc<ComplexTensor<T>>> {
        let mut guard = self.cache.lock().unwrap_or_else(|p| p.into_inner());
        if let Some(c) = guard.as_ref() {
            if c.version == self.version && c.height == height && c.width == width {
                return Ok(Arc::clone(&c.spectra));
            }
        }
        let spectra = Arc::new(self.kernel_spectra(height, width)?);
        *guard = Some(KernelCache {
            version: self.version,
            height,
            width,
            spectra: Arc::clone(&spectra),
        });
        Ok(spectra)
    }

    /// Weight gradient from a gradient on the kernel spectra.
    pub fn kernel_spectra_backward(&self, grad_spectra: &ComplexTensor<T>) -> Result<RealTensor<T>> {
        let n = self.bank.config.kernel_size;
        let g = if self.shifted {
            rfft_shift(grad_spectra)?
        } else {
            grad_spectra.clone()
        };
        let padded = rfft2_adjoint(&g);
        let hw = padded.shape();
        let top_left = padded.crop_region(0, hw.height - n, 0, hw.width - n)?;
        top_left.flip_spatial().reshape(self.bank.weights.shape())
    }
}

fn check_input_channels<T: Scalar>(layer: &FdcLayer<T>, channels: usize) -> Result<()> {
    let cfg = layer.config();
    if channels != cfg.in_channels {
        return Err(shape_err(format!(
            "layer expects {} input channels, got {channels}",
            cfg.in_channels
        )));
    }
    cic_factor(channels, cfg.out_channels).map(|_| ())
}

/// FDC forward pass on spectra: pad kernels to the image size, transform
/// them, then apply [`cic`]. The kernels are transformed on every call.
pub fn fdc_forward<T: Scalar>(layer: &FdcLayer<T>, images: &ComplexTensor<T>) -> Result<ComplexTensor<T>> {
    check_input_channels(layer, images.shape().channels)?;
    let kernels = layer.kernel_spectra(images.shape().height, images.spatial_width())?;
    cic(images, &kernels)
}

/// [`fdc_forward`] using the layer's kernel-spectrum cache.
pub fn fdc_forward_cached<T: Scalar>(
    layer: &FdcLayer<T>,
    images: &ComplexTensor<T>,
) -> Result<ComplexTensor<T>> {
    check_input_channels(layer, images.shape().channels)?;
    let kernels = layer.cached_kernel_spectra(images.shape().height, images.spatial_width())?;
    cic(images, &kernels)
}

/// Returns `(input_gradient, weight_gradient)` for [`fdc_forward`].
pub fn fdc_backward<T: Scalar>(
    layer: &FdcLayer<T>,
    images: &ComplexTensor<T>,
    grad_out: &ComplexTensor<T>,
) -> Result<(ComplexTensor<T>, RealTensor<T>)> {
    check_input_channels(layer, images.shape().channels)?;
    let kernels = layer.cached_kernel_spectra(images.shape().height, images.spatial_width())?;
    let (gi, gk) = cic_backward(images, &kernels, grad_out)?;
    Ok((gi, layer.kernel_spectra_backward(&gk)?))
}

fn roll<T: Scalar>(x: &RealTensor<T>, dr: usize, dc: usize) -> RealTensor<T> {
    let s = x.shape();
    Tensor::from_fn(s, |b, c, r, col| {
        x.get(b, c, (r + dr) % s.height, (col + dc) % s.width)
    })
}

/// Full FDC: spatial input, RFFT, FDC, IRFFT, artifact removal. The output
/// has `C * J` channels and extent `N - n + 1`.
pub fn full_fdc_forward<T: Scalar>(layer: &FdcLayer<T>, images: &RealTensor<T>) -> Result<RealTensor<T>> {
    full_fdc_forward_with(layer, images, ArtifactHandling::Remove)
}

pub fn full_fdc_forward_with<T: Scalar>(
    layer: &FdcLayer<T>,
    images: &RealTensor<T>,
    artifacts: ArtifactHandling,
) -> Result<RealTensor<T>> {
    let n = layer.config().kernel_size;
    let s = images.shape();
    if s.height < n || s.width < n {
        return Err(shape_err(format!(
            "image {}x{} is smaller than the {n}x{n} kernel",
            s.height, s.width
        )));
    }
    if layer.shifted {
        return Err(Error::InvalidArgument(
            "a Full FDC layer transforms its own input and must not be marked shifted".into(),
        ));
    }
    check_input_channels(layer, s.channels)?;
    let spectra = rfft2(images);
    let kernels = layer.cached_kernel_spectra(s.height, s.width)?;
    let product = cic(&spectra, &kernels)?;
    drop(spectra);
    let spatial = irfft2(&product);
    drop(product);
    match artifacts {
        ArtifactHandling::Remove => remove_artifacts(&spatial, n),
        ArtifactHandling::Distribute => Ok(roll(&spatial, (n - 1) / 2, (n - 1) / 2)),
    }
}

/// Returns `(input_gradient, weight_gradient)` for [`full_fdc_forward_with`].
pub fn full_fdc_backward<T: Scalar>(
    layer: &FdcLayer<T>,
    images: &RealTensor<T>,
    grad_out: &RealTensor<T>,
    artifacts: ArtifactHandling,
) -> Result<(RealTensor<T>, RealTensor<T>)> {
    let n = layer.config().kernel_size;
    let s = images.shape();
    let g_spatial = match artifacts {
        ArtifactHandling::Remove => {
            let expect = s.with_channels(layer.config().out_channels)
                .with_spatial(s.height + 1 - n, s.width + 1 - n);
            if grad_out.shape() != expect {
                return Err(shape_err(format!(
                    "upstream gradient {} does not match Full FDC output {expect}",
                    grad_out.shape()
                )));
            }
            grad_out.zero_pad(n - 1, 0, n - 1, 0)
        }
        ArtifactHandling::Distribute => {
            let h = (n - 1) / 2;
            roll(grad_out, s.height - h % s.height, s.width - h % s.width)
        }
    };
    let g_product = irfft2_adjoint(&g_spatial);
    let spectra = rfft2(images);
    let (g_spectra, g_w) = fdc_backward(layer, &spectra, &g_product)?;
    Ok((rfft2_adjoint(&g_spectra), g_w))
}

/// Frequency domain pooling: a rectangular hard crop of shifted spectra.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FdpLayer {
    /// Spatial-equivalent height of the pooled spectrum.
    pub target_height: usize,
    /// Spatial-equivalent width; the pooled spectrum keeps `target_width/2 + 1` columns.
    pub target_width: usize,
}

impl FdpLayer {
    pub fn new(target_height: usize, target_width: usize) -> Self {
        FdpLayer {
            target_height,
            target_width,
        }
    }

    /// Halves both spatial extents.
    pub fn halving(height: usize, width: usize) -> Self {
        Self::new(height / 2, width / 2)
    }

    /// `(rows removed at top and at bottom, columns removed at the right)` for
    /// an input of `height` rows and spatial width `spatial_width`.
    pub fn crop_plan(&self, height: usize, spatial_width: usize) -> Result<(usize, usize)> {
        let (th, tw) = (self.target_height, self.target_width);
        if th == 0 || tw == 0 || th >= height || tw >= spatial_width {
            return Err(shape_err(format!(
                "pooling target {th}x{tw} must be non-empty and smaller than {height}x{spatial_width}"
            )));
        }
        if !height.is_multiple_of(2) || th % 2 != 0 {
            return Err(shape_err(format!(
                "rows cannot be removed symmetrically from height {height} to {th}; both must be even"
            )));
        }
        let rows = (height - th) / 2;
        let cols = reduced_width(spatial_width) - reduced_width(tw);
        Ok((rows, cols))
    }
}

/// Crops a shifted spectrum: the same number of rows from top and bottom and
/// columns from the right. The result is a view, so the cost is independent
/// of the image size.
pub fn fdp_forward<T: Scalar>(
    layer: &FdpLayer,
    images: &ComplexTensor<T>,
    shifted: bool,
) -> Result<ComplexTensor<T>> {
    if !shifted {
        return Err(Error::InvalidArgument(
            "frequency domain pooling needs an RFFT-shifted spectrum".into(),
        ));
    }
    let (rows, cols) = layer.crop_plan(images.shape().height, images.spatial_width())?;
    images.crop_region(rows, rows, 0, cols, layer.target_width)
}

/// Adjoint of [`fdp_forward`]: zero-inserts the removed bins.
pub fn fdp_backward<T: Scalar>(
    layer: &FdpLayer,
    grad_out: &ComplexTensor<T>,
    input_height: usize,
    input_spatial_width: usize,
) -> Result<ComplexTensor<T>> {
    let (rows, cols) = layer.crop_plan(input_height, input_spatial_width)?;
    let padded = grad_out.values().zero_pad(rows, rows, 0, cols);
    ComplexTensor::new(padded, input_spatial_width)
}
