//! Two-dimensional real-to-complex transforms over the last two axes.
//!
//! Rows use a real-input FFT (keeping `floor(W/2)+1` bins), columns a complex
//! FFT of length `H`. The forward transform is unnormalized; the inverse
//! carries `1/(H*W)` so that `irfft2(rfft2(x)) == x` and the convolution
//! theorem needs no extra factor.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use num_complex::Complex;
use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};
use rustfft::{Fft, FftNum, FftPlanner};

use crate::error::{shape_err, Result};
use crate::scalar::Scalar;
use crate::tensor::{reduced_width, ComplexTensor, RealTensor, Shape, Tensor};

/// Transform plans for one `(height, width)` size.
pub struct Plan2d<T: FftNum> {
    pub height: usize,
    pub width: usize,
    row_forward: Arc<dyn RealToComplex<T>>,
    row_inverse: Arc<dyn ComplexToReal<T>>,
    col_forward: Arc<dyn Fft<T>>,
    col_inverse: Arc<dyn Fft<T>>,
}

struct Planners<T: FftNum> {
    real: RealFftPlanner<T>,
    complex: FftPlanner<T>,
    plans: HashMap<(usize, usize), Arc<Plan2d<T>>>,
}

/// Size-keyed cache of [`Plan2d`]s, safe for concurrent lookups.
pub struct FftPlanCache<T: FftNum> {
    inner: Mutex<Planners<T>>,
}

impl<T: FftNum> FftPlanCache<T> {
    pub fn new() -> Self {
        FftPlanCache {
            inner: Mutex::new(Planners {
                real: RealFftPlanner::new(),
                complex: FftPlanner::new(),
                plans: HashMap::new(),
            }),
        }
    }

    pub fn plan(&self, height: usize, width: usize) -> Arc<Plan2d<T>> {
        let mut guard = self.inner.lock().unwrap_or_else(|p| p.into_inner());
        let p = &mut *guard;
        if let Some(plan) = p.plans.get(&(height, width)) {
            return Arc::clone(plan);
        }
        let plan = Arc::new(Plan2d {
            height,
            width,
            row_forward: p.real.plan_fft_forward(width),
            row_inverse: p.real.plan_fft_inverse(width),
            col_forward: p.complex.plan_fft_forward(height),
            col_inverse: p.complex.plan_fft_inverse(height),
        });
        p.plans.insert((height, width), Arc::clone(&plan));
        plan
    }

    pub fn len(&self) -> usize {
        self.inner.lock().map(|p| p.plans.len()).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl<T: FftNum> Default for FftPlanCache<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Scratch buffers for transforming planes of one size.
pub(crate) struct Workspace<T: FftNum> {
    plan: Arc<Plan2d<T>>,
    row_real: Vec<T>,
    row_scratch_fwd: Vec<Complex<T>>,
    row_scratch_inv: Vec<Complex<T>>,
    transposed: Vec<Complex<T>>,
    col_scratch: Vec<Complex<T>>,
}

impl<T: Scalar> Workspace<T> {
    pub(crate) fn new(height: usize, width: usize) -> Self {
        let plan = T::plan_cache().plan(height, width);
        let wr = reduced_width(width);
        let col_scratch_len = plan
            .col_forward
            .get_inplace_scratch_len()
            .max(plan.col_inverse.get_inplace_scratch_len());
        Workspace {
            row_real: vec![T::zero(); width],
            row_scratch_fwd: plan.row_forward.make_scratch_vec(),
            row_scratch_inv: plan.row_inverse.make_scratch_vec(),
            transposed: vec![Complex::default(); wr * height],
            col_scratch: vec![Complex::default(); col_scratch_len],
            plan,
        }
    }

    /// Forward transform of one plane. Only the first `nonzero_rows` rows of
    /// the input are read; the remaining rows are taken as zero.
    pub(crate) fn forward_plane<'a>(
        &mut self,
        row: impl Fn(usize) -> &'a [T],
        nonzero_rows: usize,
        out: &mut [Complex<T>],
    ) {
        let (h, w) = (self.plan.height, self.plan.width);
        let wr = reduced_width(w);
        debug_assert_eq!(out.len(), h * wr);
        for r in 0..h {
            let dst = &mut out[r * wr..(r + 1) * wr];
            if r < nonzero_rows {
                self.row_real.copy_from_slice(row(r));
                self.plan
                    .row_forward
                    .process_with_scratch(&mut self.row_real, dst, &mut self.row_scratch_fwd)
                    .expect("buffer sizes come from the plan");
            } else {
                dst.fill(Complex::default());
            }
        }
        if h > 1 {
            transpose(out, &mut self.transposed, h, wr);
            self.plan
                .col_forward
                .process_with_scratch(&mut self.transposed, &mut self.col_scratch);
            transpose(&self.transposed, out, wr, h);
        }
    }

    /// Inverse transform of one reduced plane (`h * wr` values, consumed as
    /// scratch) into `out` (`h * w` reals), including the `1/(h*w)` factor.
    pub(crate) fn inverse_plane(&mut self, spectrum: &mut [Complex<T>], out: &mut [T]) {
        let (h, w) = (self.plan.height, self.plan.width);
        let wr = reduced_width(w);
        if h > 1 {
            transpose(spectrum, &mut self.transposed, h, wr);
            self.plan
                .col_inverse
                .process_with_scratch(&mut self.transposed, &mut self.col_scratch);
            transpose(&self.transposed, spectrum, wr, h);
        }
        let norm = T::one() / T::of((h * w) as f64);
        for r in 0..h {
            let src = &mut spectrum[r * wr..(r + 1) * wr];
            // Only the real part of the DC and Nyquist bins contributes to a
            // real signal.
            src[0].im = T::zero();
            if w % 2 == 0 {
                src[wr - 1].im = T::zero();
            }
            let dst = &mut out[r * w..(r + 1) * w];
            self.plan
                .row_inverse
                .process_with_scratch(src, dst, &mut self.row_scratch_inv)
                .expect("buffer sizes come from the plan");
            for v in dst.iter_mut() {
                *v = *v * norm;
            }
        }
    }
}

fn transpose<E: Copy>(src: &[E], dst: &mut [E], rows: usize, cols: usize) {
    const BLOCK: usize = 16;
    for rb in (0..rows).step_by(BLOCK) {
        for cb in (0..cols).step_by(BLOCK) {
            for r in rb..(rb + BLOCK).min(rows) {
                for c in cb..(cb + BLOCK).min(cols) {
                    dst[c * rows + r] = src[r * cols + c];
                }
            }
        }
    }
}

/// Real-to-complex 2-D FFT of every `(batch, channel)` plane.
pub fn rfft2<T: Scalar>(x: &RealTensor<T>) -> ComplexTensor<T> {
    let s = x.shape();
    rfft2_rows(x, s.height)
}

/// [`rfft2`] for inputs whose rows at and beyond `nonzero_rows` are known to
/// be zero, such as kernels padded at the top-left corner.
pub(crate) fn rfft2_rows<T: Scalar>(x: &RealTensor<T>, nonzero_rows: usize) -> ComplexTensor<T> {
    let s = x.shape();
    let wr = reduced_width(s.width);
    let out_shape = s.with_spatial(s.height, wr);
    let plane = s.height * wr;
    let mut out = vec![Complex::default(); out_shape.len()];
    let mut ws = Workspace::new(s.height, s.width);
    for (i, dst) in out.chunks_exact_mut(plane).enumerate() {
        let (b, c) = (i / s.channels, i % s.channels);
        ws.forward_plane(|r| x.row(b, c, r), nonzero_rows.min(s.height), dst);
    }
    ComplexTensor::from_parts(Tensor::from_parts(out_shape, out), s.width)
}

/// Inverse of [`rfft2`] using the recorded spatial width.
pub fn irfft2<T: Scalar>(x: &ComplexTensor<T>) -> RealTensor<T> {
    let s = x.shape();
    let w = x.spatial_width();
    let out_shape = s.with_spatial(s.height, w);
    let mut out = vec![T::zero(); out_shape.len()];
    let mut ws = Workspace::new(s.height, w);
    let mut buf = vec![Complex::default(); s.plane_len()];
    for (i, dst) in out.chunks_exact_mut(s.height * w).enumerate() {
        let (b, c) = (i / s.channels, i % s.channels);
        x.values().copy_plane_into(b, c, &mut buf);
        ws.inverse_plane(&mut buf, dst);
    }
    Tensor::from_parts(out_shape, out)
}

/// Swaps the top and bottom halves of every spectrum plane so that low
/// frequencies sit in the middle-left. An involution for even heights.
pub fn rfft_shift<T: Scalar>(x: &ComplexTensor<T>) -> Result<ComplexTensor<T>> {
    let s = x.shape();
    if !s.height.is_multiple_of(2) {
        return Err(shape_err(format!(
            "rfft_shift needs an even height, got {}",
            s.height
        )));
    }
    let half = s.height / 2;
    let v = x.values();
    let mut out = Vec::with_capacity(s.len());
    for b in 0..s.batch {
        for c in 0..s.channels {
            for r in (half..s.height).chain(0..half) {
                out.extend_from_slice(v.row(b, c, r));
            }
        }
    }
    Ok(ComplexTensor::from_parts(
        Tensor::from_parts(s, out),
        x.spatial_width(),
    ))
}

/// Places each kernel plane at the top-left corner of a zero image.
pub fn pad_kernel_to_image<T: Scalar>(
    k: &RealTensor<T>,
    image_height: usize,
    image_width: usize,
) -> Result<RealTensor<T>> {
    let s = k.shape();
    if s.height > image_height || s.width > image_width {
        return Err(shape_err(format!(
            "kernel {}x{} does not fit image {image_height}x{image_width}",
            s.height, s.width
        )));
    }
    Ok(k.zero_pad(0, image_height - s.height, 0, image_width - s.width))
}

/// Weight of a reduced-spectrum column in the full Hermitian grid: columns
/// other than DC and (even-width) Nyquist stand for themselves and their mirror.
#[inline]
pub(crate) fn hermitian_multiplicity(col: usize, spatial_width: usize) -> usize {
    if col == 0 || (spatial_width.is_multiple_of(2) && col == spatial_width / 2) {
        1
    } else {
        2
    }
}

/// Adjoint of [`rfft2`]: maps a gradient on the reduced spectrum (as
/// `dL/dRe + i dL/dIm`) to the gradient on the real input.
pub fn rfft2_adjoint<T: Scalar>(g: &ComplexTensor<T>) -> RealTensor<T> {
    let w = g.spatial_width();
    let s = g.shape();
    let hw = T::of((s.height * w) as f64);
    let half = T::of(0.5);
    let weighted = Tensor::from_fn(s, |b, c, r, col| {
        let v = g.values().get(b, c, r, col);
        if hermitian_multiplicity(col, w) == 2 {
            v * half * hw
        } else {
            v * hw
        }
    });
    irfft2(&ComplexTensor::from_parts(weighted, w))
}

/// Adjoint of [`irfft2`]: maps a gradient on the real output to the gradient
/// on the reduced spectrum.
pub fn irfft2_adjoint<T: Scalar>(g: &RealTensor<T>) -> ComplexTensor<T> {
    let w = g.shape().width;
    let hw = T::of((g.shape().height * w) as f64);
    let spec = rfft2(g);
    let s = spec.shape();
    let weighted = Tensor::from_fn(s, |b, c, r, col| {
        let m = T::of(hermitian_multiplicity(col, w) as f64);
        spec.values().get(b, c, r, col) * (m / hw)
    });
    ComplexTensor::from_parts(weighted, w)
}

/// Expands a reduced spectrum to the full `H x W` complex grid using
/// Hermitian symmetry. Test and diagnostics helper.
pub fn hermitian_expand<T: Scalar>(x: &ComplexTensor<T>) -> Tensor<Complex<T>> {
    let s = x.shape();
    let w = x.spatial_width();
    let h = s.height;
    let full = Shape { width: w, ..s };
    Tensor::from_fn(full, |b, c, r, col| {
        if col < s.width {
            x.values().get(b, c, r, col)
        } else {
            x.values().get(b, c, (h - r) % h, w - col).conj()
        }
    })
}
