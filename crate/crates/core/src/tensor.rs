//! Dense rank-4 tensors in `(batch, channel, row, column)` order.
//!
//! Storage is shared behind an [`Arc`] and addressed through an offset and
//! strides, so channel/batch slicing and rectangular crops are views that
//! never copy. Columns are always unit-stride, which lets every kernel in the
//! crate walk whole rows as slices.

use std::sync::Arc;

use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape_err, Error, Result};
use crate::scalar::{Element, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub batch: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape {
    pub fn new(batch: usize, channels: usize, height: usize, width: usize) -> Result<Self> {
        let shape = Shape {
            batch,
            channels,
            height,
            width,
        };
        if batch == 0 || channels == 0 || height == 0 || width == 0 {
            return Err(shape_err(format!("all extents must be >= 1, got {shape}")));
        }
        Ok(shape)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.batch * self.channels * self.height * self.width
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    pub fn with_channels(self, channels: usize) -> Self {
        Shape { channels, ..self }
    }

    pub fn with_spatial(self, height: usize, width: usize) -> Self {
        Shape {
            height,
            width,
            ..self
        }
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "({}, {}, {}, {})",
            self.batch, self.channels, self.height, self.width
        )
    }
}

#[derive(Clone, Debug)]
pub struct Tensor<E> {
    shape: Shape,
    data: Arc<Vec<E>>,
    offset: usize,
    /// Strides of the batch, channel and row axes. Column stride is 1.
    strides: [usize; 3],
}

/// Spatial-domain tensor.
pub type RealTensor<T> = Tensor<T>;

impl<E: Element> Tensor<E> {
    /// Builds a contiguous tensor, checking length and finiteness.
    pub fn from_vec(shape: Shape, data: Vec<E>) -> Result<Self> {
        Shape::new(shape.batch, shape.channels, shape.height, shape.width)?;
        if data.len() != shape.len() {
            return Err(shape_err(format!(
                "data length {} does not match shape {shape} ({} elements)",
                data.len(),
                shape.len()
            )));
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite_value()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self::from_parts(shape, data))
    }

    /// Contiguous construction without validation; callers guarantee the length.
    pub(crate) fn from_parts(shape: Shape, data: Vec<E>) -> Self {
        debug_assert_eq!(data.len(), shape.len());
        let strides = [
            shape.channels * shape.height * shape.width,
            shape.height * shape.width,
            shape.width,
        ];
        Tensor {
            shape,
            data: Arc::new(data),
            offset: 0,
            strides,
        }
    }

    pub fn zeros(shape: Shape) -> Self {
        Self::from_parts(shape, vec![E::default(); shape.len()])
    }

    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize, usize, usize) -> E) -> Self {
        let mut data = Vec::with_capacity(shape.len());
        for b in 0..shape.batch {
            for c in 0..shape.channels {
                for r in 0..shape.height {
                    for col in 0..shape.width {
                        data.push(f(b, c, r, col));
                    }
                }
            }
        }
        Self::from_parts(shape, data)
    }

    #[inline]
    pub fn shape(&self) -> Shape {
        self.shape
    }

    #[inline]
    fn row_start(&self, b: usize, c: usize, r: usize) -> usize {
        self.offset + b * self.strides[0] + c * self.strides[1] + r * self.strides[2]
    }

    #[inline]
    pub fn row(&self, b: usize, c: usize, r: usize) -> &[E] {
        let start = self.row_start(b, c, r);
        &self.data[start..start + self.shape.width]
    }

    #[inline]
    pub fn get(&self, b: usize, c: usize, r: usize, col: usize) -> E {
        self.data[self.row_start(b, c, r) + col]
    }

    pub fn is_contiguous(&self) -> bool {
        self.offset == 0
            && self.data.len() == self.shape.len()
            && self.strides[2] == self.shape.width
            && self.strides[1] == self.shape.plane_len()
            && self.strides[0] == self.shape.channels * self.shape.plane_len()
    }

    /// Row-major slice, available when the tensor is not a strided view.
    pub fn as_slice(&self) -> Option<&[E]> {
        self.is_contiguous().then(|| self.data.as_slice())
    }

    /// One `(batch, channel)` plane as a contiguous row-major slice, if the
    /// plane is not a cropped view.
    pub fn plane_slice(&self, b: usize, c: usize) -> Option<&[E]> {
        if self.strides[2] != self.shape.width {
            return None;
        }
        let start = self.row_start(b, c, 0);
        Some(&self.data[start..start + self.shape.plane_len()])
    }

    /// Copies one plane into `out` (length `height * width`).
    pub fn copy_plane_into(&self, b: usize, c: usize, out: &mut [E]) {
        let w = self.shape.width;
        for (r, dst) in out.chunks_exact_mut(w).enumerate() {
            dst.copy_from_slice(self.row(b, c, r));
        }
    }

    pub fn to_vec(&self) -> Vec<E> {
        if let Some(s) = self.as_slice() {
            return s.to_vec();
        }
        let mut out = Vec::with_capacity(self.shape.len());
        for b in 0..self.shape.batch {
            for c in 0..self.shape.channels {
                for r in 0..self.shape.height {
                    out.extend_from_slice(self.row(b, c, r));
                }
            }
        }
        out
    }

    /// Returns a contiguous tensor, sharing storage when already contiguous.
    pub fn contiguous(&self) -> Self {
        if self.is_contiguous() {
            self.clone()
        } else {
            Self::from_parts(self.shape, self.to_vec())
        }
    }

    pub fn into_vec(self) -> Vec<E> {
        if self.is_contiguous() {
            Arc::try_unwrap(self.data).unwrap_or_else(|shared| (*shared).clone())
        } else {
            self.to_vec()
        }
    }

    pub fn map<F: Element>(&self, mut f: impl FnMut(E) -> F) -> Tensor<F> {
        let mut out = Vec::with_capacity(self.shape.len());
        self.for_each_row(|row| out.extend(row.iter().map(|&v| f(v))));
        Tensor::from_parts(self.shape, out)
    }

    pub fn zip_map<F: Element, G: Element>(
        &self,
        other: &Tensor<F>,
        mut f: impl FnMut(E, F) -> G,
    ) -> Result<Tensor<G>> {
        if self.shape != other.shape {
            return Err(shape_err(format!(
                "elementwise operands differ: {} vs {}",
                self.shape, other.shape
            )));
        }
        let mut out = Vec::with_capacity(self.shape.len());
        let s = self.shape;
        for b in 0..s.batch {
            for c in 0..s.channels {
                for r in 0..s.height {
                    let (x, y) = (self.row(b, c, r), other.row(b, c, r));
                    out.extend(x.iter().zip(y).map(|(&p, &q)| f(p, q)));
                }
            }
        }
        Ok(Tensor::from_parts(s, out))
    }

    fn for_each_row(&self, mut f: impl FnMut(&[E])) {
        if let Some(s) = self.as_slice() {
            f(s);
            return;
        }
        for b in 0..self.shape.batch {
            for c in 0..self.shape.channels {
                for r in 0..self.shape.height {
                    f(self.row(b, c, r));
                }
            }
        }
    }

    /// View over channels `[start, start + count)`.
    pub fn channel_slice(&self, start: usize, count: usize) -> Result<Self> {
        if count == 0 || start + count > self.shape.channels {
            return Err(shape_err(format!(
                "channel range {start}..{} outside {} channels",
                start + count,
                self.shape.channels
            )));
        }
        let mut view = self.clone();
        view.offset += start * self.strides[1];
        view.shape.channels = count;
        Ok(view)
    }

    /// View over batch items `[start, start + count)`.
    pub fn batch_slice(&self, start: usize, count: usize) -> Result<Self> {
        if count == 0 || start + count > self.shape.batch {
            return Err(shape_err(format!(
                "batch range {start}..{} outside batch of {}",
                start + count,
                self.shape.batch
            )));
        }
        let mut view = self.clone();
        view.offset += start * self.strides[0];
        view.shape.batch = count;
        Ok(view)
    }

    /// Removes rows and columns from the borders. The result is a view; no
    /// values are copied, so the cost does not depend on the tensor size.
    pub fn crop_region(
        &self,
        rows_top: usize,
        rows_bottom: usize,
        cols_left: usize,
        cols_right: usize,
    ) -> Result<Self> {
        let s = self.shape;
        if rows_top + rows_bottom >= s.height || cols_left + cols_right >= s.width {
            return Err(shape_err(format!(
                "crop ({rows_top}, {rows_bottom}, {cols_left}, {cols_right}) removes a whole axis of {}x{}",
                s.height, s.width
            )));
        }
        let mut view = self.clone();
        view.offset += rows_top * self.strides[2] + cols_left;
        view.shape.height = s.height - rows_top - rows_bottom;
        view.shape.width = s.width - cols_left - cols_right;
        Ok(view)
    }

    /// Zero padding; the complement of [`crop_region`](Self::crop_region).
    pub fn zero_pad(&self, top: usize, bottom: usize, left: usize, right: usize) -> Self {
        let s = self.shape;
        let out_shape = s.with_spatial(s.height + top + bottom, s.width + left + right);
        let ow = out_shape.width;
        let mut out = vec![E::default(); out_shape.len()];
        let plane = out_shape.plane_len();
        for b in 0..s.batch {
            for c in 0..s.channels {
                let base = (b * s.channels + c) * plane;
                for r in 0..s.height {
                    let dst = base + (r + top) * ow + left;
                    out[dst..dst + s.width].copy_from_slice(self.row(b, c, r));
                }
            }
        }
        Self::from_parts(out_shape, out)
    }

    /// Concatenates along the channel axis in part order.
    pub fn concat_channels(parts: &[Self]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| invalid("concat_channels needs at least one part"))?;
        let s0 = first.shape;
        for (i, p) in parts.iter().enumerate() {
            let s = p.shape;
            if s.batch != s0.batch || s.height != s0.height || s.width != s0.width {
                return Err(shape_err(format!(
                    "part {i} has shape {s}, expected batch/height/width of {s0}"
                )));
            }
        }
        if parts.len() == 1 {
            return Ok(first.clone());
        }
        let channels = parts.iter().map(|p| p.shape.channels).sum();
        let out_shape = s0.with_channels(channels);
        let mut out = Vec::with_capacity(out_shape.len());
        for b in 0..s0.batch {
            for p in parts {
                for c in 0..p.shape.channels {
                    for r in 0..s0.height {
                        out.extend_from_slice(p.row(b, c, r));
                    }
                }
            }
        }
        Ok(Self::from_parts(out_shape, out))
    }

    /// Concatenates along the batch axis.
    pub fn concat_batch(parts: &[Self]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| invalid("concat_batch needs at least one part"))?;
        let s0 = first.shape;
        if let Some(p) = parts
            .iter()
            .find(|p| p.shape.with_spatial(s0.height, s0.width).with_channels(s0.channels) != p.shape)
        {
            return Err(shape_err(format!(
                "batch part {} does not match {s0}",
                p.shape
            )));
        }
        let batch = parts.iter().map(|p| p.shape.batch).sum();
        let mut out = Vec::with_capacity(batch * s0.channels * s0.plane_len());
        for p in parts {
            out.extend(p.to_vec());
        }
        Ok(Self::from_parts(
            Shape {
                batch,
                ..s0
            },
            out,
        ))
    }

    pub fn reshape(&self, shape: Shape) -> Result<Self> {
        if shape.len() != self.shape.len() {
            return Err(shape_err(format!(
                "cannot reshape {} into {shape}",
                self.shape
            )));
        }
        let data = self.contiguous().data;
        Ok(Tensor {
            shape,
            data,
            offset: 0,
            strides: [
                shape.channels * shape.plane_len(),
                shape.plane_len(),
                shape.width,
            ],
        })
    }
}

impl<T: Scalar> Tensor<T> {
    pub fn sum(&self) -> T {
        let mut acc = T::zero();
        self.for_each_row(|row| acc = row.iter().fold(acc, |a, &v| a + v));
        acc
    }

    pub fn max_abs(&self) -> T {
        let mut m = T::zero();
        self.for_each_row(|row| m = row.iter().fold(m, |a, &v| a.max(v.abs())));
        m
    }

    pub fn scale(&self, k: T) -> Self {
        self.map(|v| v * k)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a - b)
    }

    /// Elementwise product summed: `<self, other>`.
    pub fn dot(&self, other: &Self) -> Result<T> {
        Ok(self.zip_map(other, |a, b| a * b)?.sum())
    }

    /// Maximum absolute difference to `other`.
    pub fn max_abs_diff(&self, other: &Self) -> Result<T> {
        Ok(self.zip_map(other, |a, b| (a - b).abs())?.max_abs())
    }

    /// Maximum absolute difference divided by the larger of the two max-norms
    /// (or 1 when both are below 1).
    pub fn max_rel_diff(&self, other: &Self) -> Result<T> {
        let scale = self.max_abs().max(other.max_abs()).max(T::one());
        Ok(self.max_abs_diff(other)? / scale)
    }

    /// Reverses rows and columns of every plane.
    pub fn flip_spatial(&self) -> Self {
        let s = self.shape;
        Self::from_fn(s, |b, c, r, col| {
            self.get(b, c, s.height - 1 - r, s.width - 1 - col)
        })
    }
}

/// RFFT-domain tensor: the stored width is the Hermitian-reduced extent
/// `floor(spatial_width / 2) + 1`, and the spatial width is kept alongside so
/// the inverse transform is unambiguous.
#[derive(Clone, Debug)]
pub struct ComplexTensor<T> {
    values: Tensor<Complex<T>>,
    spatial_width: usize,
}

#[inline]
pub fn reduced_width(spatial_width: usize) -> usize {
    spatial_width / 2 + 1
}

impl<T: Scalar> ComplexTensor<T> {
    pub fn new(values: Tensor<Complex<T>>, spatial_width: usize) -> Result<Self> {
        let w = values.shape().width;
        if spatial_width == 0 || reduced_width(spatial_width) != w {
            return Err(shape_err(format!(
                "reduced width {w} is inconsistent with spatial width {spatial_width}"
            )));
        }
        Ok(ComplexTensor {
            values,
            spatial_width,
        })
    }

    pub(crate) fn from_parts(values: Tensor<Complex<T>>, spatial_width: usize) -> Self {
        debug_assert_eq!(reduced_width(spatial_width), values.shape().width);
        ComplexTensor {
            values,
            spatial_width,
        }
    }

    pub fn zeros(shape: Shape, spatial_width: usize) -> Result<Self> {
        Self::new(Tensor::zeros(shape), spatial_width)
    }

    /// Shape of the stored (reduced) layout.
    #[inline]
    pub fn shape(&self) -> Shape {
        self.values.shape()
    }

    #[inline]
    pub fn spatial_width(&self) -> usize {
        self.spatial_width
    }

    /// Shape of the spatial tensor this spectrum inverts to.
    pub fn spatial_shape(&self) -> Shape {
        self.shape().with_spatial(self.shape().height, self.spatial_width)
    }

    #[inline]
    pub fn values(&self) -> &Tensor<Complex<T>> {
        &self.values
    }

    pub fn into_values(self) -> Tensor<Complex<T>> {
        self.values
    }

    /// Pointwise complex product.
    pub fn hadamard(&self, other: &Self) -> Result<Self> {
        if self.spatial_width != other.spatial_width {
            return Err(shape_err(format!(
                "spectra originate from spatial widths {} and {}",
                self.spatial_width, other.spatial_width
            )));
        }
        Ok(Self::from_parts(
            self.values.zip_map(&other.values, |a, b| a * b)?,
            self.spatial_width,
        ))
    }

    pub fn conj(&self) -> Self {
        Self::from_parts(self.values.map(|v| v.conj()), self.spatial_width)
    }

    pub fn scale(&self, k: T) -> Self {
        Self::from_parts(self.values.map(|v| v * k), self.spatial_width)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        if self.spatial_width != other.spatial_width {
            return Err(shape_err("spectra with different spatial widths"));
        }
        Ok(Self::from_parts(
            self.values.zip_map(&other.values, |a, b| a + b)?,
            self.spatial_width,
        ))
    }

    pub fn concat_channels(parts: &[Self]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| invalid("concat_channels needs at least one part"))?;
        if let Some(p) = parts.iter().find(|p| p.spatial_width != first.spatial_width) {
            return Err(shape_err(format!(
                "spectra originate from spatial widths {} and {}",
                first.spatial_width, p.spatial_width
            )));
        }
        let values: Vec<_> = parts.iter().map(|p| p.values.clone()).collect();
        Ok(Self::from_parts(
            Tensor::concat_channels(&values)?,
            first.spatial_width,
        ))
    }

    pub fn channel_slice(&self, start: usize, count: usize) -> Result<Self> {
        Ok(Self::from_parts(
            self.values.channel_slice(start, count)?,
            self.spatial_width,
        ))
    }

    pub fn batch_slice(&self, start: usize, count: usize) -> Result<Self> {
        Ok(Self::from_parts(
            self.values.batch_slice(start, count)?,
            self.spatial_width,
        ))
    }

    /// Crops the stored layout; `spatial_width` is the width the cropped
    /// spectrum describes and must agree with the remaining column count.
    pub fn crop_region(
        &self,
        rows_top: usize,
        rows_bottom: usize,
        cols_left: usize,
        cols_right: usize,
        spatial_width: usize,
    ) -> Result<Self> {
        Self::new(
            self.values
                .crop_region(rows_top, rows_bottom, cols_left, cols_right)?,
            spatial_width,
        )
    }

    pub fn contiguous(&self) -> Self {
        Self::from_parts(self.values.contiguous(), self.spatial_width)
    }

    /// Maximum modulus of the elementwise difference.
    pub fn max_abs_diff(&self, other: &Self) -> Result<T> {
        let d = self.values.zip_map(&other.values, |a, b| (a - b).norm())?;
        Ok(d.max_abs())
    }

    /// Sum of squared moduli over the stored elements.
    pub fn energy(&self) -> T {
        self.values.map(|v| v.norm_sqr()).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn seq(shape: Shape) -> RealTensor<f64> {
        let mut k = 0.0;
        Tensor::from_fn(shape, |_, _, _, _| {
            k += 1.0;
            k
        })
    }

    fn cshape(c: usize, h: usize, w: usize) -> Shape {
        Shape::new(1, c, h, w).unwrap()
    }

    #[test]
    fn shape_rejects_zero_extent() {
        assert!(Shape::new(1, 0, 4, 4).is_err());
        assert_eq!(Shape::new(2, 3, 4, 5).unwrap().len(), 120);
    }

    #[test]
    fn from_vec_rejects_bad_length_and_nan() {
        let s = cshape(1, 2, 2);
        assert!(RealTensor::<f64>::from_vec(s, vec![0.0; 3]).is_err());
        assert!(matches!(
            RealTensor::<f64>::from_vec(s, vec![0.0, 1.0, f64::NAN, 0.0]),
            Err(Error::NonFinite { index: 2 })
        ));
    }

    #[test]
    fn hadamard_hand_product() {
        let s = cshape(1, 1, 1);
        let a = ComplexTensor::new(Tensor::from_vec(s, vec![Complex::new(1.0, 2.0)]).unwrap(), 1)
            .unwrap();
        let b = ComplexTensor::new(Tensor::from_vec(s, vec![Complex::new(3.0, -1.0)]).unwrap(), 1)
            .unwrap();
        let p = a.hadamard(&b).unwrap();
        assert_eq!(p.values().get(0, 0, 0, 0), Complex::new(5.0, 5.0));
    }

    #[test]
    fn hadamard_identity_and_zero() {
        let s = cshape(2, 4, 3);
        let b = ComplexTensor::new(
            Tensor::from_fn(s, |_, c, r, k| Complex::new(c as f64 + r as f64, k as f64 - 1.5)),
            4,
        )
        .unwrap();
        let ones = ComplexTensor::new(Tensor::from_fn(s, |_, _, _, _| Complex::new(1.0, 0.0)), 4)
            .unwrap();
        let zeros = ComplexTensor::<f64>::zeros(s, 4).unwrap();
        assert_eq!(ones.hadamard(&b).unwrap().values().to_vec(), b.values().to_vec());
        assert!(zeros
            .hadamard(&b)
            .unwrap()
            .values()
            .to_vec()
            .iter()
            .all(|v| *v == Complex::new(0.0, 0.0)));
    }

    #[test]
    fn hadamard_shape_mismatch() {
        let a = ComplexTensor::<f64>::zeros(cshape(1, 4, 3), 4).unwrap();
        let b = ComplexTensor::<f64>::zeros(cshape(1, 4, 3), 5).unwrap();
        let c = ComplexTensor::<f64>::zeros(cshape(2, 4, 3), 4).unwrap();
        assert!(a.hadamard(&b).is_err());
        assert!(a.hadamard(&c).is_err());
    }

    #[test]
    fn complex_tensor_requires_consistent_width() {
        assert!(ComplexTensor::<f64>::zeros(cshape(1, 4, 3), 6).is_err());
        assert!(ComplexTensor::<f64>::zeros(cshape(1, 4, 4), 6).is_ok());
        assert!(ComplexTensor::<f64>::zeros(cshape(1, 4, 4), 7).is_ok());
    }

    #[test]
    fn concat_two_single_channel() {
        let a = seq(cshape(1, 4, 4));
        let b = a.scale(-1.0);
        let c = Tensor::concat_channels(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(c.shape(), cshape(2, 4, 4));
        assert_eq!(c.channel_slice(0, 1).unwrap().to_vec(), a.to_vec());
        assert_eq!(c.channel_slice(1, 1).unwrap().to_vec(), b.to_vec());
    }

    #[test]
    fn concat_single_part_identity() {
        let a = seq(cshape(3, 2, 5));
        assert_eq!(Tensor::concat_channels(std::slice::from_ref(&a)).unwrap().to_vec(), a.to_vec());
    }

    #[test]
    fn concat_part_order_and_errors() {
        let a = seq(Shape::new(2, 2, 3, 3).unwrap());
        let b = seq(Shape::new(2, 4, 3, 3).unwrap()).scale(10.0);
        let c = Tensor::concat_channels(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(c.shape().channels, 6);
        for bi in 0..2 {
            for ch in 0..6 {
                for r in 0..3 {
                    let expect = if ch < 2 { a.row(bi, ch, r) } else { b.row(bi, ch - 2, r) };
                    assert_eq!(c.row(bi, ch, r), expect);
                }
            }
        }
        assert!(Tensor::<f64>::concat_channels(&[]).is_err());
        let d = seq(Shape::new(2, 1, 3, 4).unwrap());
        assert!(Tensor::concat_channels(&[a, d]).is_err());
    }

    #[test]
    fn crop_examples() {
        let t = seq(cshape(1, 6, 6));
        assert_eq!(t.crop_region(0, 0, 0, 0).unwrap().to_vec(), t.to_vec());
        let c = t.crop_region(2, 0, 2, 0).unwrap();
        assert_eq!(c.shape(), cshape(1, 4, 4));
        for r in 0..4 {
            for k in 0..4 {
                assert_eq!(c.get(0, 0, r, k), t.get(0, 0, r + 2, k + 2));
            }
        }
        let t = seq(cshape(1, 8, 5));
        let c = t.crop_region(2, 2, 0, 2).unwrap();
        assert_eq!((c.shape().height, c.shape().width), (4, 3));
        assert!(t.crop_region(4, 4, 0, 0).is_err());
        assert!(t.crop_region(0, 0, 5, 0).is_err());
    }

    #[test]
    fn crop_of_crop_and_reshape() {
        let t = seq(Shape::new(2, 3, 7, 6).unwrap());
        let c = t.crop_region(1, 2, 1, 1).unwrap().crop_region(1, 0, 0, 1).unwrap();
        assert_eq!(c.shape(), Shape::new(2, 3, 3, 3).unwrap());
        assert_eq!(c.get(1, 2, 0, 0), t.get(1, 2, 2, 1));
        let flat = c.reshape(Shape::new(2, 27, 1, 1).unwrap()).unwrap();
        assert_eq!(flat.to_vec(), c.to_vec());
    }

    #[test]
    fn batch_concat_round_trip() {
        let t = seq(Shape::new(3, 2, 2, 2).unwrap());
        let parts: Vec<_> = (0..3).map(|b| t.batch_slice(b, 1).unwrap()).collect();
        assert_eq!(Tensor::concat_batch(&parts).unwrap().to_vec(), t.to_vec());
    }

    fn arb_plane() -> impl Strategy<Value = (usize, usize, Vec<f64>)> {
        (1usize..6, 1usize..6).prop_flat_map(|(h, w)| {
            (Just(h), Just(w), prop::collection::vec(-10.0f64..10.0, 2 * h * w))
        })
    }

    proptest! {
        #[test]
        fn crop_pad_complement((h, w, v) in arb_plane(),
                               t in 0usize..3, b in 0usize..3, l in 0usize..3, r in 0usize..3) {
            let x = Tensor::from_vec(Shape::new(1, 2, h, w).unwrap(), v).unwrap();
            let padded = x.zero_pad(t, b, l, r);
            let back = padded.crop_region(t, b, l, r).unwrap();
            prop_assert_eq!(back.to_vec(), x.to_vec());
        }

        #[test]
        fn concat_then_slice_identity((h, w, v) in arb_plane(), split in 1usize..2) {
            let x = Tensor::from_vec(Shape::new(1, 2, h, w).unwrap(), v).unwrap();
            let a = x.channel_slice(0, split).unwrap();
            let b = x.channel_slice(split, 2 - split).unwrap();
            let joined = Tensor::concat_channels(&[a.clone(), b.clone()]).unwrap();
            prop_assert_eq!(joined.channel_slice(0, split).unwrap().to_vec(), a.to_vec());
            prop_assert_eq!(joined.channel_slice(split, 2 - split).unwrap().to_vec(), b.to_vec());
        }

        #[test]
        fn hadamard_commutative_associative(v in prop::collection::vec(-5.0f64..5.0, 36)) {
            let s = Shape::new(1, 1, 3, 2).unwrap();
            let mk = |o: usize| ComplexTensor::new(
                Tensor::from_fn(s, |_, _, r, c| Complex::new(v[o + r * 2 + c], v[o + 6 + r * 2 + c])), 2).unwrap();
            let (a, b, c) = (mk(0), mk(12), mk(24));
            let ab = a.hadamard(&b).unwrap();
            prop_assert!(ab.max_abs_diff(&b.hadamard(&a).unwrap()).unwrap() <= 1e-12);
            let l = ab.hadamard(&c).unwrap();
            let r = a.hadamard(&b.hadamard(&c).unwrap()).unwrap();
            let scale = l.values().map(|z| z.norm()).max_abs().max(1.0);
            prop_assert!(l.max_abs_diff(&r).unwrap() <= 1e-12 * scale);
        }
    }
}
