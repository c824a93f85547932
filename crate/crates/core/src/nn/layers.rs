//! Layers of a sequential model and the free functions behind them.

use crate::conv::{conv_over_volume, conv_over_volume_backward, ConvConfig, KernelBank, KernelLayout};
use crate::error::{invalid, shape_err, Result};
use crate::fd::{
    fdc_backward, fdc_forward_cached, fdp_backward, fdp_forward, full_fdc_backward,
    full_fdc_forward_with, remove_artifacts, ArtifactHandling, FdcLayer, FdpLayer,
};
use crate::nn::params::{Gradients, ParamId, ParameterStore};
use crate::scalar::Scalar;
use crate::spectral::{irfft2, irfft2_adjoint, rfft2, rfft2_adjoint, rfft_shift};
use crate::tensor::{ComplexTensor, RealTensor, Shape, Tensor};

/// Data flowing between layers: spatial tensors or (possibly shifted) spectra.
#[derive(Clone, Debug)]
pub enum Activation<T: Scalar> {
    Real(RealTensor<T>),
    Spectrum { values: ComplexTensor<T>, shifted: bool },
}

impl<T: Scalar> Activation<T> {
    pub fn shape(&self) -> Shape {
        match self {
            Activation::Real(x) => x.shape(),
            Activation::Spectrum { values, .. } => values.shape(),
        }
    }

    pub fn into_real(self, layer: &str) -> Result<RealTensor<T>> {
        match self {
            Activation::Real(x) => Ok(x),
            Activation::Spectrum { .. } => Err(invalid(format!("{layer} expects a spatial input, got a spectrum"))),
        }
    }

    pub fn into_spectrum(self, layer: &str) -> Result<(ComplexTensor<T>, bool)> {
        match self {
            Activation::Spectrum { values, shifted } => Ok((values, shifted)),
            Activation::Real(_) => Err(invalid(format!("{layer} expects a spectrum, got a spatial input"))),
        }
    }
}

/// A differentiable stage. `forward` keeps whatever `backward` needs.
pub trait Layer<T: Scalar>: Send {
    fn kind(&self) -> &'static str;

    fn forward(&mut self, store: &ParameterStore<T>, input: Activation<T>) -> Result<Activation<T>>;

    /// Consumes the upstream gradient, accumulates parameter gradients and
    /// returns the gradient for the layer input.
    fn backward(
        &mut self,
        store: &ParameterStore<T>,
        grad: Activation<T>,
        grads: &mut Gradients<T>,
    ) -> Result<Activation<T>>;

    fn params(&self) -> Vec<ParamId> {
        Vec::new()
    }

    /// Spatial/frequency domain changes performed per forward pass.
    fn domain_transforms(&self) -> usize {
        0
    }
}

fn missing_forward(kind: &str) -> crate::Error {
    invalid(format!("{kind}: backward called before forward"))
}

pub fn relu<T: Scalar>(x: &RealTensor<T>) -> RealTensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

fn check_even(x: Shape, op: &str) -> Result<()> {
    if !x.height.is_multiple_of(2) || !x.width.is_multiple_of(2) {
        return Err(shape_err(format!("{op} needs even extents, got {}x{}", x.height, x.width)));
    }
    Ok(())
}

/// 2x2 max pooling with stride 2. Also returns the flat input index of each maximum.
pub fn max_pool2_indexed<T: Scalar>(x: &RealTensor<T>) -> Result<(RealTensor<T>, Vec<usize>)> {
    let s = x.shape();
    check_even(s, "max_pool2")?;
    let out_shape = s.with_spatial(s.height / 2, s.width / 2);
    let (oh, ow) = (out_shape.height, out_shape.width);
    let mut out = Vec::with_capacity(out_shape.len());
    let mut idx = Vec::with_capacity(out_shape.len());
    for b in 0..s.batch {
        for c in 0..s.channels {
            let base = (b * s.channels + c) * s.plane_len();
            for r in 0..oh {
                let top = x.row(b, c, 2 * r);
                let bottom = x.row(b, c, 2 * r + 1);
                for q in 0..ow {
                    let cands = [
                        (top[2 * q], 2 * r * s.width + 2 * q),
                        (top[2 * q + 1], 2 * r * s.width + 2 * q + 1),
                        (bottom[2 * q], (2 * r + 1) * s.width + 2 * q),
                        (bottom[2 * q + 1], (2 * r + 1) * s.width + 2 * q + 1),
                    ];
                    let best = cands.iter().skip(1).fold(cands[0], |a, &c| if c.0 > a.0 { c } else { a });
                    out.push(best.0);
                    idx.push(base + best.1);
                }
            }
        }
    }
    Ok((Tensor::from_parts(out_shape, out), idx))
}

pub fn max_pool2<T: Scalar>(x: &RealTensor<T>) -> Result<RealTensor<T>> {
    Ok(max_pool2_indexed(x)?.0)
}

/// 2x2 mean pooling with stride 2.
pub fn avg_pool2<T: Scalar>(x: &RealTensor<T>) -> Result<RealTensor<T>> {
    let s = x.shape();
    check_even(s, "avg_pool2")?;
    let out_shape = s.with_spatial(s.height / 2, s.width / 2);
    let quarter = T::of(0.25);
    let mut out = Vec::with_capacity(out_shape.len());
    for b in 0..s.batch {
        for c in 0..s.channels {
            for r in 0..out_shape.height {
                let top = x.row(b, c, 2 * r);
                let bottom = x.row(b, c, 2 * r + 1);
                for q in 0..out_shape.width {
                    out.push((top[2 * q] + top[2 * q + 1] + bottom[2 * q] + bottom[2 * q + 1]) * quarter);
                }
            }
        }
    }
    Ok(Tensor::from_parts(out_shape, out))
}

/// Affine map `y = W x + b` on `(B, F, 1, 1)` features with `W` of shape
/// `(1, 1, O, F)` and `b` of shape `(1, 1, 1, O)`.
pub fn fully_connected<T: Scalar>(x: &RealTensor<T>, w: &RealTensor<T>, b: &RealTensor<T>) -> Result<RealTensor<T>> {
    let s = x.shape();
    let features = s.channels * s.height * s.width;
    let (o, f) = (w.shape().height, w.shape().width);
    if f != features || b.shape().len() != o {
        return Err(shape_err(format!(
            "dense layer {f} -> {o} applied to {features} features (bias of {})",
            b.shape().len()
        )));
    }
    let xv = x.to_vec();
    let wv = w.to_vec();
    let bv = b.to_vec();
    let mut out = Vec::with_capacity(s.batch * o);
    for xb in xv.chunks_exact(f) {
        for (row, &bias) in wv.chunks_exact(f).zip(&bv) {
            out.push(row.iter().zip(xb).map(|(&a, &c)| a * c).sum::<T>() + bias);
        }
    }
    Ok(Tensor::from_parts(Shape { batch: s.batch, channels: o, height: 1, width: 1 }, out))
}

/// Spatial image to unshifted spectrum.
#[derive(Debug, Default)]
pub struct Rfft;

impl<T: Scalar> Layer<T> for Rfft {
    fn kind(&self) -> &'static str {
        "rfft"
    }

    fn forward(&mut self, _: &ParameterStore<T>, input: Activation<T>) -> Result<Activation<T>> {
        let x = input.into_real("rfft")?;
        Ok(Activation::Spectrum { values: rfft2(&x), shifted: false })
    }

    fn backward(&mut self, _: &ParameterStore<T>, grad: Activation<T>, _: &mut Gradients<T>) -> Result<Activation<T>> {
        let (g, _) = grad.into_spectrum("rfft")?;
        Ok(Activation::Real(rfft2_adjoint(&g)))
    }

    fn domain_transforms(&self) -> usize {
        1
    }
}

/// Toggles the RFFT shift; the same layer shifts and unshifts.
#[derive(Debug, Default)]
pub struct RfftShift;

impl<T: Scalar> Layer<T> for RfftShift {
    fn kind(&self) -> &'static str {
        "rfft_shift"
    }

    fn forward(&mut self, _: &ParameterStore<T>, input: Activation<T>) -> Result<Activation<T>> {
        let (x, shifted) = input.into_spectrum("rfft_shift")?;
        Ok(Activation::Spectrum { values: rfft_shift(&x)?, shifted: !shifted })
    }

    fn backward(&mut self, _: &ParameterStore<T>, grad: Activation<T>, _: &mut Gradients<T>) -> Result<Activation<T>> {
        let (g, shifted) = grad.into_spectrum("rfft_shift")?;
        Ok(Activation::Spectrum { values: rfft_shift(&g)?, shifted: !shifted })
    }
}

/// Inverse transform of an unshifted spectrum, times a constant amplitude scale.
#[derive(Debug)]
pub struct Irfft {
    pub scale: f64,
}

impl<T: Scalar> Layer<T> for Irfft {
    fn kind(&self) -> &'static str {
        "irfft"
    }

    fn forward(&mut self, _: &ParameterStore<T>, input: Activation<T>) -> Result<Activation<T>> {
        let (x, shifted) = input.into_spectrum("irfft")?;
        if shifted {
            return Err(invalid("irfft needs an unshifted spectrum"));
        }
        let y = irfft2(&x);
        Ok(Activation::Real(if self.scale == 1.0 { y } else { y.scale(T::of(self.scale)) }))
    }

    fn backward(&mut self, _: &ParameterStore<T>, grad: Activation<T>, _: &mut Gradients<T>) -> Result<Activation<T>> {
        let g = grad.into_real("irfft")?;
        let gx = irfft2_adjoint(&g);
        let gx = if self.scale == 1.0 { gx } else { gx.scale(T::of(self.scale)) };
        Ok(Activation::Spectrum { values: gx, shifted: false })
    }

    fn domain_transforms(&self) -> usize {
        1
    }
}

/// Crops the first `n - 1` rows and columns.
#[derive(Debug)]
pub struct RemoveArtifacts {
    pub kernel_size: usize,
}

impl<T: Scalar> Layer<T> for RemoveArtifacts {
    fn kind(&self) -> &'static str {
        "remove_artifacts"
    }

    fn forward(&mut self, _: &ParameterStore<T>, input: Activation<T>) -> Result<Activation<T>> {
        let x = input.into_real("remove_artifacts")?;
        Ok(Activation::Real(remove_artifacts(&x, self.kernel_size)?))
    }

    fn backward(&mut self, _: &ParameterStore<T>, grad: Activation<T>, _: &mut Gradients<T>) -> Result<Activation<T>> {
        let g = grad.into_real("remove_artifacts")?;
        let k = self.kernel_size - 1;
        Ok(Activation::Real(g.zero_pad(k, 0, k, 0)))
    }
}

/// Keeps an [`FdcLayer`]'s weights in step with the parameter store.
fn sync_fdc<T: Scalar>(layer: &mut FdcLayer<T>, synced: &mut Option<u64>, store: &ParameterStore<T>, id: ParamId) -> Result<()> {
    let v = store.version(id);
    if *synced != Some(v) {
        layer.set_weights(store.get(id).clone())?;
        *synced = Some(v);
    }
    Ok(())
}

/// Frequency-domain convolution on spectra.
#[derive(Debug)]
pub struct Fdc<T: Scalar> {
    pub weight: ParamId,
    layer: FdcLayer<T>,
    synced: Option<u64>,
    input: Option<ComplexTensor<T>>,
}

impl<T: Scalar> Fdc<T> {
    pub fn new(config: ConvConfig, weight: ParamId) -> Result<Self> {
        Ok(Fdc { weight, layer: FdcLayer::new(config)?, synced: None, input: None })
    }

    pub fn config(&self) -> ConvConfig {
        self.layer.config()
    }
}

impl<T: Scalar> Layer<T> for Fdc<T> {
    fn kind(&self) -> &'static str {
        "fdc"
    }

    fn forward(&mut self, store: &ParameterStore<T>, input: Activation<T>) -> Result<Activation<T>> {
        let (x, shifted) = input.into_spectrum("fdc")?;
        sync_fdc(&mut self.layer, &mut self.synced, store, self.weight)?;
        self.layer.set_shifted(shifted);
        let y = fdc_forward_cached(&self.layer, &x)?;
        self.input = Some(x);
        Ok(Activation::Spectrum { values: y, shifted })
    }

    fn backward(&mut self, store: &ParameterStore<T>, grad: Activation<T>, grads: &mut Gradients<T>) -> Result<Activation<T>> {
        let (g, shifted) = grad.into_spectrum("fdc")?;
        let x = self.input.take().ok_or_else(|| missing_forward("fdc"))?;
        sync_fdc(&mut self.layer, &mut self.synced, store, self.weight)?;
        let (gx, gw) = fdc_backward(&self.layer, &x, &g)?;
        grads.accumulate(self.weight, &gw)?;
        Ok(Activation::Spectrum { values: gx, shifted })
    }

    fn params(&self) -> Vec<ParamId> {
        vec![self.weight]
    }
}

/// Frequency domain pooling on shifted spectra.
#[derive(Debug)]
pub struct Fdp {
    pub pool: FdpLayer,
    input_dims: Option<(usize, usize)>,
}

impl Fdp {
    pub fn new(pool: FdpLayer) -> Self {
        Fdp { pool, input_dims: None }
    }
}

impl<T: Scalar> Layer<T> for Fdp {
    fn kind(&self) -> &'static str {
        "fdp"
    }

    fn forward(&mut self, _: &ParameterStore<T>, input: Activation<T>) -> Result<Activation<T>> {
        let (x, shifted) = input.into_spectrum("fdp")?;
        let y = fdp_forward(&self.pool, &x, shifted)?;
        self.input_dims = Some((x.shape().height, x.spatial_width()));
        Ok(Activation::Spectrum { values: y, shifted })
    }

    fn backward(&mut self, _: &ParameterStore<T>, grad: Activation<T>, _: &mut Gradients<T>) -> Result<Activation<T>> {
        let (g, shifted) = grad.into_spectrum("fdp")?;
        let (h, w) = self.input_dims.ok_or_else(|| missing_forward("fdp"))?;
        Ok(Activation::Spectrum { values: fdp_backward(&self.pool, &g, h, w)?, shifted })
    }
}

/// Spatial-in, spatial-out frequency-domain convolution.
#[derive(Debug)]
pub struct FullFdc<T: Scalar> {
    pub weight: ParamId,
    pub artifacts: ArtifactHandling,
    layer: FdcLayer<T>,
    synced: Option<u64>,
    input: Option<RealTensor<T>>,
}

impl<T: Scalar> FullFdc<T> {
    pub fn new(config: ConvConfig, weight: ParamId, artifacts: ArtifactHandling) -> Result<Self> {
        Ok(FullFdc { weight, artifacts, layer: FdcLayer::new(config)?, synced: None, input: None })
    }
}

impl<T: Scalar> Layer<T> for FullFdc<T> {
    fn kind(&self) -> &'static str {
        "full_fdc"
    }

    fn forward(&mut self, store: &ParameterStore<T>, input: Activation<T>) -> Result<Activation<T>> {
        let x = input.into_real("full_fdc")?;
        sync_fdc(&mut self.layer, &mut self.synced, store, self.weight)?;
        let y = full_fdc_forward_with(&self.layer, &x, self.artifacts)?;
        self.input = Some(x);
        Ok(Activation::Real(y))
    }

    fn backward(&mut self, store: &ParameterStore<T>, grad: Activation<T>, grads: &mut Gradients<T>) -> Result<Activation<T>> {
        let g = grad.into_real("full_fdc")?;
        let x = self.input.take().ok_or_else(|| missing_forward("full_fdc"))?;
        sync_fdc(&mut self.layer, &mut self.synced, store, self.weight)?;
        let (gx, gw) = full_fdc_backward(&self.layer, &x, &g, self.artifacts)?;
        grads.accumulate(self.weight, &gw)?;
        Ok(Activation::Real(gx))
    }

    fn params(&self) -> Vec<ParamId> {
        vec![self.weight]
    }

    fn domain_transforms(&self) -> usize {
        2
    }
}

/// Valid spatial convolution over volume, optionally with per-channel biases.
#[derive(Debug)]
pub struct Conv2d<T: Scalar> {
    pub config: ConvConfig,
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    input: Option<RealTensor<T>>,
}

impl<T: Scalar> Conv2d<T> {
    pub fn new(config: ConvConfig, weight: ParamId, bias: Option<ParamId>) -> Self {
        Conv2d { config, weight, bias, input: None }
    }

    fn bank(&self, store: &ParameterStore<T>) -> Result<KernelBank<T>> {
        KernelBank::from_weights(self.config, KernelLayout::Cov, store.get(self.weight).clone())
    }
}

impl<T: Scalar> Layer<T> for Conv2d<T> {
    fn kind(&self) -> &'static str {
        "spatial_conv"
    }

    fn forward(&mut self, store: &ParameterStore<T>, input: Activation<T>) -> Result<Activation<T>> {
        let x = input.into_real("spatial_conv")?;
        let mut y = conv_over_volume(&x, &self.bank(store)?)?;
        if let Some(b) = self.bias {
            let bias = store.get(b).to_vec();
            let s = y.shape();
            let mut v = y.into_vec();
            for (i, plane) in v.chunks_exact_mut(s.plane_len()).enumerate() {
                let bc = bias[i % s.channels];
                plane.iter_mut().for_each(|p| *p = *p + bc);
            }
            y = Tensor::from_parts(s, v);
        }
        self.input = Some(x);
        Ok(Activation::Real(y))
    }

    fn backward(&mut self, store: &ParameterStore<T>, grad: Activation<T>, grads: &mut Gradients<T>) -> Result<Activation<T>> {
        let g = grad.into_real("spatial_conv")?;
        let x = self.input.take().ok_or_else(|| missing_forward("spatial_conv"))?;
        let (gx, gw) = conv_over_volume_backward(&x, &self.bank(store)?, &g)?;
        grads.accumulate(self.weight, &gw)?;
        if let Some(b) = self.bias {
            let s = g.shape();
            let mut gb = vec![T::zero(); s.channels];
            let gv = g.to_vec();
            for (i, plane) in gv.chunks_exact(s.plane_len()).enumerate() {
                gb[i % s.channels] = gb[i % s.channels] + plane.iter().copied().sum::<T>();
            }
            grads.accumulate(b, &Tensor::from_parts(store.get(b).shape(), gb))?;
        }
        Ok(Activation::Real(gx))
    }

    fn params(&self) -> Vec<ParamId> {
        self.bias.into_iter().fold(vec![self.weight], |mut v, b| {
            v.push(b);
            v
        })
    }
}

/// Symmetric zero padding of `pad` pixels on every edge.
#[derive(Debug)]
pub struct ZeroPad {
    pub pad: usize,
}

impl<T: Scalar> Layer<T> for ZeroPad {
    fn kind(&self) -> &'static str {
        "zero_pad"
    }

    fn forward(&mut self, _: &ParameterStore<T>, input: Activation<T>) -> Result<Activation<T>> {
        let x = input.into_real("zero_pad")?;
        let p = self.pad;
        Ok(Activation::Real(x.zero_pad(p, p, p, p)))
    }

    fn backward(&mut self, _: &ParameterStore<T>, grad: Activation<T>, _: &mut Gradients<T>) -> Result<Activation<T>> {
        let g = grad.into_real("zero_pad")?;
        let p = self.pad;
        Ok(Activation::Real(g.crop_region(p, p, p, p)?))
    }
}

#[derive(Debug, Default)]
pub struct MaxPool2 {
    cache: Option<(Shape, Vec<usize>)>,
}

impl<T: Scalar> Layer<T> for MaxPool2 {
    fn kind(&self) -> &'static str {
        "max_pool"
    }

    fn forward(&mut self, _: &ParameterStore<T>, input: Activation<T>) -> Result<Activation<T>> {
        let x = input.into_real("max_pool")?;
        let (y, idx) = max_pool2_indexed(&x)?;
        self.cache = Some((x.shape(), idx));
        Ok(Activation::Real(y))
    }

    fn backward(&mut self, _: &ParameterStore<T>, grad: Activation<T>, _: &mut Gradients<T>) -> Result<Activation<T>> {
        let g = grad.into_real("max_pool")?;
        let (shape, idx) = self.cache.take().ok_or_else(|| missing_forward("max_pool"))?;
        let mut gx = vec![T::zero(); shape.len()];
        for (&i, v) in idx.iter().zip(g.to_vec()) {
            gx[i] = gx[i] + v;
        }
        Ok(Activation::Real(Tensor::from_parts(shape, gx)))
    }
}

#[derive(Debug, Default)]
pub struct AvgPool2 {
    input_shape: Option<Shape>,
}

impl<T: Scalar> Layer<T> for AvgPool2 {
    fn kind(&self) -> &'static str {
        "avg_pool"
    }

    fn forward(&mut self, _: &ParameterStore<T>, input: Activation<T>) -> Result<Activation<T>> {
        let x = input.into_real("avg_pool")?;
        self.input_shape = Some(x.shape());
        Ok(Activation::Real(avg_pool2(&x)?))
    }

    fn backward(&mut self, _: &ParameterStore<T>, grad: Activation<T>, _: &mut Gradients<T>) -> Result<Activation<T>> {
        let g = grad.into_real("avg_pool")?;
        let s = self.input_shape.take().ok_or_else(|| missing_forward("avg_pool"))?;
        let quarter = T::of(0.25);
        Ok(Activation::Real(Tensor::from_fn(s, |b, c, r, q| g.get(b, c, r / 2, q / 2) * quarter)))
    }
}

#[derive(Debug, Default)]
pub struct Relu {
    mask: Option<Vec<bool>>,
}

impl<T: Scalar> Layer<T> for Relu {
    fn kind(&self) -> &'static str {
        "relu"
    }

    fn forward(&mut self, _: &ParameterStore<T>, input: Activation<T>) -> Result<Activation<T>> {
        let x = input.into_real("relu")?;
        self.mask = Some(x.to_vec().iter().map(|&v| v > T::zero()).collect());
        Ok(Activation::Real(relu(&x)))
    }

    fn backward(&mut self, _: &ParameterStore<T>, grad: Activation<T>, _: &mut Gradients<T>) -> Result<Activation<T>> {
        let g = grad.into_real("relu")?;
        let mask = self.mask.take().ok_or_else(|| missing_forward("relu"))?;
        let s = g.shape();
        let v = g.to_vec().into_iter().zip(mask).map(|(v, m)| if m { v } else { T::zero() }).collect();
        Ok(Activation::Real(Tensor::from_parts(s, v)))
    }
}

/// `(B, C, H, W)` to `(B, C*H*W, 1, 1)`.
#[derive(Debug, Default)]
pub struct Flatten {
    input_shape: Option<Shape>,
}

impl<T: Scalar> Layer<T> for Flatten {
    fn kind(&self) -> &'static str {
        "flatten"
    }

    fn forward(&mut self, _: &ParameterStore<T>, input: Activation<T>) -> Result<Activation<T>> {
        let x = input.into_real("flatten")?;
        let s = x.shape();
        self.input_shape = Some(s);
        Ok(Activation::Real(x.reshape(Shape { batch: s.batch, channels: s.channels * s.height * s.width, height: 1, width: 1 })?))
    }

    fn backward(&mut self, _: &ParameterStore<T>, grad: Activation<T>, _: &mut Gradients<T>) -> Result<Activation<T>> {
        let g = grad.into_real("flatten")?;
        let s = self.input_shape.take().ok_or_else(|| missing_forward("flatten"))?;
        Ok(Activation::Real(g.reshape(s)?))
    }
}

/// Fully connected layer on flattened features.
#[derive(Debug)]
pub struct Dense<T: Scalar> {
    pub weight: ParamId,
    pub bias: ParamId,
    input: Option<RealTensor<T>>,
}

impl<T: Scalar> Dense<T> {
    pub fn new(weight: ParamId, bias: ParamId) -> Self {
        Dense { weight, bias, input: None }
    }
}

impl<T: Scalar> Layer<T> for Dense<T> {
    fn kind(&self) -> &'static str {
        "dense"
    }

    fn forward(&mut self, store: &ParameterStore<T>, input: Activation<T>) -> Result<Activation<T>> {
        let x = input.into_real("dense")?;
        let y = fully_connected(&x, store.get(self.weight), store.get(self.bias))?;
        self.input = Some(x);
        Ok(Activation::Real(y))
    }

    fn backward(&mut self, store: &ParameterStore<T>, grad: Activation<T>, grads: &mut Gradients<T>) -> Result<Activation<T>> {
        let g = grad.into_real("dense")?;
        let x = self.input.take().ok_or_else(|| missing_forward("dense"))?;
        let w = store.get(self.weight);
        let (o, f) = (w.shape().height, w.shape().width);
        let (wv, xv, gv) = (w.to_vec(), x.to_vec(), g.to_vec());
        let batch = x.shape().batch;
        if gv.len() != batch * o {
            return Err(shape_err(format!("dense upstream gradient has {} values, expected {}", gv.len(), batch * o)));
        }
        let mut gx = vec![T::zero(); batch * f];
        let mut gw = vec![T::zero(); o * f];
        let mut gb = vec![T::zero(); o];
        for b in 0..batch {
            let xb = &xv[b * f..(b + 1) * f];
            let gxb = &mut gx[b * f..(b + 1) * f];
            for j in 0..o {
                let gj = gv[b * o + j];
                gb[j] = gb[j] + gj;
                let wrow = &wv[j * f..(j + 1) * f];
                let gwrow = &mut gw[j * f..(j + 1) * f];
                for k in 0..f {
                    gxb[k] = gxb[k] + gj * wrow[k];
                    gwrow[k] = gwrow[k] + gj * xb[k];
                }
            }
        }
        grads.accumulate(self.weight, &Tensor::from_parts(w.shape(), gw))?;
        grads.accumulate(self.bias, &Tensor::from_parts(store.get(self.bias).shape(), gb))?;
        Ok(Activation::Real(Tensor::from_parts(x.shape(), gx)))
    }

    fn params(&self) -> Vec<ParamId> {
        vec![self.weight, self.bias]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn t(h: usize, w: usize, v: Vec<f64>) -> RealTensor<f64> {
        Tensor::from_vec(Shape::new(1, 1, h, w).unwrap(), v).unwrap()
    }

    #[test]
    fn relu_examples() {
        assert_eq!(relu(&t(1, 3, vec![-1.0, 0.0, 2.0])).to_vec(), vec![0.0, 0.0, 2.0]);
        assert!(relu(&t(1, 3, vec![-1.0, -0.5, -2.0])).to_vec().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn pooling_examples() {
        let x = t(2, 2, vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(max_pool2(&x).unwrap().to_vec(), vec![4.0]);
        assert_eq!(avg_pool2(&x).unwrap().to_vec(), vec![2.5]);
        let c = t(4, 6, vec![3.0; 24]);
        assert_eq!(max_pool2(&c).unwrap().to_vec(), vec![3.0; 6]);
        assert_eq!(avg_pool2(&c).unwrap().to_vec(), vec![3.0; 6]);
        assert!(max_pool2(&t(3, 2, vec![0.0; 6])).is_err());
        assert!(avg_pool2(&t(2, 3, vec![0.0; 6])).is_err());
    }

    #[test]
    fn pooling_matches_window_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Tensor::from_fn(Shape::new(2, 3, 8, 8).unwrap(), |_, _, _, _| rng.random_range(-1.0..1.0));
        let mx = max_pool2(&x).unwrap();
        let av = avg_pool2(&x).unwrap();
        for b in 0..2 {
            for c in 0..3 {
                for r in 0..4 {
                    for q in 0..4 {
                        let win: Vec<f64> = (0..4).map(|k| x.get(b, c, 2 * r + k / 2, 2 * q + k % 2)).collect();
                        let m = win.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                        assert_eq!(mx.get(b, c, r, q), m);
                        assert!((av.get(b, c, r, q) - win.iter().sum::<f64>() / 4.0).abs() < 1e-15);
                    }
                }
            }
        }
    }

    #[test]
    fn fully_connected_examples() {
        let x = Tensor::from_vec(Shape::new(2, 3, 1, 1).unwrap(), vec![1.0, -2.0, 3.0, 0.5, 0.0, 4.0]).unwrap();
        let eye = Tensor::from_fn(Shape::new(1, 1, 3, 3).unwrap(), |_, _, r, c| if r == c { 1.0 } else { 0.0 });
        let zb = Tensor::zeros(Shape::new(1, 1, 1, 3).unwrap());
        assert_eq!(fully_connected(&x, &eye, &zb).unwrap().to_vec(), x.to_vec());
        let zw = Tensor::zeros(Shape::new(1, 1, 2, 3).unwrap());
        let b = Tensor::from_vec(Shape::new(1, 1, 1, 2).unwrap(), vec![0.25, -7.0]).unwrap();
        assert_eq!(fully_connected(&x, &zw, &b).unwrap().to_vec(), vec![0.25, -7.0, 0.25, -7.0]);
        assert!(fully_connected(&x, &zw, &zb).is_err());
    }
}
