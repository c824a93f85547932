//! Declarative model specs, shape validation, builders and parameter counts.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::conv::{weight_count_cic, weight_count_cov, ConvConfig, KernelBank, KernelLayout};
use crate::error::{Error, Result};
use crate::fd::{cic_factor, kaiming_init, ArtifactHandling, FdpLayer};
use crate::nn::layers::*;
use crate::nn::train::sample_seed;
use crate::nn::{Model, ParameterStore};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

fn one() -> usize {
    1
}

fn yes() -> bool {
    true
}

/// One entry of a [`ModelSpec`]. Serialized with a `kind` tag.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    /// Enters the frequency domain; `shift` applies the RFFT shift right away.
    Rfft {
        #[serde(default = "yes")]
        shift: bool,
    },
    Fdc {
        in_channels: usize,
        out_channels: usize,
        kernel_size: usize,
    },
    Fdp {
        target_height: usize,
        target_width: usize,
    },
    /// Leaves the frequency domain: unshift if needed, inverse transform,
    /// then crop `kernel_size - 1` artifact rows and columns. With
    /// `rescale`, amplitudes are multiplied by the pooled-to-original area
    /// ratio, undoing the growth caused by cropping spectra.
    IrfftWithArtifactRemoval {
        kernel_size: usize,
        #[serde(default = "yes")]
        rescale: bool,
    },
    FullFdc {
        in_channels: usize,
        out_channels: usize,
        kernel_size: usize,
        #[serde(default)]
        padding: usize,
        #[serde(default)]
        artifacts: ArtifactHandling,
    },
    SpatialConv {
        in_channels: usize,
        out_channels: usize,
        kernel_size: usize,
        #[serde(default)]
        padding: usize,
        #[serde(default = "yes")]
        bias: bool,
    },
    MaxPool,
    AvgPool,
    Relu,
    Flatten,
    Dense {
        in_features: usize,
        out_features: usize,
    },
}

impl LayerSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            LayerSpec::Rfft { .. } => "rfft",
            LayerSpec::Fdc { .. } => "fdc",
            LayerSpec::Fdp { .. } => "fdp",
            LayerSpec::IrfftWithArtifactRemoval { .. } => "irfft_with_artifact_removal",
            LayerSpec::FullFdc { .. } => "full_fdc",
            LayerSpec::SpatialConv { .. } => "spatial_conv",
            LayerSpec::MaxPool => "max_pool",
            LayerSpec::AvgPool => "avg_pool",
            LayerSpec::Relu => "relu",
            LayerSpec::Flatten => "flatten",
            LayerSpec::Dense { .. } => "dense",
        }
    }

    /// Domain transforms this layer performs per forward pass.
    pub fn domain_transforms(&self) -> usize {
        match self {
            LayerSpec::Rfft { .. } | LayerSpec::IrfftWithArtifactRemoval { .. } => 1,
            LayerSpec::FullFdc { .. } => 2,
            _ => 0,
        }
    }
}

/// Input extent of a model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputSpec {
    #[serde(default = "one")]
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub name: String,
    pub input: InputSpec,
    pub classes: usize,
    pub layers: Vec<LayerSpec>,
}

/// Per-sample data layout after a layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "domain", rename_all = "snake_case")]
pub enum StageShape {
    Spatial { channels: usize, height: usize, width: usize },
    /// `width` is the spatial-equivalent width of the reduced spectrum.
    Spectrum { channels: usize, height: usize, width: usize, shifted: bool },
    Features { count: usize },
}

impl StageShape {
    pub fn is_spatial(&self) -> bool {
        matches!(self, StageShape::Spatial { .. })
    }

    pub fn extent(&self) -> Option<(usize, usize)> {
        match *self {
            StageShape::Spatial { height, width, .. } | StageShape::Spectrum { height, width, .. } => Some((height, width)),
            StageShape::Features { .. } => None,
        }
    }
}

struct Checker<'a> {
    index: usize,
    kind: &'a str,
}

impl Checker<'_> {
    fn fail(&self, reason: impl Into<String>) -> Error {
        Error::Spec { layer: self.index, kind: self.kind.to_string(), reason: reason.into() }
    }

    fn ensure(&self, ok: bool, reason: impl FnOnce() -> String) -> Result<()> {
        if ok {
            Ok(())
        } else {
            Err(self.fail(reason()))
        }
    }

    fn conv(&self, c: usize, s: usize, n: usize) -> Result<ConvConfig> {
        ConvConfig::new(c, s, n).map_err(|e| self.fail(e.to_string()))
    }
}

impl ModelSpec {
    /// Shape after every layer, or the first failing layer.
    pub fn propagate(&self) -> Result<Vec<StageShape>> {
        let i = self.input;
        let entry = Checker { index: 0, kind: "input" };
        entry.ensure(i.channels > 0 && i.height > 0 && i.width > 0, || "input extents must be positive".into())?;
        entry.ensure(self.classes >= 2, || format!("need at least two classes, got {}", self.classes))?;
        let mut cur = StageShape::Spatial { channels: i.channels, height: i.height, width: i.width };
        let mut out = Vec::with_capacity(self.layers.len());
        for (index, layer) in self.layers.iter().enumerate() {
            let ck = Checker { index, kind: layer.kind() };
            cur = match (*layer, cur) {
                (LayerSpec::Rfft { shift }, StageShape::Spatial { channels, height, width }) => {
                    ck.ensure(!shift || height % 2 == 0, || format!("RFFT shift needs an even height, got {height}"))?;
                    StageShape::Spectrum { channels, height, width, shifted: shift }
                }
                (LayerSpec::Fdc { in_channels, out_channels, kernel_size }, StageShape::Spectrum { channels, height, width, shifted }) => {
                    ck.ensure(in_channels == channels, || format!("expects {in_channels} channels, receives {channels}"))?;
                    ck.conv(in_channels, out_channels, kernel_size)?;
                    cic_factor(in_channels, out_channels).map_err(|e| ck.fail(e.to_string()))?;
                    ck.ensure(kernel_size <= height && kernel_size <= width, || format!("{kernel_size}x{kernel_size} kernel exceeds {height}x{width}"))?;
                    StageShape::Spectrum { channels: out_channels, height, width, shifted }
                }
                (LayerSpec::Fdp { target_height, target_width }, StageShape::Spectrum { channels, height, width, shifted }) => {
                    ck.ensure(shifted, || "pooling needs a shifted spectrum".into())?;
                    FdpLayer::new(target_height, target_width).crop_plan(height, width).map_err(|e| ck.fail(e.to_string()))?;
                    StageShape::Spectrum { channels, height: target_height, width: target_width, shifted }
                }
                (LayerSpec::IrfftWithArtifactRemoval { kernel_size, .. }, StageShape::Spectrum { channels, height, width, shifted }) => {
                    ck.ensure(kernel_size >= 1, || "kernel size must be positive".into())?;
                    ck.ensure(!shifted || height % 2 == 0, || "cannot unshift an odd height".into())?;
                    ck.ensure(height >= kernel_size && width >= kernel_size, || format!("{height}x{width} too small to remove {} artifact pixels", kernel_size - 1))?;
                    StageShape::Spatial { channels, height: height + 1 - kernel_size, width: width + 1 - kernel_size }
                }
                (LayerSpec::FullFdc { in_channels, out_channels, kernel_size, padding, artifacts }, StageShape::Spatial { channels, height, width }) => {
                    ck.ensure(in_channels == channels, || format!("expects {in_channels} channels, receives {channels}"))?;
                    ck.conv(in_channels, out_channels, kernel_size)?;
                    cic_factor(in_channels, out_channels).map_err(|e| ck.fail(e.to_string()))?;
                    let (h, w) = (height + 2 * padding, width + 2 * padding);
                    ck.ensure(kernel_size <= h && kernel_size <= w, || format!("{kernel_size}x{kernel_size} kernel exceeds {h}x{w}"))?;
                    let (oh, ow) = match artifacts {
                        ArtifactHandling::Remove => (h + 1 - kernel_size, w + 1 - kernel_size),
                        ArtifactHandling::Distribute => (h, w),
                    };
                    StageShape::Spatial { channels: out_channels, height: oh, width: ow }
                }
                (LayerSpec::SpatialConv { in_channels, out_channels, kernel_size, padding, .. }, StageShape::Spatial { channels, height, width }) => {
                    ck.ensure(in_channels == channels, || format!("expects {in_channels} channels, receives {channels}"))?;
                    ck.conv(in_channels, out_channels, kernel_size)?;
                    let (h, w) = (height + 2 * padding, width + 2 * padding);
                    ck.ensure(kernel_size <= h && kernel_size <= w, || format!("{kernel_size}x{kernel_size} kernel exceeds {h}x{w}"))?;
                    StageShape::Spatial { channels: out_channels, height: h + 1 - kernel_size, width: w + 1 - kernel_size }
                }
                (LayerSpec::MaxPool | LayerSpec::AvgPool, StageShape::Spatial { channels, height, width }) => {
                    ck.ensure(height % 2 == 0 && width % 2 == 0, || format!("2x2 pooling needs even extents, got {height}x{width}"))?;
                    StageShape::Spatial { channels, height: height / 2, width: width / 2 }
                }
                (LayerSpec::Relu, s @ (StageShape::Spatial { .. } | StageShape::Features { .. })) => s,
                (LayerSpec::Flatten, StageShape::Spatial { channels, height, width }) => StageShape::Features { count: channels * height * width },
                (LayerSpec::Dense { in_features, out_features }, StageShape::Features { count }) => {
                    ck.ensure(in_features == count, || format!("expects {in_features} features, receives {count}"))?;
                    ck.ensure(out_features > 0, || "needs at least one output".into())?;
                    StageShape::Features { count: out_features }
                }
                (_, s) => {
                    let domain = match s {
                        StageShape::Spatial { .. } => "a spatial tensor",
                        StageShape::Spectrum { .. } => "a spectrum",
                        StageShape::Features { .. } => "flattened features",
                    };
                    return Err(ck.fail(format!("cannot be applied to {domain}")));
                }
            };
            out.push(cur);
        }
        let last = Checker { index: self.layers.len(), kind: "output" };
        last.ensure(cur == StageShape::Features { count: self.classes }, || format!("model ends in {cur:?}, expected {} logits", self.classes))?;
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        self.propagate().map(|_| ())
    }

    /// Domain transforms per forward pass.
    pub fn domain_transforms(&self) -> usize {
        self.layers.iter().map(LayerSpec::domain_transforms).sum()
    }

    pub fn count(&self, kind: &str) -> usize {
        self.layers.iter().filter(|l| l.kind() == kind).count()
    }
}

/// Weight and bias counts of one layer.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerParams {
    pub index: usize,
    pub kind: String,
    pub weights: usize,
    pub biases: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParameterCount {
    pub layers: Vec<LayerParams>,
    /// Weights of fdc, full_fdc and spatial_conv layers.
    pub conv_weights: usize,
    pub total: usize,
}

/// Counts parameters from the spec alone: COV layout for spatial convs,
/// CIC layout for frequency-domain ones.
pub fn count_parameters(spec: &ModelSpec) -> ParameterCount {
    let mut layers = Vec::new();
    for (index, l) in spec.layers.iter().enumerate() {
        let (weights, biases) = match *l {
            LayerSpec::Fdc { in_channels, out_channels, kernel_size } | LayerSpec::FullFdc { in_channels, out_channels, kernel_size, .. } => {
                let cfg = ConvConfig { in_channels, out_channels, kernel_size };
                (weight_count_cic(&cfg), 0)
            }
            LayerSpec::SpatialConv { in_channels, out_channels, kernel_size, bias, .. } => {
                let cfg = ConvConfig { in_channels, out_channels, kernel_size };
                (weight_count_cov(&cfg), if bias { out_channels } else { 0 })
            }
            LayerSpec::Dense { in_features, out_features } => (in_features * out_features, out_features),
            _ => continue,
        };
        layers.push(LayerParams { index, kind: l.kind().to_string(), weights, biases });
    }
    let conv_weights = layers.iter().filter(|p| p.kind != "dense").map(|p| p.weights).sum();
    let total = layers.iter().map(|p| p.weights + p.biases).sum();
    ParameterCount { layers, conv_weights, total }
}

fn normal_tensor<T: Scalar>(shape: Shape, std: f64, seed: u64) -> Tensor<T> {
    let normal = Normal::new(0.0, std).expect("finite std");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_, _, _, _| T::of(normal.sample(&mut rng)))
}

fn shape4(b: usize, c: usize, h: usize, w: usize) -> Shape {
    Shape { batch: b, channels: c, height: h, width: w }
}

/// Validates `spec` and allocates a model. Convolution kernels use Kaiming
/// initialization; dense weights `Normal(0, sqrt(2 / in))`; biases start at zero.
pub fn build<T: Scalar>(spec: &ModelSpec, seed: u64) -> Result<Model<T>> {
    let shapes = spec.propagate()?;
    let mut store = ParameterStore::new();
    let mut layers: Vec<Box<dyn Layer<T>>> = Vec::new();
    let mut before = StageShape::Spatial { channels: spec.input.channels, height: spec.input.height, width: spec.input.width };
    let mut origin = (spec.input.height, spec.input.width);
    for (index, (l, &after)) in spec.layers.iter().zip(&shapes).enumerate() {
        let pseed = |k: usize| sample_seed(seed, index, k);
        match *l {
            LayerSpec::Rfft { shift } => {
                origin = before.extent().expect("spatial input");
                layers.push(Box::new(Rfft));
                if shift {
                    layers.push(Box::new(RfftShift));
                }
            }
            LayerSpec::Fdc { in_channels, out_channels, kernel_size } => {
                let cfg = ConvConfig::new(in_channels, out_channels, kernel_size)?;
                let bank = kaiming_init(&KernelBank::<T>::zeros(cfg, KernelLayout::Cic), pseed(0));
                let id = store.add(format!("{index}.fdc.weight"), bank.weights);
                layers.push(Box::new(Fdc::new(cfg, id)?));
            }
            LayerSpec::Fdp { target_height, target_width } => {
                layers.push(Box::new(Fdp::new(FdpLayer::new(target_height, target_width))));
            }
            LayerSpec::IrfftWithArtifactRemoval { kernel_size, rescale } => {
                let StageShape::Spectrum { height, width, shifted, .. } = before else {
                    unreachable!("validated")
                };
                if shifted {
                    layers.push(Box::new(RfftShift));
                }
                let scale = if rescale { (height * width) as f64 / (origin.0 * origin.1) as f64 } else { 1.0 };
                layers.push(Box::new(Irfft { scale }));
                layers.push(Box::new(RemoveArtifacts { kernel_size }));
            }
            LayerSpec::FullFdc { in_channels, out_channels, kernel_size, padding, artifacts } => {
                let cfg = ConvConfig::new(in_channels, out_channels, kernel_size)?;
                let bank = kaiming_init(&KernelBank::<T>::zeros(cfg, KernelLayout::Cic), pseed(0));
                let id = store.add(format!("{index}.full_fdc.weight"), bank.weights);
                if padding > 0 {
                    layers.push(Box::new(ZeroPad { pad: padding }));
                }
                layers.push(Box::new(FullFdc::new(cfg, id, artifacts)?));
            }
            LayerSpec::SpatialConv { in_channels, out_channels, kernel_size, padding, bias } => {
                let cfg = ConvConfig::new(in_channels, out_channels, kernel_size)?;
                let bank = kaiming_init(&KernelBank::<T>::zeros(cfg, KernelLayout::Cov), pseed(0));
                let w = store.add(format!("{index}.conv.weight"), bank.weights);
                let b = bias.then(|| store.add(format!("{index}.conv.bias"), Tensor::zeros(shape4(1, 1, 1, out_channels))));
                if padding > 0 {
                    layers.push(Box::new(ZeroPad { pad: padding }));
                }
                layers.push(Box::new(Conv2d::new(cfg, w, b)));
            }
            LayerSpec::MaxPool => layers.push(Box::new(MaxPool2::default())),
            LayerSpec::AvgPool => layers.push(Box::new(AvgPool2::default())),
            LayerSpec::Relu => layers.push(Box::new(Relu::default())),
            LayerSpec::Flatten => layers.push(Box::new(Flatten::default())),
            LayerSpec::Dense { in_features, out_features } => {
                let w = store.add(
                    format!("{index}.dense.weight"),
                    normal_tensor(shape4(1, 1, out_features, in_features), (2.0 / in_features as f64).sqrt(), pseed(0)),
                );
                let b = store.add(format!("{index}.dense.bias"), Tensor::zeros(shape4(1, 1, 1, out_features)));
                layers.push(Box::new(Dense::new(w, b)));
            }
        }
        before = after;
    }
    Ok(Model::new(layers, store, spec.classes))
}

/// Channel plan and head of the FDCNN and its spatial twin.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FdcnnConfig {
    pub input: usize,
    /// `channels[0]` is the image channel count; one FDC per later entry.
    pub channels: Vec<usize>,
    pub kernel_size: usize,
    pub hidden: usize,
    pub classes: usize,
}

impl Default for FdcnnConfig {
    fn default() -> Self {
        FdcnnConfig { input: 64, channels: vec![1, 2, 4, 8, 16], kernel_size: 3, hidden: 32, classes: 2 }
    }
}

impl FdcnnConfig {
    fn final_extent(&self) -> usize {
        self.input >> (self.channels.len() - 1)
    }
}

/// rfft, shift, (FDC, halving FDP) per channel step, irfft with artifact
/// removal, a single ReLU, then two dense layers.
pub fn fdcnn_spec(cfg: &FdcnnConfig) -> ModelSpec {
    let mut layers = vec![LayerSpec::Rfft { shift: true }];
    let mut extent = cfg.input;
    for pair in cfg.channels.windows(2) {
        layers.push(LayerSpec::Fdc { in_channels: pair[0], out_channels: pair[1], kernel_size: cfg.kernel_size });
        extent /= 2;
        layers.push(LayerSpec::Fdp { target_height: extent, target_width: extent });
    }
    layers.push(LayerSpec::IrfftWithArtifactRemoval { kernel_size: cfg.kernel_size, rescale: true });
    layers.push(LayerSpec::Relu);
    layers.push(LayerSpec::Flatten);
    let side = cfg.final_extent().saturating_sub(cfg.kernel_size - 1);
    let features = cfg.channels.last().copied().unwrap_or(1) * side * side;
    layers.push(LayerSpec::Dense { in_features: features, out_features: cfg.hidden });
    layers.push(LayerSpec::Dense { in_features: cfg.hidden, out_features: cfg.classes });
    ModelSpec {
        name: "fdcnn".into(),
        input: InputSpec { channels: cfg.channels[0], height: cfg.input, width: cfg.input },
        classes: cfg.classes,
        layers,
    }
}

/// Same channel plan with spatial convolutions (zero padded to keep the
/// extent), 2x2 max pooling and a ReLU after every pooling layer.
/// Convolutions are bias-free like the FDC layers they mirror.
pub fn cnn_equivalent_spec(cfg: &FdcnnConfig) -> ModelSpec {
    let mut layers = Vec::new();
    for pair in cfg.channels.windows(2) {
        layers.push(LayerSpec::SpatialConv {
            in_channels: pair[0],
            out_channels: pair[1],
            kernel_size: cfg.kernel_size,
            padding: cfg.kernel_size / 2,
            bias: false,
        });
        layers.push(LayerSpec::MaxPool);
        layers.push(LayerSpec::Relu);
    }
    layers.push(LayerSpec::Flatten);
    let side = cfg.final_extent();
    let features = cfg.channels.last().copied().unwrap_or(1) * side * side;
    layers.push(LayerSpec::Dense { in_features: features, out_features: cfg.hidden });
    layers.push(LayerSpec::Dense { in_features: cfg.hidden, out_features: cfg.classes });
    ModelSpec {
        name: "cnn".into(),
        input: InputSpec { channels: cfg.channels[0], height: cfg.input, width: cfg.input },
        classes: cfg.classes,
        layers,
    }
}

pub fn build_fdcnn<T: Scalar>(cfg: &FdcnnConfig, seed: u64) -> Result<Model<T>> {
    build(&fdcnn_spec(cfg), seed)
}

pub fn build_cnn_equivalent<T: Scalar>(cfg: &FdcnnConfig, seed: u64) -> Result<Model<T>> {
    build(&cnn_equivalent_spec(cfg), seed)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VggVariant {
    Vgg16,
    #[serde(rename = "1fullfdc")]
    OneFullFdc,
    #[serde(rename = "3fullfdc")]
    ThreeFullFdc,
}

impl VggVariant {
    pub const ALL: [VggVariant; 3] = [VggVariant::Vgg16, VggVariant::OneFullFdc, VggVariant::ThreeFullFdc];

    pub fn name(self) -> &'static str {
        match self {
            VggVariant::Vgg16 => "vgg16",
            VggVariant::OneFullFdc => "1fullfdc",
            VggVariant::ThreeFullFdc => "3fullfdc",
        }
    }

    /// Block-4 convolutions replaced by Full FDC layers.
    fn replaced(self) -> usize {
        match self {
            VggVariant::Vgg16 => 0,
            VggVariant::OneFullFdc => 1,
            VggVariant::ThreeFullFdc => 3,
        }
    }
}

impl std::str::FromStr for VggVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vgg16" => Ok(VggVariant::Vgg16),
            "1fullfdc" => Ok(VggVariant::OneFullFdc),
            "3fullfdc" => Ok(VggVariant::ThreeFullFdc),
            other => Err(Error::InvalidArgument(format!("unknown VGG16 variant {other:?}; expected vgg16, 1fullfdc or 3fullfdc"))),
        }
    }
}

pub const VGG_MINI_DIVISOR: usize = 8;

/// VGG16 with 3x3 same-padded convolutions and a ReLU after each. The
/// variant swaps the first (or all three) block-4 convolutions for padded
/// Full FDC layers. `divisor` shrinks every channel and dense width.
pub fn vgg16_spec(variant: VggVariant, input: usize, divisor: usize, classes: usize) -> Result<ModelSpec> {
    let d = divisor.max(1);
    if [64, 128, 256, 512, 4096].iter().any(|w| w % d != 0) {
        return Err(Error::InvalidArgument(format!("divisor {d} does not divide the VGG16 widths")));
    }
    if !input.is_multiple_of(32) || input == 0 {
        return Err(Error::InvalidArgument(format!("VGG16 input must be a positive multiple of 32, got {input}")));
    }
    let blocks: [(usize, usize); 5] = [(64, 2), (128, 2), (256, 3), (512, 3), (512, 3)];
    let mut layers = Vec::new();
    let mut c = 1;
    for (bi, &(width, count)) in blocks.iter().enumerate() {
        let s = width / d;
        for li in 0..count {
            let conv = if bi == 3 && li < variant.replaced() {
                LayerSpec::FullFdc { in_channels: c, out_channels: s, kernel_size: 3, padding: 1, artifacts: ArtifactHandling::Remove }
            } else {
                LayerSpec::SpatialConv { in_channels: c, out_channels: s, kernel_size: 3, padding: 1, bias: true }
            };
            layers.push(conv);
            layers.push(LayerSpec::Relu);
            c = s;
        }
        layers.push(LayerSpec::MaxPool);
    }
    let side = input / 32;
    let hidden = 4096 / d;
    layers.push(LayerSpec::Flatten);
    layers.push(LayerSpec::Dense { in_features: c * side * side, out_features: hidden });
    layers.push(LayerSpec::Relu);
    layers.push(LayerSpec::Dense { in_features: hidden, out_features: hidden });
    layers.push(LayerSpec::Relu);
    layers.push(LayerSpec::Dense { in_features: hidden, out_features: classes });
    Ok(ModelSpec {
        name: if d == 1 { variant.name().into() } else { format!("{}-mini", variant.name()) },
        input: InputSpec { channels: 1, height: input, width: input },
        classes,
        layers,
    })
}

pub fn build_vgg16_variant<T: Scalar>(variant: VggVariant, input: usize, divisor: usize, seed: u64) -> Result<Model<T>> {
    build(&vgg16_spec(variant, input, divisor, 2)?, seed)
}

/// Indices of the convolution-like layers in block 4 of a VGG16 spec.
pub fn vgg_block4(spec: &ModelSpec) -> Vec<(usize, &LayerSpec)> {
    let mut pools = 0;
    let mut out = Vec::new();
    for (i, l) in spec.layers.iter().enumerate() {
        match l {
            LayerSpec::MaxPool => pools += 1,
            LayerSpec::SpatialConv { .. } | LayerSpec::FullFdc { .. } if pools == 3 => out.push((i, l)),
            _ => {}
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::RealTensor;

    #[test]
    fn fdcnn_default_shapes() {
        let spec = fdcnn_spec(&FdcnnConfig::default());
        let shapes = spec.propagate().unwrap();
        assert_eq!(spec.domain_transforms(), 2);
        assert_eq!(spec.count("relu"), 1);
        assert_eq!(spec.count("spatial_conv"), 0);
        let relu_at = spec.layers.iter().position(|l| *l == LayerSpec::Relu).unwrap();
        assert_eq!(spec.layers[relu_at - 1].kind(), "irfft_with_artifact_removal");
        assert_eq!(spec.layers[relu_at + 2].kind(), "dense");
        assert_eq!(shapes[shapes.len() - 4], StageShape::Spatial { channels: 16, height: 2, width: 2 });

        let mut model: Model<f64> = build(&spec, 1).unwrap();
        let x = RealTensor::zeros(Shape::new(3, 1, 64, 64).unwrap());
        let y = model.forward(&x).unwrap();
        assert_eq!(y.shape(), Shape::new(3, 2, 1, 1).unwrap());
        assert_eq!(model.transforms_last_forward(), 2);
    }

    #[test]
    fn cnn_equivalent_structure() {
        let cfg = FdcnnConfig::default();
        let spec = cnn_equivalent_spec(&cfg);
        spec.validate().unwrap();
        assert_eq!((spec.count("spatial_conv"), spec.count("max_pool"), spec.count("relu")), (4, 4, 4));
        assert_eq!(spec.count("fdc") + spec.count("fdp") + spec.count("full_fdc") + spec.count("rfft"), 0);
        // Spatial extents agree stage by stage with the FDCNN spectra.
        let f: Vec<_> = fdcnn_spec(&cfg).propagate().unwrap().iter().filter_map(|s| match s {
            StageShape::Spectrum { height, .. } => Some(*height),
            _ => None,
        }).collect();
        let c: Vec<_> = spec.propagate().unwrap().iter().zip(&spec.layers).filter(|(_, l)| **l == LayerSpec::MaxPool).map(|(s, _)| s.extent().unwrap().0).collect();
        assert_eq!(c, vec![32, 16, 8, 4]);
        assert!(c.iter().all(|h| f.contains(h)));
    }

    #[test]
    fn per_layer_weight_ratio() {
        let cfg = FdcnnConfig::default();
        let a = count_parameters(&cnn_equivalent_spec(&cfg));
        let b = count_parameters(&fdcnn_spec(&cfg));
        let ca: Vec<_> = a.layers.iter().filter(|p| p.kind != "dense").collect();
        let cb: Vec<_> = b.layers.iter().filter(|p| p.kind != "dense").collect();
        let mut product = 1;
        for ((x, y), c) in ca.iter().zip(&cb).zip(&cfg.channels) {
            assert_eq!(x.weights, c * y.weights);
            product *= x.weights / y.weights;
        }
        assert_eq!(product, 64);
        assert!(ca.iter().all(|p| p.biases == 0));
    }

    #[test]
    fn count_examples() {
        let spec = |l: LayerSpec| ModelSpec { name: "t".into(), input: InputSpec { channels: 8, height: 8, width: 8 }, classes: 2, layers: vec![l] };
        let cov = count_parameters(&spec(LayerSpec::SpatialConv { in_channels: 8, out_channels: 16, kernel_size: 3, padding: 0, bias: true }));
        assert_eq!((cov.layers[0].weights, cov.layers[0].biases), (1152, 16));
        let cic = count_parameters(&spec(LayerSpec::Fdc { in_channels: 8, out_channels: 16, kernel_size: 3 }));
        assert_eq!((cic.layers[0].weights, cic.layers[0].biases), (144, 0));
    }

    #[test]
    fn vgg_variants() {
        for v in VggVariant::ALL {
            let full = vgg16_spec(v, 224, 1, 2).unwrap();
            full.validate().unwrap();
            let b4 = vgg_block4(&full);
            assert_eq!(b4.len(), 3);
            let kinds: Vec<_> = b4.iter().map(|(_, l)| l.kind()).collect();
            let expect = match v {
                VggVariant::Vgg16 => ["spatial_conv"; 3],
                VggVariant::OneFullFdc => ["full_fdc", "spatial_conv", "spatial_conv"],
                VggVariant::ThreeFullFdc => ["full_fdc"; 3],
            };
            assert_eq!(kinds, expect);
            assert_eq!(full.count("full_fdc"), v.replaced());
            assert!(matches!(b4[0].1, LayerSpec::SpatialConv { in_channels: 256, out_channels: 512, .. } | LayerSpec::FullFdc { in_channels: 256, out_channels: 512, .. }));
            let mini = vgg16_spec(v, 64, VGG_MINI_DIVISOR, 2).unwrap();
            mini.validate().unwrap();
            assert_eq!(mini.count("full_fdc"), v.replaced());
        }
        let base = count_parameters(&vgg16_spec(VggVariant::Vgg16, 224, 1, 2).unwrap());
        let first = base.layers.iter().find(|p| p.index == vgg_block4(&vgg16_spec(VggVariant::Vgg16, 224, 1, 2).unwrap())[0].0).unwrap();
        assert_eq!((first.weights, first.biases), (1_179_648, 512));
        assert!("vgg19".parse::<VggVariant>().is_err());
    }

    #[test]
    fn invalid_specs_name_the_layer() {
        let mut spec = fdcnn_spec(&FdcnnConfig::default());
        spec.layers[1] = LayerSpec::Fdc { in_channels: 1, out_channels: 3, kernel_size: 3 };
        spec.layers[3] = LayerSpec::Fdc { in_channels: 3, out_channels: 4, kernel_size: 3 };
        match spec.validate() {
            Err(Error::Spec { layer, kind, reason }) => {
                assert_eq!((layer, kind.as_str()), (3, "fdc"));
                assert!(reason.contains("S mod C = 0"), "{reason}");
            }
            other => panic!("{other:?}"),
        }
        let mut spec = fdcnn_spec(&FdcnnConfig::default());
        spec.layers.remove(0);
        assert!(matches!(spec.validate(), Err(Error::Spec { layer: 0, .. })));
        let mut spec = fdcnn_spec(&FdcnnConfig::default());
        spec.layers.swap(0, 1);
        assert!(spec.validate().is_err());
    }
}
