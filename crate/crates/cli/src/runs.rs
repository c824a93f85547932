//! Training and evaluation runs, saved models and run comparisons.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use fdcnn::arch::{build, cnn_equivalent_spec, count_parameters, fdcnn_spec, vgg16_spec, FdcnnConfig, ModelSpec, ParameterCount, VggVariant, VGG_MINI_DIVISOR};
use fdcnn::nn::{evaluate, train, Augment, EpochLoss, Metrics, Model, Samples, Standardizer, TrainConfig};
use fdcnn::{Shape, Tensor};
use fdcnn_data::{load_dataset, synth_dataset, Dataset, LoadOptions, PreprocessConfig, RandomAugment, Split, SplitFractions};

use crate::error::{CliError, Result};
use crate::stats::{wilcoxon_signed_rank, Wilcoxon};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Arch {
    #[serde(rename = "fdcnn")]
    Fdcnn,
    #[serde(rename = "cnn")]
    Cnn,
    #[serde(rename = "vgg16")]
    Vgg16,
    #[serde(rename = "vgg16-1fullfdc")]
    Vgg16OneFullFdc,
    #[serde(rename = "vgg16-3fullfdc")]
    Vgg16ThreeFullFdc,
}

impl Arch {
    pub const ALL: [Arch; 5] = [Arch::Fdcnn, Arch::Cnn, Arch::Vgg16, Arch::Vgg16OneFullFdc, Arch::Vgg16ThreeFullFdc];

    pub fn name(self) -> &'static str {
        match self {
            Arch::Fdcnn => "fdcnn",
            Arch::Cnn => "cnn",
            Arch::Vgg16 => "vgg16",
            Arch::Vgg16OneFullFdc => "vgg16-1fullfdc",
            Arch::Vgg16ThreeFullFdc => "vgg16-3fullfdc",
        }
    }

    /// `mini` divides every VGG16 width by [`VGG_MINI_DIVISOR`]; the FDCNN
    /// pair ignores it.
    pub fn spec(self, image_size: usize, mini: bool) -> Result<ModelSpec> {
        let divisor = if mini { VGG_MINI_DIVISOR } else { 1 };
        let fdcnn_cfg = || -> Result<FdcnnConfig> {
            let cfg = FdcnnConfig { input: image_size, ..FdcnnConfig::default() };
            let steps = cfg.channels.len() - 1;
            if !image_size.is_multiple_of(1 << steps) || (image_size >> steps) < cfg.kernel_size {
                return Err(CliError::Usage(format!("image size {image_size} must be a multiple of {} and leave at least {} pixels after pooling", 1 << steps, cfg.kernel_size)));
            }
            Ok(cfg)
        };
        Ok(match self {
            Arch::Fdcnn => fdcnn_spec(&fdcnn_cfg()?),
            Arch::Cnn => cnn_equivalent_spec(&fdcnn_cfg()?),
            Arch::Vgg16 => vgg16_spec(VggVariant::Vgg16, image_size, divisor, 2)?,
            Arch::Vgg16OneFullFdc => vgg16_spec(VggVariant::OneFullFdc, image_size, divisor, 2)?,
            Arch::Vgg16ThreeFullFdc => vgg16_spec(VggVariant::ThreeFullFdc, image_size, divisor, 2)?,
        })
    }
}

impl FromStr for Arch {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self> {
        Arch::ALL.into_iter().find(|a| a.name() == s).ok_or_else(|| {
            let names: Vec<_> = Arch::ALL.iter().map(|a| a.name()).collect();
            CliError::Usage(format!("unknown arch {s:?}; expected one of {{{}}}", names.join(", ")))
        })
    }
}

/// Where images come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSource {
    Synth {
        per_class: usize,
        seed: u64,
    },
    Dir {
        images: PathBuf,
        labels: PathBuf,
        seed: u64,
        threshold: f32,
        clip_limit: f32,
        grid: usize,
    },
}

impl DataSource {
    pub fn load(&self, image_size: usize) -> Result<Dataset> {
        match *self {
            DataSource::Synth { per_class, seed } => {
                if per_class == 0 {
                    return Err(CliError::Usage("synthetic dataset needs at least one image per class".into()));
                }
                Ok(synth_dataset(per_class, image_size, seed))
            }
            DataSource::Dir { ref images, ref labels, seed, threshold, clip_limit, grid } => {
                let opts = LoadOptions {
                    fractions: SplitFractions::default(),
                    seed,
                    preprocess: Some(PreprocessConfig { threshold, size: image_size, clip_limit, grid }),
                };
                Ok(load_dataset(images, labels, &opts)?)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataSummary {
    pub source: DataSource,
    pub image_size: usize,
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub arch: String,
    pub model: String,
    pub config: TrainConfig,
    pub data: DataSummary,
    pub epochs: Vec<EpochLoss>,
    pub metrics: Metrics,
    pub parameters: ParameterCount,
    /// Domain transforms in one forward pass.
    pub transforms: usize,
    pub train_seconds: f64,
    /// Peak resident set of the whole process, approximate.
    pub peak_memory_bytes: Option<u64>,
}

impl RunReport {
    /// Copy with the wall-clock and memory fields cleared.
    pub fn without_timing(&self) -> RunReport {
        RunReport { train_seconds: 0.0, peak_memory_bytes: None, ..self.clone() }
    }
}

/// `VmHWM` of this process in bytes.
pub fn peak_memory() -> Option<u64> {
    let status = std::fs::read_to_string("/proc/self/status").ok()?;
    let line = status.lines().find(|l| l.starts_with("VmHWM:"))?;
    let kb: u64 = line.split_whitespace().nth(1)?.parse().ok()?;
    Some(kb * 1024)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SavedParam {
    pub name: String,
    pub shape: Shape,
    pub values: Vec<f32>,
}

/// Everything needed to rebuild a trained model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub arch: String,
    pub spec: ModelSpec,
    pub data: DataSummary,
    pub standardizer: Standardizer,
    pub params: Vec<SavedParam>,
}

impl ModelFile {
    pub fn capture(arch: &str, spec: &ModelSpec, data: DataSummary, standardizer: Standardizer, model: &Model<f32>) -> Self {
        let params = model
            .store
            .iter()
            .map(|(_, p)| SavedParam { name: p.name.clone(), shape: p.value().shape(), values: p.value().to_vec() })
            .collect();
        ModelFile { arch: arch.into(), spec: spec.clone(), data, standardizer, params }
    }

    pub fn restore(&self) -> Result<Model<f32>> {
        let mut model: Model<f32> = build(&self.spec, 0)?;
        let ids: Vec<_> = model.store.iter().map(|(id, p)| (id, p.name.clone())).collect();
        if ids.len() != self.params.len() {
            return Err(CliError::Report(format!("model file has {} parameters, spec builds {}", self.params.len(), ids.len())));
        }
        for ((id, name), saved) in ids.into_iter().zip(&self.params) {
            if name != saved.name {
                return Err(CliError::Report(format!("parameter {name} stored as {}", saved.name)));
            }
            model.store.set(id, Tensor::from_vec(saved.shape, saved.values.clone())?)?;
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        read_json(path)
    }
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::format(path, e))?;
    std::fs::write(path, text + "\n").map_err(|e| CliError::io(path, e))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::format(path, e))
}

/// `epoch,train_loss,val_loss`; the last column is empty without a validation split.
pub fn loss_csv(epochs: &[EpochLoss]) -> String {
    let mut s = String::from("epoch,train_loss,val_loss\n");
    for e in epochs {
        let val = e.val_loss.map_or_else(String::new, |v| v.to_string());
        let _ = writeln!(s, "{},{},{}", e.epoch, e.train_loss, val);
    }
    s
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRequest {
    pub arch: String,
    pub spec: ModelSpec,
    pub data: DataSource,
    pub image_size: usize,
    pub config: TrainConfig,
    pub augment: bool,
}

struct Splits {
    train: Samples<f32>,
    val: Option<Samples<f32>>,
    test: Option<Samples<f32>>,
    standardizer: Standardizer,
    summary: DataSummary,
}

fn prepare(data: &DataSource, image_size: usize) -> Result<Splits> {
    let ds = data.load(image_size)?;
    let raw_train = ds.samples::<f32>(Split::Train)?;
    let standardizer = Standardizer::fit(&raw_train)?;
    let split = |s: Split| -> Result<Option<Samples<f32>>> {
        if ds.get(s).is_empty() {
            return Ok(None);
        }
        Ok(Some(standardizer.apply(&ds.samples::<f32>(s)?)?))
    };
    Ok(Splits {
        train: standardizer.apply(&raw_train)?,
        val: split(Split::Val)?,
        test: split(Split::Test)?,
        summary: DataSummary { source: data.clone(), image_size, train: ds.train.len(), val: ds.val.len(), test: ds.test.len() },
        standardizer,
    })
}

/// Trains `req.spec` on its data source and scores the test split.
pub fn run_training(req: &RunRequest) -> Result<(RunReport, ModelFile)> {
    if req.spec.input.height != req.image_size || req.spec.input.width != req.image_size {
        return Err(CliError::Usage(format!(
            "model expects {}x{} inputs, data is {}x{}",
            req.spec.input.height, req.spec.input.width, req.image_size, req.image_size
        )));
    }
    let splits = prepare(&req.data, req.image_size)?;
    let mut model: Model<f32> = build(&req.spec, req.config.seed)?;
    let augment = RandomAugment;
    let aug: Option<&dyn Augment<f32>> = if req.augment { Some(&augment) } else { None };
    let test = splits.test.as_ref().ok_or_else(|| CliError::Usage("test split is empty; use more images".into()))?;
    let start = Instant::now();
    let trained = train(&mut model, &splits.train, splits.val.as_ref(), &req.config, aug)?;
    let train_seconds = start.elapsed().as_secs_f64();
    let metrics = evaluate(&mut model, test)?;
    let report = RunReport {
        arch: req.arch.clone(),
        model: req.spec.name.clone(),
        config: req.config,
        data: splits.summary.clone(),
        epochs: trained.epochs,
        metrics,
        parameters: count_parameters(&req.spec),
        transforms: req.spec.domain_transforms(),
        train_seconds,
        peak_memory_bytes: peak_memory(),
    };
    let file = ModelFile::capture(&req.arch, &req.spec, splits.summary, splits.standardizer, &model);
    Ok((report, file))
}

/// Scores a saved model on one split of `data` (defaults to the data it was trained on).
pub fn run_eval(file: &ModelFile, data: Option<&DataSource>, split: Split) -> Result<Metrics> {
    let source = data.unwrap_or(&file.data.source);
    let ds = source.load(file.data.image_size)?;
    if ds.get(split).is_empty() {
        return Err(CliError::Usage(format!("{split:?} split is empty")));
    }
    let samples = file.standardizer.apply(&ds.samples::<f32>(split)?)?;
    let mut model = file.restore()?;
    Ok(evaluate(&mut model, &samples)?)
}

/// Paired test outcome; `note` explains a missing result.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairedTest {
    pub result: Option<Wilcoxon>,
    pub note: Option<String>,
}

impl PairedTest {
    fn run(a: &[f64], b: &[f64]) -> Self {
        match wilcoxon_signed_rank(a, b) {
            Ok(w) => PairedTest { result: Some(w), note: None },
            Err(e) => PairedTest { result: None, note: Some(e.to_string()) },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub a: String,
    pub b: String,
    pub pairs: usize,
    pub a_seconds: f64,
    pub b_seconds: f64,
    /// `100 (b - a) / b`: how much faster `a` trains.
    pub time_saving_pct: f64,
    pub a_conv_weights: usize,
    pub b_conv_weights: usize,
    /// `b / a` convolution weights.
    pub conv_weight_ratio: f64,
    /// Product over paired convolution layers of their `b / a` weight ratios,
    /// when both models have the same number of them.
    pub layer_ratio_product: Option<f64>,
    /// Mean `a - b` per metric.
    pub accuracy_delta: f64,
    pub precision_delta: Option<f64>,
    pub recall_delta: Option<f64>,
    pub auc_delta: Option<f64>,
    /// `100 (b - a) / b` of peak memory, when both sides report it.
    pub memory_saving_pct: Option<f64>,
    pub wilcoxon_accuracy: PairedTest,
    pub wilcoxon_auc: PairedTest,
    pub wilcoxon_seconds: PairedTest,
    pub warnings: Vec<String>,
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

fn mean_delta(a: &[RunReport], b: &[RunReport], f: impl Fn(&Metrics) -> Option<f64>) -> Option<f64> {
    let d: Option<Vec<f64>> = a.iter().zip(b).map(|(x, y)| Some(f(&x.metrics)? - f(&y.metrics)?)).collect();
    d.map(|d| mean(d.into_iter()))
}

fn saving(a: f64, b: f64) -> f64 {
    if b == 0.0 {
        0.0
    } else {
        100.0 * (b - a) / b
    }
}

fn layer_ratio_product(a: &ParameterCount, b: &ParameterCount) -> Option<f64> {
    let conv = |p: &ParameterCount| p.layers.iter().filter(|l| l.kind != "dense").map(|l| l.weights as f64).collect::<Vec<_>>();
    let (x, y) = (conv(a), conv(b));
    (x.len() == y.len() && !x.is_empty()).then(|| x.iter().zip(&y).map(|(p, q)| q / p).product())
}

/// Pairs `a[i]` with `b[i]`.
pub fn compare(a: &[RunReport], b: &[RunReport]) -> Result<Comparison> {
    if a.is_empty() || a.len() != b.len() {
        return Err(CliError::Report(format!("need equally many reports on both sides, got {} and {}", a.len(), b.len())));
    }
    let mut warnings = Vec::new();
    for (i, (x, y)) in a.iter().zip(b).enumerate() {
        if x.epochs.len() != y.epochs.len() || x.config.epochs != y.config.epochs {
            warnings.push(format!("pair {i}: epoch counts differ ({} vs {})", x.epochs.len(), y.epochs.len()));
        }
        if x.data != y.data {
            warnings.push(format!("pair {i}: different data"));
        }
        if x.config.seed != y.config.seed {
            warnings.push(format!("pair {i}: seeds differ ({} vs {})", x.config.seed, y.config.seed));
        }
    }
    let a_seconds = mean(a.iter().map(|r| r.train_seconds));
    let b_seconds = mean(b.iter().map(|r| r.train_seconds));
    let memory = |r: &[RunReport]| -> Option<f64> { r.iter().map(|x| x.peak_memory_bytes.map(|m| m as f64)).collect::<Option<Vec<_>>>().map(|v| mean(v.into_iter())) };
    let col = |r: &[RunReport], f: &dyn Fn(&RunReport) -> Option<f64>| -> Vec<f64> { r.iter().map(|x| f(x).unwrap_or(f64::NAN)).collect() };
    let (a_conv, b_conv) = (a[0].parameters.conv_weights, b[0].parameters.conv_weights);
    Ok(Comparison {
        a: a[0].arch.clone(),
        b: b[0].arch.clone(),
        pairs: a.len(),
        a_seconds,
        b_seconds,
        time_saving_pct: saving(a_seconds, b_seconds),
        a_conv_weights: a_conv,
        b_conv_weights: b_conv,
        conv_weight_ratio: if a_conv == 0 { f64::NAN } else { b_conv as f64 / a_conv as f64 },
        layer_ratio_product: layer_ratio_product(&a[0].parameters, &b[0].parameters),
        accuracy_delta: mean(a.iter().zip(b).map(|(x, y)| x.metrics.accuracy - y.metrics.accuracy)),
        precision_delta: mean_delta(a, b, |m| m.precision),
        recall_delta: mean_delta(a, b, |m| m.recall),
        auc_delta: mean_delta(a, b, |m| m.auc),
        memory_saving_pct: memory(a).zip(memory(b)).map(|(x, y)| saving(x, y)),
        wilcoxon_accuracy: PairedTest::run(&col(a, &|r| Some(r.metrics.accuracy)), &col(b, &|r| Some(r.metrics.accuracy))),
        wilcoxon_auc: PairedTest::run(&col(a, &|r| r.metrics.auc), &col(b, &|r| r.metrics.auc)),
        wilcoxon_seconds: PairedTest::run(&col(a, &|r| Some(r.train_seconds)), &col(b, &|r| Some(r.train_seconds))),
        warnings,
    })
}

fn opt(v: Option<f64>, scale: f64) -> String {
    v.map_or_else(|| "n/a".into(), |x| format!("{:+.2}", x * scale))
}

fn p(t: &PairedTest) -> String {
    match (&t.result, &t.note) {
        (Some(w), _) => format!("p = {:.4} (n = {}, {:?})", w.p_value, w.n, w.method).to_lowercase(),
        (None, Some(n)) => n.clone(),
        (None, None) => "n/a".into(),
    }
}

/// Plain-text table of a [`Comparison`].
pub fn render(c: &Comparison) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{} vs {} over {} pair(s)", c.a, c.b, c.pairs);
    let _ = writeln!(s, "  train seconds        {:.3} vs {:.3} ({:.2}% saved)", c.a_seconds, c.b_seconds, c.time_saving_pct);
    let _ = writeln!(s, "  conv weights         {} vs {} (ratio {:.3})", c.a_conv_weights, c.b_conv_weights, c.conv_weight_ratio);
    if let Some(r) = c.layer_ratio_product {
        let _ = writeln!(s, "  per-layer ratio product {r:.3}");
    }
    if let Some(m) = c.memory_saving_pct {
        let _ = writeln!(s, "  peak memory saved    {m:.2}% (approximate)");
    }
    let _ = writeln!(s, "  accuracy delta       {:+.2} points", c.accuracy_delta * 100.0);
    let _ = writeln!(s, "  precision delta      {}", opt(c.precision_delta, 100.0));
    let _ = writeln!(s, "  recall delta         {}", opt(c.recall_delta, 100.0));
    let _ = writeln!(s, "  auc delta            {}", opt(c.auc_delta, 1.0));
    let _ = writeln!(s, "  wilcoxon accuracy    {}", p(&c.wilcoxon_accuracy));
    let _ = writeln!(s, "  wilcoxon auc         {}", p(&c.wilcoxon_auc));
    let _ = writeln!(s, "  wilcoxon seconds     {}", p(&c.wilcoxon_seconds));
    for w in &c.warnings {
        let _ = writeln!(s, "  warning: {w}");
    }
    s
}

/// Trains both architectures once per seed on the same data and compares.
pub fn repro(a: &RunRequest, b: &RunRequest, seeds: &[u64], mut done: impl FnMut(&RunReport)) -> Result<(Vec<RunReport>, Vec<RunReport>, Comparison)> {
    let (mut ra, mut rb) = (Vec::new(), Vec::new());
    for &seed in seeds {
        for (req, out) in [(a, &mut ra), (b, &mut rb)] {
            let req = RunRequest { config: TrainConfig { seed, ..req.config }, ..req.clone() };
            let (report, _) = run_training(&req)?;
            done(&report);
            out.push(report);
        }
    }
    let cmp = compare(&ra, &rb)?;
    Ok((ra, rb, cmp))
}
