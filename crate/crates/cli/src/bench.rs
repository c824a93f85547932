//! Timing sweeps over convolution and pooling layers.

use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use fdcnn::conv::{conv_over_volume, ConvConfig, KernelBank, KernelLayout};
use fdcnn::fd::{fdc_forward, fdp_forward, full_fdc_forward, kaiming_init, FdcLayer, FdpLayer};
use fdcnn::nn::{avg_pool2, max_pool2};
use fdcnn::spectral::{rfft2, rfft_shift};
use fdcnn::{RealTensor, Shape, Tensor};

use crate::error::{CliError, Result};

pub const CHANNEL_GRID: [(usize, usize); 8] = [(2, 4), (4, 8), (8, 16), (16, 32), (32, 64), (64, 128), (128, 256), (256, 512)];
pub const KERNEL_GRID: [usize; 5] = [3, 5, 7, 9, 11];
pub const SIZE_GRID: [usize; 5] = [64, 128, 256, 512, 1024];

pub const CSV_HEADER: [&str; 6] = ["layer", "cin", "cout", "kernel", "size", "seconds"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchOptions {
    pub warmup: usize,
    pub repeats: usize,
    /// Calls shorter than this are batched so one repeat lasts at least this long.
    pub min_repeat_seconds: f64,
    /// Grid points whose estimated footprint exceeds this are skipped.
    pub memory_budget: Option<u64>,
    pub seed: u64,
    /// Passes over the whole grid; each row keeps the median of its per-pass medians.
    pub rounds: usize,
}

impl Default for BenchOptions {
    fn default() -> Self {
        BenchOptions { warmup: 2, repeats: 5, min_repeat_seconds: 2e-3, memory_budget: available_memory().map(|m| m / 10 * 8), seed: 0, rounds: 1 }
    }
}

impl BenchOptions {
    pub fn validate(&self) -> Result<()> {
        if self.repeats < 5 {
            return Err(CliError::Usage(format!("at least 5 repeats are required, got {}", self.repeats)));
        }
        if self.rounds == 0 {
            return Err(CliError::Usage("at least one round is required".into()));
        }
        if !(self.min_repeat_seconds >= 0.0) {
            return Err(CliError::Usage("min repeat time must be non-negative".into()));
        }
        Ok(())
    }
}

/// `MemAvailable` from `/proc/meminfo`, in bytes.
pub fn available_memory() -> Option<u64> {
    let info = std::fs::read_to_string("/proc/meminfo").ok()?;
    let line = info.lines().find(|l| l.starts_with("MemAvailable:"))?;
    let kb: u64 = line.split_whitespace().nth(1)?.parse().ok()?;
    Some(kb * 1024)
}

/// One timed layer at one grid point. `seconds` is `None` for skipped points.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRecord {
    pub layer: String,
    pub cin: usize,
    pub cout: usize,
    pub kernel: usize,
    pub size: usize,
    pub seconds: Option<f64>,
    pub repeats: usize,
    pub note: Option<String>,
}

impl BenchRecord {
    fn skipped(layer: &str, cin: usize, cout: usize, kernel: usize, size: usize, note: String) -> Self {
        BenchRecord { layer: layer.into(), cin, cout, kernel, size, seconds: None, repeats: 0, note: Some(note) }
    }
}

/// Median per-call time over `opts.repeats` timed repeats after
/// `opts.warmup` untimed ones. `call` returns the output shape, which must
/// equal `expected` on every call.
pub fn time_median(opts: &BenchOptions, expected: Shape, mut call: impl FnMut() -> Result<Shape>) -> Result<f64> {
    let mut audited = || -> Result<()> {
        let got = call()?;
        if got != expected {
            return Err(CliError::Bench(format!("shape audit failed: expected {expected}, got {got}")));
        }
        Ok(())
    };
    let t0 = Instant::now();
    audited()?;
    let first = t0.elapsed().as_secs_f64();
    let inner = if first > 0.0 && first < opts.min_repeat_seconds {
        ((opts.min_repeat_seconds / first).ceil() as usize).min(1_000_000)
    } else if first == 0.0 {
        1000
    } else {
        1
    };
    for _ in 1..opts.warmup {
        for _ in 0..inner {
            audited()?;
        }
    }
    let mut times = Vec::with_capacity(opts.repeats);
    for _ in 0..opts.repeats {
        let t = Instant::now();
        for _ in 0..inner {
            audited()?;
        }
        times.push(t.elapsed().as_secs_f64() / inner as f64);
    }
    let m = median(&mut times);
    if m <= 0.0 {
        return Err(CliError::Bench("clock resolution too coarse for this call".into()));
    }
    Ok(m)
}

pub fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

fn random_image(shape: Shape, seed: u64) -> RealTensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_, _, _, _| rng.random_range(-1.0f32..1.0))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConvLayer {
    Fdc,
    FullFdc,
    ConvOverVolume,
}

impl ConvLayer {
    pub const ALL: [ConvLayer; 3] = [ConvLayer::Fdc, ConvLayer::FullFdc, ConvLayer::ConvOverVolume];

    pub fn name(self) -> &'static str {
        match self {
            ConvLayer::Fdc => "fdc",
            ConvLayer::FullFdc => "full_fdc",
            ConvLayer::ConvOverVolume => "conv_over_volume",
        }
    }

    /// Rough peak bytes of one f32 call, inputs included.
    pub fn footprint(self, p: &ConvPoint) -> u64 {
        let real = |c: usize, h: usize, w: usize| (c * h * w * 4) as u64;
        let spec = |c: usize| (c * p.size * (p.size / 2 + 1) * 8) as u64;
        let valid = p.size + 1 - p.kernel;
        let input = real(p.cin, p.size, p.size);
        match self {
            ConvLayer::ConvOverVolume => input + real(p.cout, valid, valid) + real(p.cin * p.cout, p.kernel, p.kernel),
            ConvLayer::Fdc => input + spec(p.cin) + 2 * spec(p.cout) + real(p.cout, p.size, p.size),
            ConvLayer::FullFdc => input + spec(p.cin) + 2 * spec(p.cout) + 2 * real(p.cout, p.size, p.size) + real(p.cout, valid, valid),
        }
    }
}

impl FromStr for ConvLayer {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self> {
        ConvLayer::ALL
            .into_iter()
            .find(|l| l.name() == s)
            .ok_or_else(|| CliError::Usage(format!("unknown layer {s:?}; expected fdc, full_fdc or conv_over_volume")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvPoint {
    pub cin: usize,
    pub cout: usize,
    pub kernel: usize,
    pub size: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepAxis {
    Channels,
    Kernel,
    ImageSize,
}

impl FromStr for SweepAxis {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "channels" => Ok(SweepAxis::Channels),
            "kernel" => Ok(SweepAxis::Kernel),
            "image-size" | "image_size" => Ok(SweepAxis::ImageSize),
            _ => Err(CliError::Usage(format!("unknown sweep axis {s:?}; expected channels, kernel or image-size"))),
        }
    }
}

/// Cartesian grid of channel pairs, kernel sizes and image sizes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSweep {
    pub channels: Vec<(usize, usize)>,
    pub kernels: Vec<usize>,
    pub sizes: Vec<usize>,
}

impl ConvSweep {
    /// The full grid along `axis`; the other two axes are held at the
    /// defaults of that sweep.
    pub fn along(axis: SweepAxis) -> Self {
        match axis {
            SweepAxis::Channels => ConvSweep { channels: CHANNEL_GRID.to_vec(), kernels: vec![3], sizes: vec![512] },
            SweepAxis::Kernel => ConvSweep { channels: vec![(8, 16)], kernels: KERNEL_GRID.to_vec(), sizes: vec![512] },
            SweepAxis::ImageSize => ConvSweep { channels: vec![(8, 16)], kernels: vec![3], sizes: SIZE_GRID.to_vec() },
        }
    }

    pub fn points(&self) -> Vec<ConvPoint> {
        let mut out = Vec::new();
        for &(cin, cout) in &self.channels {
            for &kernel in &self.kernels {
                for &size in &self.sizes {
                    out.push(ConvPoint { cin, cout, kernel, size });
                }
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        for p in self.points() {
            if p.cin == 0 || p.cout % p.cin.max(1) != 0 {
                return Err(CliError::Usage(format!("channels {}/{}: output channels must be a multiple of input channels", p.cin, p.cout)));
            }
            if p.kernel == 0 || p.kernel > p.size {
                return Err(CliError::Usage(format!("kernel {} does not fit image size {}", p.kernel, p.size)));
            }
        }
        Ok(())
    }
}

/// Times every layer in `layers` at one grid point on the same random image.
pub fn bench_conv_point(p: ConvPoint, layers: &[ConvLayer], opts: &BenchOptions) -> Result<Vec<BenchRecord>> {
    let cfg = ConvConfig { in_channels: p.cin, out_channels: p.cout, kernel_size: p.kernel };
    let valid = p.size + 1 - p.kernel;
    let mut out = Vec::new();
    let image = random_image(Shape::new(1, p.cin, p.size, p.size)?, opts.seed);
    for &layer in layers {
        let need = layer.footprint(&p);
        if let Some(budget) = opts.memory_budget {
            if need > budget {
                out.push(BenchRecord::skipped(layer.name(), p.cin, p.cout, p.kernel, p.size, format!("needs about {need} bytes, budget {budget}")));
                continue;
            }
        }
        let seconds = match layer {
            ConvLayer::ConvOverVolume => {
                let bank = kaiming_init(&KernelBank::zeros(cfg, KernelLayout::Cov), opts.seed);
                time_median(opts, Shape::new(1, p.cout, valid, valid)?, || Ok(conv_over_volume(&image, &bank)?.shape()))?
            }
            ConvLayer::Fdc => {
                let fdc = FdcLayer::<f32>::kaiming(cfg, opts.seed)?.with_shifted(false);
                let spectrum = rfft2(&image);
                time_median(opts, Shape::new(1, p.cout, p.size, p.size / 2 + 1)?, || Ok(fdc_forward(&fdc, &spectrum)?.shape()))?
            }
            ConvLayer::FullFdc => {
                let fdc = FdcLayer::<f32>::kaiming(cfg, opts.seed)?;
                time_median(opts, Shape::new(1, p.cout, valid, valid)?, || Ok(full_fdc_forward(&fdc, &image)?.shape()))?
            }
        };
        out.push(BenchRecord {
            layer: layer.name().into(),
            cin: p.cin,
            cout: p.cout,
            kernel: p.kernel,
            size: p.size,
            seconds: Some(seconds),
            repeats: opts.repeats,
            note: None,
        });
    }
    Ok(out)
}

/// Rows come out in grid order, layers in the order given.
pub fn bench_conv(sweep: &ConvSweep, layers: &[ConvLayer], opts: &BenchOptions, mut progress: impl FnMut(&BenchRecord)) -> Result<Vec<BenchRecord>> {
    opts.validate()?;
    sweep.validate()?;
    over_rounds(&sweep.points(), opts, |p| bench_conv_point(p, layers, opts), &mut progress)
}

/// Runs every point `opts.rounds` times, interleaved pass by pass, so slow
/// drift in machine speed spreads over all points instead of a few.
fn over_rounds<P: Copy>(
    points: &[P],
    opts: &BenchOptions,
    mut point: impl FnMut(P) -> Result<Vec<BenchRecord>>,
    progress: &mut impl FnMut(&BenchRecord),
) -> Result<Vec<BenchRecord>> {
    let mut passes: Vec<Vec<Vec<BenchRecord>>> = vec![Vec::new(); points.len()];
    let mut out = Vec::new();
    for round in 0..opts.rounds {
        for (i, &p) in points.iter().enumerate() {
            passes[i].push(point(p)?);
            if round + 1 < opts.rounds {
                continue;
            }
            let mut merged = passes[i][0].clone();
            for (j, r) in merged.iter_mut().enumerate() {
                let mut per_pass: Vec<f64> = passes[i].iter().filter_map(|pass| pass[j].seconds).collect();
                if r.seconds.is_some() && !per_pass.is_empty() {
                    r.seconds = Some(median(&mut per_pass));
                    r.repeats = opts.repeats * opts.rounds;
                }
            }
            for r in &merged {
                progress(r);
            }
            out.extend(merged);
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolLayer {
    Fdp,
    MaxPool2,
    AvgPool2,
}

impl PoolLayer {
    pub const ALL: [PoolLayer; 3] = [PoolLayer::Fdp, PoolLayer::MaxPool2, PoolLayer::AvgPool2];

    pub fn name(self) -> &'static str {
        match self {
            PoolLayer::Fdp => "fdp",
            PoolLayer::MaxPool2 => "max_pool2",
            PoolLayer::AvgPool2 => "avg_pool2",
        }
    }
}

/// Halving pools on one-channel images, sorted by size ascending.
pub fn bench_pool(sizes: &[usize], opts: &BenchOptions, mut progress: impl FnMut(&BenchRecord)) -> Result<Vec<BenchRecord>> {
    opts.validate()?;
    let mut sizes = sizes.to_vec();
    sizes.sort_unstable();
    sizes.dedup();
    if let Some(&size) = sizes.iter().find(|&&s| s < 4 || s % 4 != 0) {
        return Err(CliError::Usage(format!("pool sizes must be multiples of 4, got {size}")));
    }
    over_rounds(&sizes, opts, |size| bench_pool_point(size, opts), &mut progress)
}

fn bench_pool_point(size: usize, opts: &BenchOptions) -> Result<Vec<BenchRecord>> {
    let mut out = Vec::new();
    let image = random_image(Shape::new(1, 1, size, size)?, opts.seed);
    let half = size / 2;
    for layer in PoolLayer::ALL {
        let seconds = match layer {
            PoolLayer::Fdp => {
                let spectrum = rfft_shift(&rfft2(&image))?;
                let fdp = FdpLayer::halving(size, size);
                time_median(opts, Shape::new(1, 1, half, half / 2 + 1)?, || {
                    let pooled = fdp_forward(&fdp, &spectrum, true)?;
                    if pooled.spatial_width() != half {
                        return Err(CliError::Bench(format!("fdp kept spatial width {}, expected {half}", pooled.spatial_width())));
                    }
                    Ok(pooled.shape())
                })?
            }
            PoolLayer::MaxPool2 => time_median(opts, Shape::new(1, 1, half, half)?, || Ok(max_pool2(&image)?.shape()))?,
            PoolLayer::AvgPool2 => time_median(opts, Shape::new(1, 1, half, half)?, || Ok(avg_pool2(&image)?.shape()))?,
        };
        out.push(BenchRecord {
            layer: layer.name().into(),
            cin: 1,
            cout: 1,
            kernel: 2,
            size,
            seconds: Some(seconds),
            repeats: opts.repeats,
            note: None,
        });
    }
    Ok(out)
}

/// Writes the six documented columns. Skipped points carry `skipped` in the
/// seconds column.
pub fn write_csv(records: &[BenchRecord], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let err = |e: csv::Error| CliError::Bench(format!("writing CSV: {e}"));
    w.write_record(CSV_HEADER).map_err(err)?;
    for r in records {
        let seconds = r.seconds.map_or_else(|| "skipped".to_string(), |s| format!("{s:.6e}"));
        w.write_record([r.layer.clone(), r.cin.to_string(), r.cout.to_string(), r.kernel.to_string(), r.size.to_string(), seconds]).map_err(err)?;
    }
    w.flush().map_err(|e| CliError::Bench(format!("writing CSV: {e}")))?;
    Ok(())
}

/// Median seconds of `layer` at the point matching `pick`.
pub fn lookup(records: &[BenchRecord], layer: &str, pick: impl Fn(&BenchRecord) -> bool) -> Option<f64> {
    records.iter().find(|r| r.layer == layer && pick(r)).and_then(|r| r.seconds)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick() -> BenchOptions {
        BenchOptions { warmup: 2, repeats: 5, min_repeat_seconds: 0.0, memory_budget: None, seed: 3, rounds: 1 }
    }

    #[test]
    fn median_odd_and_even() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn audit_rejects_wrong_shape() {
        let s = Shape::new(1, 1, 2, 2).unwrap();
        let t = Shape::new(1, 1, 3, 2).unwrap();
        assert!(time_median(&quick(), s, || Ok(t)).is_err());
        let mut calls = 0;
        time_median(&quick(), s, || {
            calls += 1;
            std::thread::sleep(std::time::Duration::from_micros(50));
            Ok(s)
        })
        .unwrap();
        assert_eq!(calls, 7);
    }

    #[test]
    fn too_few_repeats_rejected() {
        let opts = BenchOptions { repeats: 4, ..quick() };
        assert!(bench_pool(&[8], &opts, |_| {}).is_err());
    }

    #[test]
    fn rows_per_layer_and_point() {
        let sweep = ConvSweep { channels: vec![(1, 2), (2, 4)], kernels: vec![3, 5], sizes: vec![16] };
        let rows = bench_conv(&sweep, &ConvLayer::ALL, &quick(), |_| {}).unwrap();
        assert_eq!(rows.len(), 3 * 4);
        assert!(rows.iter().all(|r| r.seconds.unwrap() > 0.0 && r.repeats == 5));
        let mut buf = Vec::new();
        write_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), "layer,cin,cout,kernel,size,seconds");
        assert_eq!(text.lines().count(), 13);
    }

    #[test]
    fn rounds_keep_grid_order_and_count_repeats() {
        let opts = BenchOptions { rounds: 3, ..quick() };
        let mut seen = Vec::new();
        let rows = bench_pool(&[8, 16], &opts, |r| seen.push((r.layer.clone(), r.size))).unwrap();
        assert_eq!(rows.len(), 6);
        assert_eq!(seen.len(), 6);
        assert!(rows.iter().all(|r| r.repeats == 15 && r.seconds.unwrap() > 0.0));
        assert_eq!(rows.iter().map(|r| r.size).collect::<Vec<_>>(), [8, 8, 8, 16, 16, 16]);
        assert!(bench_pool(&[8], &BenchOptions { rounds: 0, ..quick() }, |_| {}).is_err());
    }

    #[test]
    fn memory_budget_skips_points() {
        let opts = BenchOptions { memory_budget: Some(1), ..quick() };
        let rows = bench_conv_point(ConvPoint { cin: 1, cout: 1, kernel: 3, size: 8 }, &ConvLayer::ALL, &opts).unwrap();
        assert!(rows.iter().all(|r| r.seconds.is_none() && r.note.is_some()));
        let mut buf = Vec::new();
        write_csv(&rows, &mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().contains(",skipped"));
    }

    #[test]
    fn pool_rows_sorted() {
        let rows = bench_pool(&[32, 8, 16], &quick(), |_| {}).unwrap();
        let sizes: Vec<usize> = rows.iter().map(|r| r.size).collect();
        assert_eq!(sizes, vec![8, 8, 8, 16, 16, 16, 32, 32, 32]);
    }
}
