use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fdcnn::arch::ModelSpec;
use fdcnn::nn::TrainConfig;
use fdcnn_cli::bench::{self, BenchOptions, ConvLayer, ConvSweep, SweepAxis};
use fdcnn_cli::runs::{self, Arch, DataSource, ModelFile, RunReport, RunRequest};
use fdcnn_cli::{CliError, Result, THREADS_ENV};

// Keeps freed pages mapped, so large per-call buffers time the same in every process state.
#[global_allocator]
static ALLOC: mimalloc::MiMalloc = mimalloc::MiMalloc;
use fdcnn_data::raster::{CLAHE_CLIP_LIMIT, CLAHE_GRID};
use fdcnn_data::{LoadOptions, PreprocessConfig, Split};

#[derive(Parser)]
#[command(name = "fdcnn", version, about = "Frequency-domain CNN benchmarks and desk-scale training runs")]
struct Cli {
    /// Worker threads. Defaults to $FDCNN_THREADS, else 1 for benchmarks and all cores otherwise.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Time fdc, full_fdc and conv_over_volume along one sweep axis.
    BenchConv(BenchConvArgs),
    /// Time fdp, max_pool2 and avg_pool2 halving images of several sizes.
    BenchPool(BenchPoolArgs),
    /// Train one architecture and write its report, loss trace and weights.
    Train(TrainArgs),
    /// Score a saved model.
    Eval(EvalArgs),
    /// Compare run reports, or train both sides over several seeds first.
    Report(ReportArgs),
    /// Write preprocessed copies of a labeled image directory.
    Preprocess(PreprocessArgs),
}

fn parse_one<T: std::str::FromStr>(s: &str) -> std::result::Result<T, String> {
    s.trim().parse::<T>().map_err(|_| format!("bad list entry {s:?}"))
}

fn parse_pair(s: &str) -> std::result::Result<(usize, usize), String> {
    let (a, b) = s.trim().split_once('/').ok_or_else(|| format!("expected cin/cout, got {s:?}"))?;
    Ok((a.parse().map_err(|_| format!("bad channel count {a:?}"))?, b.parse().map_err(|_| format!("bad channel count {b:?}"))?))
}

#[derive(Args)]
struct TimingArgs {
    #[arg(long, default_value_t = 5)]
    repeats: usize,
    /// Passes over the grid; each row reports the median of its per-pass medians.
    #[arg(long, default_value_t = 1)]
    rounds: usize,
    #[arg(long, default_value_t = 2)]
    warmup: usize,
    /// Seed of the random inputs and kernels.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Skip grid points estimated to need more than this many MiB (default: 80% of available memory).
    #[arg(long)]
    memory_budget_mb: Option<u64>,
    /// Output CSV path; stdout when absent.
    #[arg(long)]
    csv: Option<PathBuf>,
}

impl TimingArgs {
    fn options(&self) -> BenchOptions {
        let mut o = BenchOptions { repeats: self.repeats, warmup: self.warmup, seed: self.seed, rounds: self.rounds, ..BenchOptions::default() };
        if let Some(mb) = self.memory_budget_mb {
            o.memory_budget = Some(mb * 1024 * 1024);
        }
        o
    }
}

#[derive(Args)]
struct BenchConvArgs {
    /// channels, kernel or image-size.
    #[arg(long, default_value = "channels")]
    sweep: String,
    /// Comma-separated cin/cout pairs, e.g. 2/4,4/8.
    #[arg(long, value_parser = parse_pair, value_delimiter = ',')]
    channels: Option<Vec<(usize, usize)>>,
    /// Comma-separated kernel sizes.
    #[arg(long, value_parser = parse_one::<usize>, value_delimiter = ',')]
    kernel: Option<Vec<usize>>,
    /// Comma-separated image extents.
    #[arg(long, value_parser = parse_one::<usize>, value_delimiter = ',')]
    image_size: Option<Vec<usize>>,
    /// Comma-separated subset of fdc, full_fdc, conv_over_volume.
    #[arg(long, value_parser = parse_one::<ConvLayer>, value_delimiter = ',')]
    layers: Option<Vec<ConvLayer>>,
    #[command(flatten)]
    timing: TimingArgs,
}

#[derive(Args)]
struct BenchPoolArgs {
    #[arg(long, value_parser = parse_one::<usize>, value_delimiter = ',', default_value = "64,128,256,512,1024")]
    image_size: Vec<usize>,
    #[command(flatten)]
    timing: TimingArgs,
}

#[derive(Args, Clone)]
struct DataArgs {
    /// Use the synthetic fundus-like dataset.
    #[arg(long, conflicts_with = "data_dir")]
    synth: bool,
    #[arg(long, default_value_t = 500)]
    synth_per_class: usize,
    /// Directory of <id>.png or <id>.ppm images.
    #[arg(long, requires = "labels")]
    data_dir: Option<PathBuf>,
    /// CSV with header id_code,diagnosis.
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Seed of the synthetic images and of the train/val/test shuffle.
    #[arg(long, default_value_t = 0)]
    data_seed: u64,
    #[arg(long, default_value_t = 10.0)]
    threshold: f32,
    #[arg(long, default_value_t = CLAHE_CLIP_LIMIT)]
    clip_limit: f32,
    #[arg(long, default_value_t = CLAHE_GRID)]
    grid: usize,
}

impl DataArgs {
    fn source(&self) -> Result<Option<DataSource>> {
        if self.synth {
            return Ok(Some(DataSource::Synth { per_class: self.synth_per_class, seed: self.data_seed }));
        }
        match (&self.data_dir, &self.labels) {
            (Some(images), Some(labels)) => Ok(Some(DataSource::Dir {
                images: images.clone(),
                labels: labels.clone(),
                seed: self.data_seed,
                threshold: self.threshold,
                clip_limit: self.clip_limit,
                grid: self.grid,
            })),
            (None, None) => Ok(None),
            _ => Err(CliError::Usage("--data-dir and --labels go together".into())),
        }
    }

    fn required(&self) -> Result<DataSource> {
        self.source()?.ok_or_else(|| CliError::Usage("pass --synth or --data-dir with --labels".into()))
    }
}

#[derive(Args, Clone)]
struct ModelArgs {
    /// Image extent fed to the model.
    #[arg(long, default_value_t = 64)]
    image_size: usize,
    /// Shrink VGG16 widths for desk-scale runs.
    #[arg(long)]
    mini: bool,
    /// JSON model spec; overrides the architecture's built-in layers.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct HyperArgs {
    #[arg(long, default_value_t = 15)]
    epochs: usize,
    #[arg(long, default_value_t = 1e-5)]
    lr: f64,
    #[arg(long, default_value_t = 1e-6)]
    weight_decay: f64,
    #[arg(long, default_value_t = 4)]
    batch_size: usize,
    /// Random rotation and flips drawn per sample and epoch.
    #[arg(long)]
    augment: bool,
}

impl HyperArgs {
    fn config(&self, seed: u64) -> TrainConfig {
        TrainConfig { learning_rate: self.lr, weight_decay: self.weight_decay, batch_size: self.batch_size, epochs: self.epochs, seed }
    }
}

#[derive(Args)]
struct TrainArgs {
    /// One of fdcnn, cnn, vgg16, vgg16-1fullfdc, vgg16-3fullfdc.
    #[arg(long)]
    arch: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    hyper: HyperArgs,
    #[command(flatten)]
    data: DataArgs,
    /// Directory for report.json, loss.csv and model.json.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Loss trace path (defaults to <out>/loss.csv).
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    /// train, val or test.
    #[arg(long, default_value = "test")]
    split: String,
    #[command(flatten)]
    data: DataArgs,
}

#[derive(Args)]
struct ReportArgs {
    /// Reports of side A, paired in order with --b.
    #[arg(long = "a", num_args = 1..)]
    a: Vec<PathBuf>,
    #[arg(long = "b", num_args = 1..)]
    b: Vec<PathBuf>,
    /// Train both sides with seeds 1..=N before comparing.
    #[arg(long, conflicts_with_all = ["a", "b"])]
    repro: Option<u64>,
    #[arg(long, default_value = "fdcnn")]
    arch_a: String,
    #[arg(long, default_value = "cnn")]
    arch_b: String,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    hyper: HyperArgs,
    #[command(flatten)]
    data: DataArgs,
    /// Directory for the comparison and every run report.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PreprocessArgs {
    #[arg(long)]
    data_dir: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 512)]
    image_size: usize,
    #[arg(long, default_value_t = 10.0)]
    threshold: f32,
    #[arg(long, default_value_t = CLAHE_CLIP_LIMIT)]
    clip_limit: f32,
    #[arg(long, default_value_t = CLAHE_GRID)]
    grid: usize,
}

fn configure_threads(flag: Option<usize>, bench: bool) -> Result<()> {
    let from_env = match std::env::var(THREADS_ENV) {
        Ok(v) => Some(v.parse::<usize>().map_err(|_| CliError::Usage(format!("{THREADS_ENV}={v:?} is not a thread count")))?),
        Err(_) => None,
    };
    let n = flag.or(from_env).unwrap_or(if bench { 1 } else { 0 });
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| CliError::Usage(format!("thread pool: {e}")))
}

fn mkdir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn emit_csv(records: &[bench::BenchRecord], path: Option<&Path>) -> Result<()> {
    match path {
        Some(p) => {
            let f = fs::File::create(p).map_err(|e| CliError::io(p, e))?;
            bench::write_csv(records, std::io::BufWriter::new(f))
        }
        None => bench::write_csv(records, std::io::stdout().lock()),
    }
}

fn progress(r: &bench::BenchRecord) {
    let t = r.seconds.map_or_else(|| format!("skipped ({})", r.note.as_deref().unwrap_or("")), |s| format!("{s:.6e} s"));
    eprintln!("{:>16} {:>4}/{:<4} k{:<2} {:>5}px  {t}", r.layer, r.cin, r.cout, r.kernel, r.size);
}

fn cmd_bench_conv(a: &BenchConvArgs) -> Result<()> {
    let axis: SweepAxis = a.sweep.parse()?;
    let mut sweep = ConvSweep::along(axis);
    if let Some(c) = &a.channels {
        sweep.channels = c.clone();
    }
    if let Some(k) = &a.kernel {
        sweep.kernels = k.clone();
    }
    if let Some(s) = &a.image_size {
        sweep.sizes = s.clone();
    }
    let layers = a.layers.clone().unwrap_or_else(|| ConvLayer::ALL.to_vec());
    let records = bench::bench_conv(&sweep, &layers, &a.timing.options(), progress)?;
    emit_csv(&records, a.timing.csv.as_deref())
}

fn cmd_bench_pool(a: &BenchPoolArgs) -> Result<()> {
    let records = bench::bench_pool(&a.image_size, &a.timing.options(), progress)?;
    emit_csv(&records, a.timing.csv.as_deref())
}

fn request(arch: &str, model: &ModelArgs, hyper: &HyperArgs, data: DataSource, seed: u64) -> Result<RunRequest> {
    let arch_v: Arch = arch.parse()?;
    let spec: ModelSpec = match &model.config {
        Some(p) => runs::read_json(p)?,
        None => arch_v.spec(model.image_size, model.mini)?,
    };
    Ok(RunRequest { arch: arch.into(), spec, data, image_size: model.image_size, config: hyper.config(seed), augment: hyper.augment })
}

fn report_json(r: &RunReport) -> Result<String> {
    serde_json::to_string_pretty(r).map_err(|e| CliError::Report(e.to_string()))
}

fn cmd_train(a: &TrainArgs) -> Result<()> {
    let req = request(&a.arch, &a.model, &a.hyper, a.data.required()?, a.seed)?;
    let (report, model) = runs::run_training(&req)?;
    if let Some(dir) = &a.out {
        mkdir(dir)?;
        runs::write_json(&dir.join("report.json"), &report)?;
        model.save(&dir.join("model.json"))?;
    }
    let csv_path = a.csv.clone().or_else(|| a.out.as_ref().map(|d| d.join("loss.csv")));
    if let Some(p) = csv_path {
        write_text(&p, &runs::loss_csv(&report.epochs))?;
    }
    println!("{}", report_json(&report)?);
    Ok(())
}

fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let split = match a.split.as_str() {
        "train" => Split::Train,
        "val" => Split::Val,
        "test" => Split::Test,
        s => return Err(CliError::Usage(format!("unknown split {s:?}; expected train, val or test"))),
    };
    let file = ModelFile::load(&a.model)?;
    let source = a.data.source()?;
    let metrics = runs::run_eval(&file, source.as_ref(), split)?;
    println!("{}", serde_json::to_string_pretty(&metrics).map_err(|e| CliError::Report(e.to_string()))?);
    Ok(())
}

fn cmd_report(a: &ReportArgs) -> Result<()> {
    let (ra, rb, cmp) = match a.repro {
        Some(n) => {
            if n == 0 {
                return Err(CliError::Usage("--repro needs at least one seed".into()));
            }
            let data = a.data.required()?;
            let req_a = request(&a.arch_a, &a.model, &a.hyper, data.clone(), 0)?;
            let req_b = request(&a.arch_b, &a.model, &a.hyper, data, 0)?;
            let seeds: Vec<u64> = (1..=n).collect();
            runs::repro(&req_a, &req_b, &seeds, |r| eprintln!("{} seed {} accuracy {:.4}", r.arch, r.config.seed, r.metrics.accuracy))?
        }
        None => {
            let load = |paths: &[PathBuf]| paths.iter().map(|p| runs::read_json::<RunReport>(p)).collect::<Result<Vec<_>>>();
            let (ra, rb) = (load(&a.a)?, load(&a.b)?);
            let cmp = runs::compare(&ra, &rb)?;
            (ra, rb, cmp)
        }
    };
    if let Some(dir) = &a.out {
        mkdir(dir)?;
        runs::write_json(&dir.join("comparison.json"), &cmp)?;
        if a.repro.is_some() {
            for r in ra.iter().chain(&rb) {
                runs::write_json(&dir.join(format!("{}-seed{}.json", r.arch, r.config.seed)), r)?;
            }
        }
    }
    print!("{}", runs::render(&cmp));
    Ok(())
}

fn cmd_preprocess(a: &PreprocessArgs) -> Result<()> {
    let opts = LoadOptions {
        preprocess: Some(PreprocessConfig { threshold: a.threshold, size: a.image_size, clip_limit: a.clip_limit, grid: a.grid }),
        ..LoadOptions::default()
    };
    let ds = fdcnn_data::load_dataset(&a.data_dir, &a.labels, &opts)?;
    mkdir(&a.out)?;
    let mut all: Vec<_> = ds.train.iter().chain(&ds.val).chain(&ds.test).collect();
    all.sort_by(|x, y| x.id.cmp(&y.id));
    for it in &all {
        fdcnn_data::dataset::write_png(&it.image, &a.out.join(format!("{}.png", it.id)))?;
    }
    let labels = a.out.join("labels.csv");
    fs::copy(&a.labels, &labels).map_err(|e| CliError::io(&labels, e))?;
    eprintln!("wrote {} images to {}", all.len(), a.out.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let bench = matches!(cli.command, Command::BenchConv(_) | Command::BenchPool(_));
    configure_threads(cli.threads, bench)?;
    match &cli.command {
        Command::BenchConv(a) => cmd_bench_conv(a),
        Command::BenchPool(a) => cmd_bench_pool(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Report(a) => cmd_report(a),
        Command::Preprocess(a) => cmd_preprocess(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let message: Vec<&str> = text.lines().map(|l| l.trim()).filter(|l| !l.is_empty()).collect();
            let message = message.join(" ");
            let err = CliError::Usage(message.strip_prefix("error: ").unwrap_or(&message).to_string());
            eprintln!("{}", err.to_line());
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => {
            let _ = std::io::stdout().flush();
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", e.to_line());
            ExitCode::from(if matches!(e, CliError::Usage(_)) { 2 } else { 1 })
        }
    }
}
