//! The `radfiner` command line: generate, train, eval, gradcheck and bench.
//!
//! Every command writes `manifest.json` next to its outputs with the
//! resolved configuration, seeds, paths, hardware and timings.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::attention::{ball_query, ball_query_brute_force, PadMode};
use crate::error::{Error, Result};
use crate::network::{Network, NetworkConfig};
use crate::numerics::ParamStore;
use crate::pipeline::{evaluate, panoptic, ClassSource, Combine};
use crate::refinement::RefineMode;
use crate::scan::{load_dataset, load_predictions, save_dataset, save_panoptic, save_predictions, MovingPrediction, RadarScan};

use crate::synth::{generate_corpus, GeneratorConfig};
use crate::training::{objective_gradient_check, train, AugmentConfig, ClutterSource, TrainConfig, TrainData};

pub const SCANS_FILE: &str = "scans.txt";
pub const PREDS_FILE: &str = "preds.txt";
pub const MANIFEST_FILE: &str = "manifest.json";
const MIN_BENCH_SAMPLES: usize = 1000;

#[derive(Parser, Debug)]
#[command(name = "radfiner", version, about = "Semantic refinement of radar moving-instance predictions")]
pub struct Cli {
    /// Worker threads for per-scan parallel work; outputs do not depend on it.
    #[arg(long, global = true, default_value_t = 1)]
    pub workers: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate synthetic scans and surrogate backbone predictions.
    Generate(GenerateArgs),
    /// Train the moving-point classifier.
    Train(TrainArgs),
    /// Score backbone predictions, optionally classified and refined.
    Eval(EvalArgs),
    /// Finite-difference check of every parameter gradient.
    Gradcheck(GradcheckArgs),
    /// Per-scan latency of select → forward → refine.
    Bench(BenchArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    Paper,
    Desk,
    Toy,
}

/// Network configuration: a file or a preset, then individual overrides.
#[derive(Args, Debug, Clone)]
pub struct NetArgs {
    /// Network config file (`key=value`); overrides `--preset`.
    #[arg(long)]
    pub net: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    /// Ball-query radius, m.
    #[arg(long)]
    pub radius: Option<f64>,
    /// Neighborhood cap.
    #[arg(long)]
    pub nmax: Option<usize>,
    /// Padded-slot treatment: mask or zeropad.
    #[arg(long)]
    pub attn_pad: Option<PadMode>,
}

impl NetArgs {
    fn resolve(&self, fallback: Preset, fallback_file: Option<&Path>) -> Result<NetworkConfig> {
        let mut cfg = match (&self.net, self.preset, fallback_file) {
            (Some(p), _, _) => NetworkConfig::load(p)?,
            (None, Some(p), _) => preset(p),
            (None, None, Some(f)) if f.exists() => NetworkConfig::load(f)?,
            _ => preset(fallback),
        };
        if let Some(r) = self.radius {
            cfg.radius = r;
        }
        if let Some(n) = self.nmax {
            cfg.nmax = n;
        }
        if let Some(p) = self.attn_pad {
            cfg.attn_pad = p;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn preset(p: Preset) -> NetworkConfig {
    match p {
        Preset::Paper => NetworkConfig::paper(),
        Preset::Desk => NetworkConfig::desk(),
        Preset::Toy => NetworkConfig::toy(),
    }
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    /// Generator config (`key=value`); defaults apply to missing keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Individual generator settings, `key=value`, applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Scan id prefix; ids are `{prefix}{index:05}`.
    #[arg(long, default_value = "scan")]
    pub prefix: String,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Directory holding `scans.txt`.
    #[arg(long)]
    pub data: PathBuf,
    /// Validation directory holding `scans.txt` and `preds.txt`.
    #[arg(long)]
    pub val: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub net: NetArgs,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub lr_drop_epoch: Option<usize>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long, default_value_t = 10)]
    pub ckpt_every: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.4)]
    pub p_instance: f64,
    #[arg(long, default_value_t = 0.4)]
    pub p_scan: f64,
    #[arg(long, default_value_t = 1.0)]
    pub boundary_sigma: f64,
    #[arg(long, default_value_t = ClutterSource::Synthetic)]
    pub clutter_source: ClutterSource,
    /// Refinement used for validation scores.
    #[arg(long, default_value_t = RefineMode::Split)]
    pub refine_mode: RefineMode,
    /// Train the paper schedule (80 epochs, batch 64, drop after 60).
    #[arg(long)]
    pub paper_schedule: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Source {
    /// Ground-truth classes of the backbone's moving points.
    Surrogate,
    /// Classes from a trained checkpoint.
    Checkpoint,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Backbone predictions; defaults to `preds.txt` in the data directory.
    #[arg(long)]
    pub preds: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Source::Surrogate)]
    pub source: Source,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[command(flatten)]
    pub net: NetArgs,
    /// Split instances by class; without it each backbone instance takes
    /// its majority class.
    #[arg(long)]
    pub refine: bool,
    #[arg(long, default_value_t = RefineMode::Split)]
    pub refine_mode: RefineMode,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    #[command(flatten)]
    pub net: NetArgs,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = 20)]
    pub points: usize,
    #[arg(long, default_value_t = 1e-5)]
    pub h: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[command(flatten)]
    pub net: NetArgs,
    /// Passes over the data; by default enough for 1000 samples.
    #[arg(long)]
    pub repetitions: Option<usize>,
    /// Untimed passes over the first scans before measuring.
    #[arg(long, default_value_t = 10)]
    pub warmup: usize,
    /// Send every point through the network instead of the backbone's
    /// moving subset.
    #[arg(long)]
    pub all_moving: bool,
    #[arg(long, default_value_t = RefineMode::Split)]
    pub refine_mode: RefineMode,
    /// Also time grid against brute-force ball query on this many points.
    #[arg(long)]
    pub ball_query_points: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Serialize, Debug, Default)]
pub struct Hardware {
    pub cpu: String,
    pub logical_cpus: usize,
    pub os: String,
    pub arch: String,
}

impl Hardware {
    pub fn detect() -> Self {
        let cpu = fs::read_to_string("/proc/cpuinfo")
            .ok()
            .and_then(|t| t.lines().find(|l| l.starts_with("model name")).and_then(|l| l.split(':').nth(1)).map(|s| s.trim().to_string()))
            .unwrap_or_else(|| "unknown".into());
        Hardware {
            cpu,
            logical_cpus: std::thread::available_parallelism().map_or(1, |n| n.get()),
            os: std::env::consts::OS.into(),
            arch: std::env::consts::ARCH.into(),
        }
    }
}

/// What a run needs to be repeated exactly.
#[derive(Serialize, Debug, Default)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub argv: Vec<String>,
    pub workers: usize,
    pub config: BTreeMap<String, String>,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub timings_ms: BTreeMap<String, f64>,
    pub hardware: Hardware,
}

impl RunManifest {
    fn new(command: &str, argv: &[String], workers: usize) -> Self {
        RunManifest {
            command: command.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            argv: argv.to_vec(),
            workers,
            hardware: Hardware::detect(),
            ..Default::default()
        }
    }

    fn config_text(&mut self, prefix: &str, text: &str) {
        for line in text.lines() {
            if let Some((k, v)) = line.split_once('=') {
                self.config.insert(format!("{prefix}{}", k.trim()), v.trim().to_string());
            }
        }
    }

    fn set(&mut self, k: &str, v: impl ToString) {
        self.config.insert(k.into(), v.to_string());
    }

    fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
    }
}

fn mkdir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

fn load_pairs(data: &Path, preds: Option<&Path>) -> Result<(Vec<RadarScan>, Vec<MovingPrediction>)> {
    let scans = load_dataset(&data.join(SCANS_FILE))?;
    let preds = load_predictions(preds.unwrap_or(&data.join(PREDS_FILE)))?;
    if scans.len() != preds.len() {
        return Err(Error::invariant("-", format!("{} scans but {} predictions", scans.len(), preds.len())));
    }
    Ok((scans, preds))
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let argv: Vec<String> = argv.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    match run(cli, &argv) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Runs a parsed command inside a pool of `--workers` threads.
pub fn run(cli: Cli, argv: &[String]) -> Result<i32> {
    if cli.workers == 0 {
        return Err(Error::InvalidArgument("--workers must be at least 1".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.workers)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    let workers = cli.workers;
    pool.install(|| match cli.command {
        Command::Generate(a) => cmd_generate(&a, argv, workers),
        Command::Train(a) => cmd_train(&a, argv, workers),
        Command::Eval(a) => cmd_eval(&a, argv, workers),
        Command::Gradcheck(a) => cmd_gradcheck(&a, argv, workers),
        Command::Bench(a) => cmd_bench(&a, argv, workers),
    })
}

pub fn cmd_generate(a: &GenerateArgs, argv: &[String], workers: usize) -> Result<i32> {
    let t0 = Instant::now();
    let mut cfg = match &a.config {
        Some(p) => GeneratorConfig::load(p)?,
        None => GeneratorConfig::default(),
    };
    for kv in &a.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::InvalidArgument(format!("--set expects key=value, got `{kv}`")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    cfg.validate()?;
    let (scans, preds) = generate_corpus(&cfg, &a.prefix, a.count, a.seed)?;
    mkdir(&a.out)?;
    save_dataset(&scans, &a.out.join(SCANS_FILE))?;
    save_predictions(&preds, &a.out.join(PREDS_FILE))?;
    write(&a.out.join("generator.cfg"), &cfg.to_text())?;

    let mut m = RunManifest::new("generate", argv, workers);
    m.config_text("", &cfg.to_text());
    m.set("count", a.count);
    m.set("prefix", &a.prefix);
    m.seeds.insert("seed".into(), a.seed);
    m.inputs.extend(a.config.iter().map(|p| p.display().to_string()));
    m.outputs = [SCANS_FILE, PREDS_FILE, "generator.cfg"].iter().map(|f| a.out.join(f).display().to_string()).collect();
    m.timings_ms.insert("total".into(), ms(t0));
    m.write(&a.out)?;
    println!("generated {} scans into {}", scans.len(), a.out.display());
    Ok(0)
}

pub fn cmd_train(a: &TrainArgs, argv: &[String], workers: usize) -> Result<i32> {
    let t0 = Instant::now();
    let net = a.net.resolve(Preset::Desk, None)?;
    let mut cfg = if a.paper_schedule { TrainConfig::paper() } else { TrainConfig::desk() };
    if let Some(e) = a.epochs {
        cfg.epochs = e;
        if a.lr_drop_epoch.is_none() {
            cfg.lr_drop_epoch = (e * 3 / 4).min(e.saturating_sub(1));
        }
    }
    if let Some(b) = a.batch_size {
        cfg.batch_size = b;
    }
    if let Some(lr) = a.lr {
        cfg.optimizer.lr = lr;
    }
    if let Some(d) = a.lr_drop_epoch {
        cfg.lr_drop_epoch = d;
    }
    if let Some(w) = a.weight_decay {
        cfg.optimizer.weight_decay = w;
    }
    cfg.seed = a.seed;
    cfg.ckpt_every = a.ckpt_every;
    cfg.refine_mode = a.refine_mode;
    let aug = AugmentConfig {
        p_instance: a.p_instance,
        p_scan: a.p_scan,
        boundary_sigma: a.boundary_sigma,
        clutter_source: a.clutter_source,
        ..AugmentConfig::default()
    };
    let scans = load_dataset(&a.data.join(SCANS_FILE))?;
    let (val, val_preds) = match &a.val {
        Some(dir) => load_pairs(dir, None)?,
        None => (Vec::new(), Vec::new()),
    };
    let data = TrainData {
        train: &scans,
        val: &val,
        val_preds: &val_preds,
    };
    let (_, history) = train(&net, &cfg, &aug, data, Some(&a.out), |r| {
        let val = r.val_pq.map_or(String::new(), |p| format!(" val_PQ {p:.4}"));
        println!("epoch {:3} total {:.5} lr {}{val}", r.epoch, r.loss.total, r.lr);
    })?;

    let mut m = RunManifest::new("train", argv, workers);
    m.config_text("net.", &net.to_text());
    for (k, v) in [
        ("epochs", cfg.epochs.to_string()),
        ("batch_size", cfg.batch_size.to_string()),
        ("lr", cfg.optimizer.lr.to_string()),
        ("lr_drop_epoch", cfg.lr_drop_epoch.to_string()),
        ("lr_drop_factor", cfg.lr_drop_factor.to_string()),
        ("weight_decay", cfg.optimizer.weight_decay.to_string()),
        ("beta1", cfg.optimizer.beta1.to_string()),
        ("beta2", cfg.optimizer.beta2.to_string()),
        ("adam_epsilon", cfg.optimizer.epsilon.to_string()),
        ("ckpt_every", cfg.ckpt_every.to_string()),
        ("refine_mode", cfg.refine_mode.to_string()),
        ("p_instance", aug.p_instance.to_string()),
        ("p_scan", aug.p_scan.to_string()),
        ("boundary_sigma", aug.boundary_sigma.to_string()),
        ("clutter_source", aug.clutter_source.to_string()),
    ] {
        m.set(k, v);
    }
    m.seeds.insert("train".into(), cfg.seed);
    m.seeds.insert("net".into(), net.seed);
    m.inputs.push(a.data.join(SCANS_FILE).display().to_string());
    if let Some(v) = &a.val {
        m.inputs.push(v.display().to_string());
    }
    m.outputs.push(a.out.join("history.csv").display().to_string());
    m.outputs.push(a.out.join("net.cfg").display().to_string());
    m.timings_ms.insert("total".into(), ms(t0));
    m.write(&a.out)?;
    println!("trained {} epochs; history in {}", history.records.len(), a.out.join("history.csv").display());
    Ok(0)
}

/// Network and parameters from a checkpoint, with the config taken from
/// the flags or from `net.cfg` beside the checkpoint.
fn load_network(net: &NetArgs, checkpoint: &Path) -> Result<(Network, ParamStore)> {
    let beside = checkpoint.parent().map(|d| d.join("net.cfg"));
    let cfg = net.resolve(Preset::Desk, beside.as_deref())?;
    Network::load(&cfg, checkpoint)
}

pub fn cmd_eval(a: &EvalArgs, argv: &[String], workers: usize) -> Result<i32> {
    let t0 = Instant::now();
    let (scans, preds) = load_pairs(&a.data, a.preds.as_deref())?;
    let loaded = match a.source {
        Source::Checkpoint => {
            let ckpt = a
                .checkpoint
                .as_ref()
                .ok_or_else(|| Error::InvalidArgument("--source checkpoint needs --checkpoint".into()))?;
            Some(load_network(&a.net, ckpt)?)
        }
        Source::Surrogate => None,
    };
    let source = match &loaded {
        Some((n, s)) => ClassSource::Network(n, s),
        None => ClassSource::GroundTruth,
    };
    let combine = if a.refine { Combine::Refine(a.refine_mode) } else { Combine::Vote };
    let (stats, outputs) = evaluate(&scans, &preds, |s, p| panoptic(source, combine, s, p))?;
    mkdir(&a.out)?;
    let report = stats.report();
    write(&a.out.join("metrics.txt"), &report)?;
    write(&a.out.join("metrics.csv"), &stats.to_csv())?;
    save_panoptic(&outputs, &a.out.join("panoptic.txt"))?;
    print!("{report}");

    let mut m = RunManifest::new("eval", argv, workers);
    m.set("source", format!("{:?}", a.source).to_lowercase());
    m.set("refine", a.refine);
    m.set("refine_mode", a.refine_mode);
    if let Some((n, _)) = &loaded {
        m.config_text("net.", &n.config.to_text());
    }
    m.seeds.insert("seed".into(), a.seed);
    m.inputs.push(a.data.join(SCANS_FILE).display().to_string());
    m.inputs.push(a.preds.clone().unwrap_or(a.data.join(PREDS_FILE)).display().to_string());
    m.inputs.extend(a.checkpoint.iter().map(|p| p.display().to_string()));
    m.outputs = ["metrics.txt", "metrics.csv", "panoptic.txt"].iter().map(|f| a.out.join(f).display().to_string()).collect();
    m.timings_ms.insert("total".into(), ms(t0));
    m.write(&a.out)?;
    Ok(0)
}

pub fn cmd_gradcheck(a: &GradcheckArgs, argv: &[String], workers: usize) -> Result<i32> {
    let t0 = Instant::now();
    let cfg = a.net.resolve(Preset::Toy, None)?;
    let check = objective_gradient_check(&cfg, a.points, a.seed, a.h)?;
    let mut text = format!(
        "gradient check: {} points, h={:e}, tolerance {:e}, breakpoint gap {:.3e}, relu margin {:.3e}\n",
        check.points, a.h, a.tol, check.breakpoint_gap, check.relu_margin
    );
    text.push_str(&format!("{:<32} {:>8} {:>14} {:>14}  status\n", "component", "entries", "max_rel_err", "max_abs_grad"));
    let mut failed = 0;
    for t in &check.report.tensors {
        let ok = t.max_relative_error < a.tol;
        failed += (!ok) as usize;
        text.push_str(&format!(
            "{:<32} {:>8} {:>14.3e} {:>14.3e}  {}\n",
            t.name,
            t.entries,
            t.max_relative_error,
            t.max_abs_analytic,
            if ok { "ok" } else { "FAIL" }
        ));
    }
    text.push_str(&format!("max relative error {:.3e}\n", check.report.max_relative_error()));
    print!("{text}");
    if let Some(out) = &a.out {
        mkdir(out)?;
        write(&out.join("gradcheck.txt"), &text)?;
        let mut m = RunManifest::new("gradcheck", argv, workers);
        m.config_text("net.", &cfg.to_text());
        m.set("points", a.points);
        m.set("h", a.h);
        m.set("tol", a.tol);
        m.seeds.insert("seed".into(), a.seed);
        m.outputs.push(out.join("gradcheck.txt").display().to_string());
        m.timings_ms.insert("total".into(), ms(t0));
        m.write(out)?;
    }
    if failed > 0 {
        eprintln!("{failed} components exceed {:e}", a.tol);
        return Ok(3);
    }
    Ok(0)
}

/// Latency summary in milliseconds.
#[derive(Clone, Debug, PartialEq)]
pub struct Latency {
    pub samples: usize,
    pub mean: f64,
    pub median: f64,
    pub p95: f64,
}

impl Latency {
    pub fn from_ms(mut v: Vec<f64>) -> Self {
        v.sort_by(f64::total_cmp);
        let n = v.len();
        let at = |q: f64| if n == 0 { f64::NAN } else { v[((q * (n - 1) as f64).round() as usize).min(n - 1)] };
        Latency {
            samples: n,
            mean: if n == 0 { f64::NAN } else { v.iter().sum::<f64>() / n as f64 },
            median: at(0.5),
            p95: at(0.95),
        }
    }
}

/// Times `panoptic` once per scan and repetition, single-threaded.
pub fn bench_latency(
    net: &Network,
    store: &ParamStore,
    scans: &[RadarScan],
    preds: &[MovingPrediction],
    mode: RefineMode,
    repetitions: usize,
    warmup: usize,
) -> Result<(Latency, usize)> {
    let source = ClassSource::Network(net, store);
    let combine = Combine::Refine(mode);
    for (s, p) in scans.iter().zip(preds).cycle().take(warmup.min(scans.len() * 4)) {
        panoptic(source, combine, s, p)?;
    }
    let mut times = Vec::with_capacity(scans.len() * repetitions);
    let mut points = 0;
    for _ in 0..repetitions {
        for (s, p) in scans.iter().zip(preds) {
            let t = Instant::now();
            let out = panoptic(source, combine, s, p)?;
            times.push(ms(t));
            points += out.moving.iter().filter(|&&m| m).count();
        }
    }
    let n = times.len().max(1);
    Ok((Latency::from_ms(times), points / n))
}

/// Every point flagged moving, keeping ground-truth ids.
pub fn all_moving(scan: &RadarScan) -> MovingPrediction {
    MovingPrediction {
        scan_id: scan.scan_id.clone(),
        moving: vec![true; scan.len()],
        instance_id: scan.gt.iter().map(|l| l.instance_id).collect(),
    }
}

/// Mean time in ms of the grid and the brute-force ball query on `n`
/// uniform points in a 100 m square.
pub fn bench_ball_query(n: usize, radius: f64, nmax: usize, seed: u64) -> Result<(f64, f64)> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let pts: Vec<[f64; 2]> = (0..n).map(|_| [rng.random_range(0.0..100.0), rng.random_range(0.0..100.0)]).collect();
    let reps = 20;
    ball_query(&pts, radius, nmax)?;
    let t = Instant::now();
    for _ in 0..reps {
        ball_query(&pts, radius, nmax)?;
    }
    let grid = ms(t) / reps as f64;
    let t = Instant::now();
    for _ in 0..reps {
        ball_query_brute_force(&pts, radius, nmax)?;
    }
    Ok((grid, ms(t) / reps as f64))
}

pub fn cmd_bench(a: &BenchArgs, argv: &[String], workers: usize) -> Result<i32> {
    let t0 = Instant::now();
    let (net, store) = match &a.checkpoint {
        Some(c) => load_network(&a.net, c)?,
        None => Network::new(&a.net.resolve(Preset::Paper, None)?)?,
    };
    let (scans, mut preds) = load_pairs(&a.data, None)?;
    if a.all_moving {
        preds = scans.iter().map(all_moving).collect();
    }
    let repetitions = a.repetitions.unwrap_or(MIN_BENCH_SAMPLES.div_ceil(scans.len().max(1)));
    let (lat, mean_points) = bench_latency(&net, &store, &scans, &preds, a.refine_mode, repetitions, a.warmup)?;
    let mut text = format!(
        "latency over {} samples ({} scans x {} repetitions), mean {} network points per scan\n",
        lat.samples,
        scans.len(),
        repetitions,
        mean_points
    );
    text.push_str(&format!("mean {:.3} ms  median {:.3} ms  p95 {:.3} ms\n", lat.mean, lat.median, lat.p95));
    let mut m = RunManifest::new("bench", argv, workers);
    if let Some(n) = a.ball_query_points {
        let (grid, brute) = bench_ball_query(n, net.config.radius, net.config.nmax, a.seed)?;
        text.push_str(&format!(
            "ball query on {n} points: grid {grid:.3} ms, brute force {brute:.3} ms, speedup {:.1}x\n",
            brute / grid
        ));
        m.timings_ms.insert("ball_query_grid".into(), grid);
        m.timings_ms.insert("ball_query_brute".into(), brute);
    }
    print!("{text}");
    if let Some(out) = &a.out {
        mkdir(out)?;
        write(&out.join("bench.txt"), &text)?;
        m.config_text("net.", &net.config.to_text());
        m.set("repetitions", repetitions);
        m.set("warmup", a.warmup);
        m.set("all_moving", a.all_moving);
        m.set("refine_mode", a.refine_mode);
        m.seeds.insert("seed".into(), a.seed);
        m.inputs.push(a.data.join(SCANS_FILE).display().to_string());
        m.inputs.extend(a.checkpoint.iter().map(|p| p.display().to_string()));
        m.outputs.push(out.join("bench.txt").display().to_string());
        m.timings_ms.insert("latency_mean".into(), lat.mean);
        m.timings_ms.insert("latency_median".into(), lat.median);
        m.timings_ms.insert("latency_p95".into(), lat.p95);
        m.timings_ms.insert("total".into(), ms(t0));
        m.write(out)?;
    }
    Ok(0)
}
