//! `linext` command-line front end.
//!
//! Exit codes: 0 on success, 1 on usage or validation errors, 2 on I/O
//! errors. Nothing is written when validation fails; every output file is
//! written atomically.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use linext_core::dsr::dsr;
use linext_core::io::{load_checkpoint, read_kitti_bin, write_atomic, write_kitti_bin};
use linext_core::metrics::{evaluate, MetricsReport};
use linext_core::pipeline::{complete, train_stage, CompleteOptions, Model, Scene, Stage, TrainOptions};
use linext_core::runtime::{bench_runtime, DEFAULT_TIMED, DEFAULT_WARMUP};
use linext_core::spatial::curve::MAX_BITS;
use linext_core::spatial::{serialize, CurveChoice, DEFAULT_BITS};
use linext_core::synth::{synth_scene, SceneSpec};
use linext_core::{Error, PointCloud, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "linext", version, about = "LiDAR scene completion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic scene: <output>/input.bin and <output>/gt.bin.
    Synth(SynthArgs),
    /// Replicate and corrupt a scan by distance.
    Dsr(DsrArgs),
    /// Write space-filling-curve codes of a scan as JSON.
    Serialize(SerializeArgs),
    /// Train the noise-to-coarse stage.
    TrainN2c(TrainArgs),
    /// Train the refinement stage on top of a trained noise-to-coarse checkpoint.
    TrainRefine(TrainArgs),
    /// Complete a scan with a trained checkpoint.
    Complete(CompleteArgs),
    /// Compare a completed cloud against ground truth.
    Eval(EvalArgs),
    /// Time inference over a directory of scans.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
struct Common {
    /// Run configuration: a JSON file, or inline JSON starting with '{'.
    #[arg(long)]
    config: Option<String>,
    /// Overrides the configuration seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long, default_value = ".")]
    output: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Scene description (JSON file or inline JSON); a street scene by default.
    #[arg(long)]
    scene: Option<String>,
}

#[derive(Debug, Args)]
struct DsrArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// Noise standard deviation in meters; overrides the configuration.
    #[arg(long)]
    sigma: Option<f64>,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum CurveArg {
    Z,
    Hilbert,
    Random,
}

impl From<CurveArg> for CurveChoice {
    fn from(c: CurveArg) -> Self {
        match c {
            CurveArg::Z => CurveChoice::Z,
            CurveArg::Hilbert => CurveChoice::Hilbert,
            CurveArg::Random => CurveChoice::Random,
        }
    }
}

#[derive(Debug, Args)]
struct SerializeArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    #[arg(long, value_enum, default_value = "random")]
    curve: CurveArg,
    #[arg(long, default_value_t = DEFAULT_BITS)]
    bits: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Input scan; repeat together with --gt for several scenes.
    #[arg(long, required = true)]
    input: Vec<PathBuf>,
    /// Ground truth for the matching --input.
    #[arg(long, required = true)]
    gt: Vec<PathBuf>,
    /// Checkpoint to write (rewritten every epoch).
    #[arg(long)]
    output: PathBuf,
    /// Starting parameters; required for train-refine.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Training log as line-delimited JSON; stderr when absent.
    #[arg(long)]
    log: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
struct CompleteArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Run the refinement stage.
    #[arg(long)]
    refine: bool,
    /// Append the input scan to the result.
    #[arg(long)]
    merge: bool,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Completed cloud.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    #[arg(long)]
    report: PathBuf,
    /// Write a CSV header and row instead of JSON.
    #[arg(long)]
    csv: bool,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
struct BenchArgs {
    /// Directory of .bin scans, processed in file-name order.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value_t = DEFAULT_WARMUP)]
    warmup: usize,
    #[arg(long, default_value_t = DEFAULT_TIMED)]
    timed: usize,
    #[arg(long)]
    report: PathBuf,
    #[arg(long)]
    refine: bool,
    #[command(flatten)]
    common: Common,
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_io() {
                2
            } else {
                1
            }
        }
    }
}

fn dispatch(command: Command) -> Result<(), Error> {
    match command {
        Command::Synth(a) => synth(a),
        Command::Dsr(a) => dsr_cmd(a),
        Command::Serialize(a) => serialize_cmd(a),
        Command::TrainN2c(a) => train(Stage::N2c, a),
        Command::TrainRefine(a) => train(Stage::Refine, a),
        Command::Complete(a) => complete_cmd(a),
        Command::Eval(a) => eval(a),
        Command::Bench(a) => bench(a),
    }
}

fn json_arg(value: &str) -> Result<String, Error> {
    if value.trim_start().starts_with('{') {
        Ok(value.to_owned())
    } else {
        Ok(std::fs::read_to_string(value)?)
    }
}

/// The configuration named on the command line, or `fallback`, with the seed
/// override applied.
fn config(common: &Common, fallback: Option<&RunConfig>) -> Result<RunConfig, Error> {
    let mut cfg = match (&common.config, fallback) {
        (Some(c), _) => RunConfig::from_json(&json_arg(c)?)?,
        (None, Some(f)) => f.clone(),
        (None, None) => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn read_scan(path: &Path) -> Result<PointCloud, Error> {
    let cloud = read_kitti_bin(path)?;
    if cloud.is_empty() {
        return Err(Error::Invalid(format!("{} holds no points", path.display())));
    }
    Ok(cloud)
}

fn synth(a: SynthArgs) -> Result<(), Error> {
    let spec = match &a.scene {
        Some(s) => SceneSpec::from_json(&json_arg(s)?)?,
        None => SceneSpec::street(),
    };
    let (input, gt) = synth_scene(&spec, a.seed)?;
    std::fs::create_dir_all(&a.output)?;
    write_kitti_bin(&input, &a.output.join("input.bin"))?;
    write_kitti_bin(&gt, &a.output.join("gt.bin"))?;
    eprintln!("scene {}: {} input points, {} ground-truth points", a.output.display(), input.len(), gt.len());
    Ok(())
}

fn dsr_cmd(a: DsrArgs) -> Result<(), Error> {
    let mut cfg = config(&a.common, None)?;
    if let Some(s) = a.sigma {
        cfg.noise_sigma = s;
        cfg.validate()?;
    }
    let input = read_scan(&a.input)?;
    let out = dsr(&input, cfg.repeat_counts, cfg.noise_sigma, cfg.seed)?;
    write_kitti_bin(&out, &a.output)?;
    eprintln!("{} points -> {} noisy points", input.len(), out.len());
    Ok(())
}

fn serialize_cmd(a: SerializeArgs) -> Result<(), Error> {
    if a.bits == 0 || a.bits > MAX_BITS {
        return Err(Error::Invalid(format!("bits {} out of range", a.bits)));
    }
    let input = read_scan(&a.input)?;
    let bounds = input.bounds().expect("non-empty").padded(1e-3);
    let code = serialize(&input, a.curve.into(), a.bits, &bounds, a.seed)?;
    write_atomic(&a.output, serde_json::to_string(&code)?.as_bytes())?;
    Ok(())
}

fn train(stage: Stage, a: TrainArgs) -> Result<(), Error> {
    if a.input.len() != a.gt.len() {
        return Err(Error::Invalid(format!("{} --input but {} --gt", a.input.len(), a.gt.len())));
    }
    if stage == Stage::Refine && a.checkpoint.is_none() {
        return Err(Error::Invalid("train-refine needs --checkpoint with a trained noise-to-coarse stage".into()));
    }
    let start = a.checkpoint.as_deref().map(load_checkpoint).transpose()?;
    let cfg = config(&a.common, start.as_ref().map(|c| &c.config))?;
    let (model, mut params) = match &start {
        Some(ck) => Model::from_checkpoint_with(ck, &cfg)?,
        None => Model::init(&cfg)?,
    };
    let scenes = a
        .input
        .iter()
        .zip(&a.gt)
        .map(|(i, g)| Ok(Scene { input: read_scan(i)?, gt: read_scan(g)? }))
        .collect::<Result<Vec<_>, Error>>()?;

    // The log is buffered so a failed run leaves no partial file behind.
    let mut log = Vec::new();
    let out = train_stage(
        stage,
        &scenes,
        &model,
        &mut params,
        TrainOptions { log: Some(&mut log), checkpoint: Some(a.output.clone()) },
    )?;
    match &a.log {
        Some(path) => write_atomic(path, &log)?,
        None => eprint!("{}", String::from_utf8_lossy(&log)),
    }
    if let (Some(first), Some(last)) = (out.history.first(), out.history.last()) {
        eprintln!("{} steps, cd {:.6} -> {:.6}", out.history.len(), first.cd, last.cd);
    }
    Ok(())
}

fn complete_cmd(a: CompleteArgs) -> Result<(), Error> {
    let ck = load_checkpoint(&a.checkpoint)?;
    let cfg = config(&a.common, Some(&ck.config))?;
    let (model, params) = Model::from_checkpoint_with(&ck, &cfg)?;
    let input = read_scan(&a.input)?;
    let opts = CompleteOptions { refine: a.refine, merge_input: a.merge, seed: cfg.seed };
    let out = complete(&input, &model, &params, opts)?;
    write_kitti_bin(&out, &a.output)?;
    eprintln!("{} points -> {} points", input.len(), out.len());
    Ok(())
}

fn eval(a: EvalArgs) -> Result<(), Error> {
    let cfg = config(&a.common, None)?;
    let pred = read_scan(&a.input)?;
    let gt = read_scan(&a.gt)?;
    let report = evaluate(&pred, &gt, &cfg.bounds)?;
    let text = if a.csv {
        format!("{}\n{}\n", MetricsReport::CSV_HEADER, report.csv_row())
    } else {
        serde_json::to_string_pretty(&report)?
    };
    write_atomic(&a.report, text.as_bytes())?;
    Ok(())
}

fn bench(a: BenchArgs) -> Result<(), Error> {
    if a.timed == 0 {
        return Err(Error::Invalid("--timed must be at least 1".into()));
    }
    let cfg = match &a.common.config {
        Some(_) => Some(config(&a.common, None)?),
        None => None,
    };
    let seed = a.common.seed.or(cfg.as_ref().map(|c| c.seed)).unwrap_or(0);
    let opts = CompleteOptions { refine: a.refine, merge_input: false, seed };
    let report = bench_runtime(&a.input, &a.checkpoint, cfg.as_ref(), opts, a.warmup, a.timed)?;
    write_atomic(&a.report, serde_json::to_string_pretty(&report)?.as_bytes())?;
    eprintln!("{} frames: mean {:.6} s, std {:.6} s", report.timed, report.mean, report.std);
    Ok(())
}
