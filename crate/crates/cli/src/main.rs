//! `evsplat`: simulate datasets, deblur with events, train, render and
//! evaluate.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
//! failure.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use evsplat_core::error::{Error, ErrorKind};

#[derive(Debug, Parser)]
#[command(name = "evsplat", version, about = "Event-assisted deblurring Gaussian splatting")]
struct Cli {
    /// Overrides the seed of the scene or training config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; all cores when omitted.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// More log output; repeat for debug messages.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render a synthetic dataset with blur, events and true sharp frames.
    Simulate(SimulateArgs),
    /// Recover latent sharp frames from a blurry image and its events.
    Edi(EdiArgs),
    /// Optimize a scene on a dataset.
    Train(TrainArgs),
    /// Render a trained scene at the poses of a dataset.
    Render(RenderArgs),
    /// Compare renders against reference images.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Scene config (TOML).
    pub config: PathBuf,
    /// Output dataset directory.
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EdiArgs {
    /// Blurry image (`.png` or `.fimg`).
    pub blur: PathBuf,
    /// Events of the exposure (`EVT1`).
    pub events: PathBuf,
    /// Output directory.
    pub out: PathBuf,
    /// Contrast threshold; defaults to 0.25.
    #[arg(long, conflicts_with = "calibrate")]
    pub theta: Option<f64>,
    /// Pick the threshold from `--grid` by minimal total variation.
    #[arg(long)]
    pub calibrate: bool,
    /// Calibration grid as `start:stop:step`.
    #[arg(long, default_value = "0.05:0.5:0.01", requires = "calibrate")]
    pub grid: String,
    /// Number of event bins (latent frames minus one).
    #[arg(long, default_value_t = 4)]
    pub bins: usize,
    /// Exposure start time.
    #[arg(long, default_value_t = 0.0)]
    pub start: f64,
    /// Exposure length.
    #[arg(long, default_value_t = 0.04)]
    pub exposure: f64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset directory written by `simulate`.
    pub dataset: PathBuf,
    /// Output directory for checkpoint, log and metrics.
    pub out: PathBuf,
    /// Training config (TOML); built-in defaults when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the iteration count.
    #[arg(long)]
    pub iterations: Option<usize>,
    /// Drop the event term from the objective.
    #[arg(long)]
    pub no_event_loss: bool,
    /// Render latents at the estimated poses instead of deviating Gaussians.
    #[arg(long)]
    pub no_ade: bool,
    /// Continue from a checkpoint.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Split {
    All,
    Train,
    Holdout,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    /// Checkpoint written by `train`.
    pub checkpoint: PathBuf,
    /// Dataset directory providing poses, intrinsics and background.
    pub dataset: PathBuf,
    /// Output directory.
    pub out: PathBuf,
    /// Render at the estimated poses instead of the true ones.
    #[arg(long)]
    pub estimated: bool,
    #[arg(long, value_enum, default_value_t = Split::All)]
    pub split: Split,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Directory of rendered images.
    pub renders: PathBuf,
    /// Directory of reference images (same file names, or a dataset).
    pub reference: PathBuf,
    /// Output CSV.
    pub out: PathBuf,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let kind = err
        .chain()
        .find_map(|e| e.downcast_ref::<Error>())
        .map_or(ErrorKind::Data, Error::kind);
    match kind {
        ErrorKind::Config => 2,
        ErrorKind::Data => 3,
        ErrorKind::Numerical => 4,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot configure {n} threads: {e}");
            return ExitCode::from(2);
        }
    }
    let result = match &cli.command {
        Command::Simulate(a) => commands::simulate(a, cli.seed),
        Command::Edi(a) => commands::edi(a),
        Command::Train(a) => commands::train(a, cli.seed),
        Command::Render(a) => commands::render(a),
        Command::Eval(a) => commands::eval(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}

/// The error chain joined by `: `, skipping causes already quoted by the
/// message above them.
fn describe(err: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in err.chain() {
        let msg = cause.to_string();
        if out.contains(&msg) {
            continue;
        }
        if !out.is_empty() {
            out.push_str(": ");
        }
        out.push_str(&msg);
    }
    out
}
