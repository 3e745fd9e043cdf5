//! The `mdseg` command line: dataset generation, training, evaluation,
//! inference and gradient verification.

mod commands;
pub mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

pub use config::RunConfig;

use crate::data::{DatasetConfig, DatasetPreset, Split};
use crate::error::Error;
use crate::model::{ArchPreset, Variant};

/// Environment variable capping worker threads.
pub const THREADS_ENV: &str = "MDSEG_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "mdseg",
    version,
    about = "Multi-domain FCN segmentation on synthetic phantoms"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// JSON run configuration; missing fields take defaults.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Override one config field, e.g. `--set train.epochs=3`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a synthetic dataset to PGM files plus a JSON manifest.
    GenData(GenDataArgs),
    /// Train a model and write a checkpoint and per-epoch CSV.
    Train(TrainArgs),
    /// Score a checkpoint on a dataset split.
    Eval(EvalArgs),
    /// Segment one PGM image.
    Infer(InferArgs),
    /// Finite-difference check of every layer in an architecture preset.
    GradCheck(GradCheckArgs),
    /// Print the effective configuration as JSON.
    ShowConfig,
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Defaults to the config's `seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Replace the config's `data` section with a named layout; `--set`
    /// overrides apply on top.
    #[arg(long)]
    pub preset: Option<DatasetPreset>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset directory or manifest file.
    #[arg(long, value_name = "DIR")]
    pub data: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    #[arg(long, default_value = "md")]
    pub variant: Variant,
    /// The one domain an SD model is trained on.
    #[arg(long)]
    pub domain: Option<usize>,
    /// Per-epoch CSV; defaults to the checkpoint path with a `.csv` extension.
    #[arg(long, value_name = "FILE")]
    pub stats: Option<PathBuf>,
    /// Train on context crops around each structure (a refinement model).
    #[arg(long)]
    pub crops: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, value_name = "DIR")]
    pub data: PathBuf,
    #[arg(long, value_name = "FILE", required_unless_present = "oracle")]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    pub split: Split,
    /// Evaluate only this domain; required for SD checkpoints.
    #[arg(long)]
    pub domain: Option<usize>,
    #[arg(long)]
    pub refine: bool,
    /// Model for refinement passes; defaults to the main checkpoint.
    #[arg(long, value_name = "FILE", requires = "refine")]
    pub refine_checkpoint: Option<PathBuf>,
    /// Predict the ground truth instead of running a model.
    #[arg(long, conflicts_with = "checkpoint")]
    pub oracle: bool,
    /// Write `<PREFIX>.txt` and `<PREFIX>.json`.
    #[arg(long, value_name = "PREFIX")]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long, value_name = "FILE")]
    pub checkpoint: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub image: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub domain: usize,
    #[arg(long)]
    pub refine: bool,
    #[arg(long, value_name = "FILE", requires = "refine")]
    pub refine_checkpoint: Option<PathBuf>,
    /// Output mask, `{0, 255}` PGM.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    /// Also write the image with the mask boundary drawn in white.
    #[arg(long, value_name = "FILE")]
    pub overlay: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradCheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Seeds per layer, starting at `--seed`.
    #[arg(long, default_value_t = 5)]
    pub seeds: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub tolerance: f64,
    /// Defaults to the config's `arch`.
    #[arg(long)]
    pub arch: Option<ArchPreset>,
}

/// Why a command failed; usage errors exit with 2, everything else with 1.
#[derive(Debug, thiserror::Error)]
pub enum Failure {
    #[error("usage: {0}")]
    Usage(String),
    #[error(transparent)]
    Run(#[from] Error),
    #[error("{0}")]
    Check(String),
}

impl Failure {
    pub fn exit_code(&self) -> ExitCode {
        match self {
            Failure::Usage(_) => ExitCode::from(2),
            _ => ExitCode::FAILURE,
        }
    }
}

/// Size the global worker pool from [`THREADS_ENV`] if set.
pub fn init_threads() -> Result<(), Failure> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n >= 1)
        .ok_or_else(|| Failure::Usage(format!("{THREADS_ENV}={raw:?} is not a positive integer")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::Check(format!("cannot size thread pool: {e}")))
}

pub fn run(cli: Cli) -> Result<(), Failure> {
    let mut base = match &cli.global.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    // a preset replaces the data section before any `--set` lands on it
    if let Command::GenData(GenDataArgs { preset: Some(p), .. }) = &cli.command {
        base.data = DatasetConfig::preset(*p);
    }
    let config = base.with_overrides(&cli.global.overrides)?;
    match cli.command {
        Command::GenData(a) => commands::gen_data(config, a),
        Command::Train(a) => commands::train(config, a),
        Command::Eval(a) => commands::eval(config, a),
        Command::Infer(a) => commands::infer(config, a),
        Command::GradCheck(a) => commands::grad_check(config, a),
        Command::ShowConfig => {
            config.validate()?;
            print!("{}", config.to_json());
            Ok(())
        }
    }
}

/// Parse `std::env::args`, run, and map the outcome to an exit status.
pub fn main() -> ExitCode {
    let cli = Cli::parse();
    match init_threads().and_then(|()| run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("mdseg: {e}");
            e.exit_code()
        }
    }
}
