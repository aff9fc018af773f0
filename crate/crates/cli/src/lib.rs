//! `ppgbench` command-line interface.
//!
//! Exit codes: 0 on success, 1 on usage or validation errors, 2 when a run
//! fails after its inputs were accepted.

mod commands;

use std::ffi::OsString;
use std::fmt;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub const SEED_ENV: &str = "PPGBENCH_SEED";

#[derive(Debug, Parser)]
#[command(name = "ppgbench", version, about = "PPG blood-pressure benchmark toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset bundle.
    Synth(SynthArgs),
    /// Assign segments of a bundle to train/validation/calibration/test.
    Split(SplitArgs),
    /// Train one model on a bundle and split.
    Train(TrainArgs),
    /// Evaluate a trained model on a bundle.
    Eval(EvalArgs),
    /// Run a train-by-test grid experiment.
    Grid(GridArgs),
    /// Emit importance-weight tables.
    Weights(WeightsArgs),
    /// Earth mover's distance between label distributions.
    Emd(EmdArgs),
    /// Re-render Markdown and diff tables from grid CSV files.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// JSON generator config; flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output bundle directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub name: Option<String>,
    #[arg(long)]
    pub subjects: Option<usize>,
    #[arg(long)]
    pub segments: Option<usize>,
    #[arg(long)]
    pub length: Option<usize>,
    #[arg(long)]
    pub sbp_mean: Option<f64>,
    #[arg(long)]
    pub coupling: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    /// Output directory; also the bundle directory unless `--bundle` is given.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub bundle: Option<PathBuf>,
    /// JSON split spec; flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// calib, calibfree or aami.
    #[arg(long)]
    pub scenario: Option<String>,
    #[arg(long)]
    pub test_fraction: Option<f64>,
    #[arg(long)]
    pub val_fraction: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Base name of the written `<name>.csv` and `<name>.json`.
    #[arg(long, default_value = "split")]
    pub name: String,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// JSON with `model` (required) and `train` sections.
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub bundle: PathBuf,
    /// Split CSV; its sidecar is the same path with a `.json` extension.
    #[arg(long)]
    pub split: PathBuf,
    /// Weight tables from `weights` in bundle mode.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// A learning rate or `auto`.
    #[arg(long)]
    pub lr: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Output directory of a `train` run.
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long)]
    pub bundle: PathBuf,
    /// Restricts evaluation to one role of this split.
    #[arg(long)]
    pub split: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    pub role: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GridArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Defaults to the config's `output_dir`, else `results` next to it.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads; defaults to the number of CPUs.
    #[arg(long)]
    pub jobs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

/// Label sources: two histogram files, or two bundles with optional splits.
#[derive(Debug, Args)]
pub struct LabelSources {
    #[arg(long, requires = "test_hist", conflicts_with_all = ["train_bundle", "test_bundle"])]
    pub train_hist: Option<PathBuf>,
    #[arg(long, requires = "train_hist")]
    pub test_hist: Option<PathBuf>,
    #[arg(long, requires = "test_bundle")]
    pub train_bundle: Option<PathBuf>,
    /// Selects the train role of the training bundle.
    #[arg(long, requires = "train_bundle")]
    pub train_split: Option<PathBuf>,
    #[arg(long, requires = "train_bundle")]
    pub test_bundle: Option<PathBuf>,
    /// Selects `--test-role` of the test bundle.
    #[arg(long, requires = "test_bundle")]
    pub test_split: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    pub test_role: String,
}

#[derive(Debug, Args)]
pub struct WeightsArgs {
    #[command(flatten)]
    pub sources: LabelSources,
    #[arg(long, default_value_t = 1.0)]
    pub tau: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EmdArgs {
    #[command(flatten)]
    pub sources: LabelSources,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub grid: PathBuf,
    /// Weighted grid CSV; adds diff tables.
    #[arg(long)]
    pub weighted: Option<PathBuf>,
    /// Re-marks the top k per column when given.
    #[arg(long)]
    pub top_k: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug)]
pub enum CliError {
    /// Bad arguments, configs or input files.
    Invalid(String),
    /// Failure while running or writing results.
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Invalid(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Invalid(m) => write!(f, "invalid input: {m}"),
            CliError::Runtime(m) => write!(f, "run failed: {m}"),
        }
    }
}

pub(crate) trait Classify<T> {
    fn invalid(self) -> Result<T, CliError>;
    fn runtime(self) -> Result<T, CliError>;
}

impl<T, E: fmt::Display> Classify<T> for Result<T, E> {
    fn invalid(self) -> Result<T, CliError> {
        self.map_err(|e| CliError::Invalid(e.to_string()))
    }

    fn runtime(self) -> Result<T, CliError> {
        self.map_err(|e| CliError::Runtime(e.to_string()))
    }
}

/// Seed precedence: flag, then config file, then `PPGBENCH_SEED`.
pub fn resolve_seed(flag: Option<u64>, config: Option<u64>) -> Result<Option<u64>, CliError> {
    if let Some(s) = flag.or(config) {
        return Ok(Some(s));
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| CliError::Invalid(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
        Err(_) => Ok(None),
    }
}

/// Parses `args` (including the program name), runs the subcommand and
/// returns the process exit code.
pub fn dispatch<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let command: Vec<String> = args.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    match commands::run(cli.command, command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("ppgbench: {e}");
            e.exit_code()
        }
    }
}
