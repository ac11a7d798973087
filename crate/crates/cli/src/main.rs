//! Command-line front end.
//!
//! Every run is described by one JSON config (`--config`); flags override
//! config keys. Machine output goes to `--out` or standard out, diagnostics
//! to standard error. Exit codes: 0 success, 1 usage error, 2 data error,
//! 3 numerical failure.

mod commands;
mod config;
mod error;

use clap::error::ErrorKind;
use clap::{ArgAction, Parser, Subcommand, ValueEnum};
use error::AppError;
use mtmf::eval::MetricKind;
use std::path::PathBuf;

#[derive(Parser, Debug)]
#[command(
    name = "mtmf",
    about = "Multi-task regression with a jointly learned feature subspace and shared hyperplane",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// JSON run configuration.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Output file (or directory for synth/export); standard out if omitted.
    #[arg(long, global = true, value_name = "PATH")]
    out: Option<PathBuf>,

    /// Overrides the seed found in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads for bench/sweep; MTMF_THREADS supplies the default.
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,

    /// Attach the generalization-bound diagnostic to the fit report.
    #[arg(long, global = true)]
    bound: bool,

    /// Metric override for bench/sweep.
    #[arg(long, global = true, value_enum)]
    metric: Option<MetricArg>,

    /// More diagnostics on standard error (repeatable).
    #[arg(short, long, global = true, action = ArgAction::Count)]
    verbose: u8,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Fit a method on a dataset and write the model JSON.
    Train,
    /// Apply a model JSON to a dataset and write predictions CSV.
    Predict,
    /// Run the repeated-split benchmark protocol from an experiment config.
    Bench,
    /// Generate a synthetic dataset plus its ground truth.
    Synth,
    /// Sensitivity sweep: hold one of gamma/beta fixed, vary the other.
    Sweep,
    /// Dump a model's offset matrix and hyperplane as CSV.
    Export,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum MetricArg {
    Nmse,
    Amse,
    Map,
}

impl From<MetricArg> for MetricKind {
    fn from(value: MetricArg) -> Self {
        match value {
            MetricArg::Nmse => MetricKind::Nmse,
            MetricArg::Amse => MetricKind::Amse,
            MetricArg::Map => MetricKind::Map,
        }
    }
}

/// Flag overrides handed to every command.
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub bound: bool,
    pub metric: Option<MetricKind>,
    pub verbosity: u8,
}

impl Overrides {
    /// Diagnostic line to standard error, gated by verbosity.
    pub fn log(&self, level: u8, message: &str) {
        if self.verbosity >= level {
            eprintln!("mtmf: {message}");
        }
    }
}

fn init_threads(flag: Option<usize>) -> Result<(), AppError> {
    let from_env = || {
        std::env::var("MTMF_THREADS")
            .ok()
            .and_then(|v| v.parse::<usize>().ok())
    };
    if let Some(n) = flag.or_else(from_env) {
        if n == 0 {
            return Err(AppError::usage("--threads must be >= 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| AppError::usage(format!("thread pool: {e}")))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), AppError> {
    init_threads(cli.threads)?;
    let config_path = cli
        .config
        .as_deref()
        .ok_or_else(|| AppError::usage("--config <path> is required"))?;
    let overrides = Overrides {
        out: cli.out.clone(),
        seed: cli.seed,
        bound: cli.bound,
        metric: cli.metric.map(MetricKind::from),
        verbosity: cli.verbose,
    };
    // the config must parse before any compute starts
    match cli.command {
        Command::Train => commands::train(config::load_config(config_path)?, &overrides),
        Command::Predict => commands::predict(config::load_config(config_path)?, &overrides),
        Command::Bench => commands::bench(config::load_config(config_path)?, &overrides),
        Command::Synth => commands::synth(config::load_config(config_path)?, &overrides),
        Command::Sweep => commands::sweep(config::load_config(config_path)?, &overrides),
        Command::Export => commands::export(config::load_config(config_path)?, &overrides),
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{e}");
            std::process::exit(0);
        }
        Err(e) => {
            // synopsis and message belong on standard error
            eprint!("{e}");
            std::process::exit(1);
        }
    };
    match run(cli) {
        Ok(()) => {}
        Err(e) => {
            eprintln!("mtmf: error: {}", e.message());
            std::process::exit(e.exit_code());
        }
    }
}
