//! Command-line driver: a TOML run config, a handful of subcommands and
//! staged, checksummed outputs.
//!
//! Every command loads and validates all of its inputs first, computes its
//! outputs in memory, and only then touches the output directory.

use std::ffi::OsString;
use std::path::PathBuf;

use bflva_core::ensemble::EnsembleVariant;
use clap::{Parser, Subcommand};
use thiserror::Error;

pub mod commands;
pub mod config;
pub mod output;

pub use config::RunConfig;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad config, flags or inputs; detected before any work starts.
    #[error("{0}")]
    Validation(String),
    /// Data or model failures while running.
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn validation(msg: impl Into<String>) -> Self {
        Self::Validation(msg.into())
    }

    pub fn runtime(e: impl std::fmt::Display) -> Self {
        Self::Runtime(e.to_string())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Validation(_) => 1,
            Self::Runtime(_) => 2,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "bflva", version, about = "Federated latent class ensembles for cause-of-death assignment")]
pub struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed applied to every random component.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; defaults to the available hardware parallelism.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Output directory; overrides `paths.out`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Override one config leaf, e.g. `--set ensemble.chains=2`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Train a base model per labeled dataset and write its summary.
    Train {
        /// Train only this domain.
        #[arg(long)]
        domain: Option<String>,
    },
    /// Verify summaries and write canonical copies plus a registry listing.
    Export,
    /// Fit the global ensemble on the target.
    Ensemble {
        #[arg(long)]
        variant: Option<EnsembleVariant>,
    },
    /// Per-death cause probabilities from a stored posterior.
    Classify {
        #[arg(long)]
        posterior: Option<PathBuf>,
    },
    /// Confusion-matrix calibration of the base models on the target.
    Calibrate {
        /// Rate of the Gamma prior on the shrinkage weights.
        #[arg(long)]
        beta_rate: Option<f64>,
    },
    /// Generate synthetic domains from the `[simulate]` block.
    Simulate,
    /// Leave-one-domain-out experiment over the configured datasets.
    Lodo,
    /// Text report for a posterior JSON or a LODO CSV.
    Report {
        #[arg(long)]
        input: PathBuf,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Train { .. } => "train",
            Self::Export => "export",
            Self::Ensemble { .. } => "ensemble",
            Self::Classify { .. } => "classify",
            Self::Calibrate { .. } => "calibrate",
            Self::Simulate => "simulate",
            Self::Lodo => "lodo",
            Self::Report { .. } => "report",
        }
    }
}

/// Run a parsed command line inside a pool of the requested size. Returns the
/// files written.
pub fn run(cli: &Cli) -> Result<Vec<PathBuf>, CliError> {
    let workers = match cli.workers {
        Some(0) => return Err(CliError::validation("--workers must be at least 1")),
        Some(n) => n,
        None => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(CliError::runtime)?;
    pool.install(|| commands::dispatch(cli))
}

/// Parse `args` and run, without printing anything.
pub fn run_args<I, T>(args: I) -> Result<Vec<PathBuf>, CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| CliError::validation(e.to_string()))?;
    run(&cli)
}

/// Parse `args`, run, report errors on stderr and return the exit code.
pub fn run_from_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(paths) => {
            for p in paths {
                println!("{}", p.display());
            }
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
