//! Operator entry point: train the arbitrator policy in simulation, replay a
//! frozen policy, run fixed-batch baselines, and aggregate run artifacts.
//!
//! Exit codes: 0 success, 1 runtime abort, 2 usage/config error.

mod report;
mod runs;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, unreadable config, invalid values: exit 2.
    Config(String),
    /// A started run failed: exit 1.
    Runtime(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Runtime(m) => write!(f, "runtime error: {m}"),
        }
    }
}

impl From<dynamix_core::CoreError> for CliError {
    fn from(e: dynamix_core::CoreError) -> Self {
        match e {
            dynamix_core::CoreError::Config(m) => CliError::Config(m),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<dynamix_session::SessionError> for CliError {
    fn from(e: dynamix_session::SessionError) -> Self {
        match e {
            dynamix_session::SessionError::Core(c) => c.into(),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(format!("io: {e}"))
    }
}

pub type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Train,
    Infer,
    Baseline,
    Report,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TransportArg {
    Inproc,
    Socket,
}

/// Adaptive batch-size arbitration for simulated BSP training clusters.
#[derive(Debug, Parser)]
#[command(name = "dynamix", version, about)]
pub struct Cli {
    /// What to run: train | infer | baseline | report.
    #[arg(long, value_enum)]
    pub mode: Mode,

    /// Run configuration JSON (cluster, curve, coefficients, schedule).
    /// Defaults to the built-in four-worker desk cluster.
    #[arg(long)]
    pub config: Option<PathBuf>,

    /// Run seed; repeat the flag for multi-seed runs. Defaults to the
    /// config document's seed.
    #[arg(long = "seed")]
    pub seeds: Vec<u64>,

    /// Override the schedule's episode count.
    #[arg(long)]
    pub episodes: Option<u64>,

    /// Override the schedule's steps per episode.
    #[arg(long)]
    pub steps: Option<u64>,

    /// Fixed batch size for baseline mode; repeat for a sweep.
    #[arg(long = "batch-size")]
    pub batch_sizes: Vec<u32>,

    /// Policy checkpoint to load (infer mode).
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,

    /// Output directory (train/infer/baseline) or run directory to
    /// aggregate (report).
    #[arg(long)]
    pub out: Option<PathBuf>,

    /// Worker/arbitrator transport.
    #[arg(long, value_enum, default_value_t = TransportArg::Inproc)]
    pub transport: TransportArg,

    /// Listen address for the socket transport.
    #[arg(long, default_value = "127.0.0.1:0")]
    pub listen: String,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter("DYNAMIX_LOG")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ CliError::Config(_)) => {
            eprintln!("dynamix: {e}");
            ExitCode::from(2)
        }
        Err(e @ CliError::Runtime(_)) => {
            eprintln!("dynamix: {e}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.mode {
        Mode::Train => runs::cmd_train(&cli),
        Mode::Infer => runs::cmd_infer(&cli),
        Mode::Baseline => runs::cmd_baseline(&cli),
        Mode::Report => report::cmd_report(&cli),
    }
}
