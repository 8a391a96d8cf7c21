//! Command-line driver: reproducible runs over JSON configs.
//!
//! Exit codes: 0 success, 1 validation error, 2 verification failure,
//! 3 I/O error.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::load_config;

/// Error with the process exit code it maps to.
pub struct CmdError {
    pub code: u8,
    pub err: anyhow::Error,
}

pub type CmdResult<T> = Result<T, CmdError>;

impl CmdError {
    fn config(err: impl Into<anyhow::Error>) -> Self {
        Self {
            code: 1,
            err: err.into(),
        }
    }

    fn io(err: impl Into<anyhow::Error>) -> Self {
        Self {
            code: 3,
            err: err.into(),
        }
    }
}

impl From<corrnoise::Error> for CmdError {
    fn from(err: corrnoise::Error) -> Self {
        let code = match &err {
            corrnoise::Error::Io(_) => 3,
            _ => 1,
        };
        Self {
            code,
            err: err.into(),
        }
    }
}

impl From<std::io::Error> for CmdError {
    fn from(err: std::io::Error) -> Self {
        Self {
            code: 3,
            err: err.into(),
        }
    }
}

#[derive(Parser)]
#[command(
    name = "corrnoise",
    version,
    about = "Correlated-noise engine, coalesced pre-computation, and memory-tier cost models"
)]
struct Cli {
    /// JSON config document for the subcommand.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override scalar config leaves: --set cost.band=32
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a validated mixing-matrix document.
    GenMixing,
    /// Generate synthetic access traces (optionally one file per alpha).
    GenTrace,
    /// Pre-compute and coalesce noise into a store file, with stats.
    Precompute,
    /// Run the correctness suites and report pass/fail per suite.
    Verify,
    /// Evaluate the execution-strategy cost model, optionally over sweeps.
    Simulate,
    /// Train the toy model eagerly and/or lazily and diff the results.
    TrainToy,
}

fn main() -> ExitCode {
    if let Ok(threads) = std::env::var("CORRNOISE_THREADS") {
        match threads.parse::<usize>() {
            Ok(n) if n > 0 => {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
            _ => {
                eprintln!("error: CORRNOISE_THREADS must be a positive integer");
                return ExitCode::from(1);
            }
        }
    }
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {:#}", e.err);
            ExitCode::from(e.code)
        }
    }
}

fn run(cli: &Cli) -> CmdResult<u8> {
    let config = cli.config.as_deref();
    let overrides = &cli.overrides;
    match cli.command {
        Command::GenMixing => {
            commands::cmd_gen_mixing(load_config(config, overrides).map_err(CmdError::config)?)?;
            Ok(0)
        }
        Command::GenTrace => {
            commands::cmd_gen_trace(load_config(config, overrides).map_err(CmdError::config)?)?;
            Ok(0)
        }
        Command::Precompute => {
            commands::cmd_precompute(load_config(config, overrides).map_err(CmdError::config)?)?;
            Ok(0)
        }
        Command::Verify => {
            let passed =
                commands::cmd_verify(load_config(config, overrides).map_err(CmdError::config)?)?;
            Ok(if passed { 0 } else { 2 })
        }
        Command::Simulate => {
            commands::cmd_simulate(load_config(config, overrides).map_err(CmdError::config)?)?;
            Ok(0)
        }
        Command::TrainToy => {
            commands::cmd_train_toy(load_config(config, overrides).map_err(CmdError::config)?)?;
            Ok(0)
        }
    }
}
