//! Command-line front end for the mean field game solver: full solves
//! with file outputs, linear-solver benchmarks, condition-number sweeps
//! and snapshot inspection.

mod commands;
mod config;
mod manifest;
mod snapshot;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

/// Errors mapped to process exit codes: validation problems exit 1,
/// an unconverged run exits 2, I/O failures exit 3.
#[derive(Debug)]
pub enum CliError {
    Validation(String),
    Unconverged(String),
    Io(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Validation(msg) => write!(f, "invalid configuration: {msg}"),
            CliError::Unconverged(msg) => write!(f, "run did not converge: {msg}"),
            CliError::Io(msg) => write!(f, "i/o error: {msg}"),
        }
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Unconverged(_) => 2,
            CliError::Io(_) => 3,
        }
    }
}

#[derive(Parser)]
#[command(name = "mfg", version, about = "Time-dependent mean field game solver on the 2-torus")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a full solve and write manifest, snapshots and series.
    Solve { config: PathBuf },
    /// Sweep linear solvers over viscosities and grids, emitting a CSV
    /// of average inner iteration counts.
    BenchLinsolve { config: PathBuf },
    /// Estimate condition numbers of the normal operator over a
    /// viscosity sweep.
    CondEstimate { config: PathBuf },
    /// Describe a snapshot file and verify its checksum.
    Info { snapshot: PathBuf },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Solve { config } => commands::cmd_solve(config).and_then(|converged| {
            if converged {
                Ok(())
            } else {
                Err(CliError::Unconverged(
                    "iteration budget exhausted; outputs were still written".into(),
                ))
            }
        }),
        Command::BenchLinsolve { config } => commands::cmd_bench_linsolve(config),
        Command::CondEstimate { config } => commands::cmd_cond_estimate(config),
        Command::Info { snapshot } => commands::cmd_info(snapshot),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code())
        }
    }
}
