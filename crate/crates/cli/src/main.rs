//! Command-line front end: each subcommand writes its artifacts into `--out`
//! and prints one JSON summary line `{cmd, elapsed_ms, outputs, status}`.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use serde_json::json;

use crate::commands::*;
use crate::config::CommonArgs;

/// Exit code for invalid configuration.
const EXIT_VALIDATION: u8 = 2;
/// Exit code for numerical failures inside a module.
const EXIT_NUMERIC: u8 = 3;
/// Exit code for I/O and serialization failures.
const EXIT_IO: u8 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error(transparent)]
    Core(#[from] brownlab::Error),
    #[error("I/O failure: {0}")]
    Io(#[from] std::io::Error),
    #[error("CSV output failure: {0}")]
    Csv(#[from] csv::Error),
    #[error("JSON output failure: {0}")]
    Json(#[from] serde_json::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => EXIT_VALIDATION,
            CliError::Core(e) if e.is_validation() => EXIT_VALIDATION,
            CliError::Core(_) => EXIT_NUMERIC,
            CliError::Io(_) | CliError::Csv(_) | CliError::Json(_) => EXIT_IO,
        }
    }

    fn status(&self) -> &'static str {
        match self.exit_code() {
            EXIT_VALIDATION => "invalid_config",
            EXIT_NUMERIC => "numerical_failure",
            _ => "io_failure",
        }
    }
}

/// Brown measures of u·b_{s,τ}: domains, densities, potentials, push-forwards,
/// moments and finite-N simulation.
#[derive(Debug, Parser)]
#[command(name = "brownlab", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Boundary profile nodes and the boundary polyline of Σ_{s,τ}.
    Domain(DomainArgs),
    /// Brown density raster as CSV and PGM.
    Density(DensityArgs),
    /// Exact draws from the Brown measure.
    Sample(SampleArgs),
    /// Regularized log potential S and its gradient on a grid.
    Potential(PotentialArgs),
    /// Finite-difference residuals of the τ- and r-equations at interior points.
    PdeCheck(PdeCheckArgs),
    /// Push-forward pairs and the chi-square test of Φ_{s,τ}.
    Pushforward(PushforwardArgs),
    /// ∗-moment trajectories from the moment hierarchy.
    Moments(MomentsArgs),
    /// Finite-N eigenvalue cloud and its comparison with the density.
    Simulate(SimulateArgs),
    /// Monte-Carlo comparison of potentials or moments with the predictions.
    Compare(CompareArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Domain(_) => "domain",
            Command::Density(_) => "density",
            Command::Sample(_) => "sample",
            Command::Potential(_) => "potential",
            Command::PdeCheck(_) => "pde-check",
            Command::Pushforward(_) => "pushforward",
            Command::Moments(_) => "moments",
            Command::Simulate(_) => "simulate",
            Command::Compare(_) => "compare",
        }
    }

    fn common(&self) -> &CommonArgs {
        match self {
            Command::Domain(a) => &a.common,
            Command::Density(a) => &a.common,
            Command::Sample(a) => &a.common,
            Command::Potential(a) => &a.common,
            Command::PdeCheck(a) => &a.common,
            Command::Pushforward(a) => &a.common,
            Command::Moments(a) => &a.common,
            Command::Simulate(a) => &a.common,
            Command::Compare(a) => &a.common,
        }
    }

    fn run(&self) -> Result<Vec<PathBuf>, CliError> {
        std::fs::create_dir_all(&self.common().out)?;
        match self {
            Command::Domain(a) => domain(a),
            Command::Density(a) => density(a),
            Command::Sample(a) => sample(a),
            Command::Potential(a) => potential(a),
            Command::PdeCheck(a) => pde_check(a),
            Command::Pushforward(a) => pushforward(a),
            Command::Moments(a) => moments(a),
            Command::Simulate(a) => simulate(a),
            Command::Compare(a) => compare(a),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let start = Instant::now();
    if let Some(k) = cli.cmd.common().threads {
        if k == 0 {
            eprintln!("error: --threads must be positive");
            return ExitCode::from(EXIT_VALIDATION);
        }
        std::env::set_var(brownlab::rmt_lab::THREADS_ENV, k.to_string());
    }
    let result = brownlab::rmt_lab::with_threads(|| cli.cmd.run());
    let elapsed_ms = start.elapsed().as_millis() as u64;
    let (outputs, status, code) = match result {
        Ok(paths) => (paths, "ok", ExitCode::SUCCESS),
        Err(e) => {
            eprintln!("error: {e}");
            (Vec::new(), e.status(), ExitCode::from(e.exit_code()))
        }
    };
    let outputs: Vec<String> = outputs.iter().map(|p| p.display().to_string()).collect();
    println!("{}", json!({ "cmd": cli.cmd.name(), "elapsed_ms": elapsed_ms, "outputs": outputs, "status": status }));
    code
}
