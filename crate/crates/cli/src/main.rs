//! `degctl`: batch front-end for the degenerate bilinear control solver.
//!
//! Exit codes: 0 ok, 2 configuration error, 3 solver failure,
//! 4 optimizer non-convergence, 5 verification failure.

mod artifacts;
mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use thiserror::Error;

use crate::artifacts::{OutputDir, Stamp};
use crate::commands::Outcome;
use crate::config::RunConfig;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("solver failure: {0}")]
    Solver(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl From<degenerate_control::Error> for CliError {
    fn from(e: degenerate_control::Error) -> Self {
        match e {
            degenerate_control::Error::InvalidArgument(msg) => CliError::Config(msg),
            other => CliError::Solver(other.to_string()),
        }
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Io(e.into())
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Solver(_) => 3,
            CliError::Io(_) => 1,
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "degctl", version, about = "Bilinear optimal control of a degenerate parabolic equation")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// JSON run configuration
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory (overrides output.directory)
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Seed for randomized controls, certification samples and verification suites
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Also write state and adjoint trajectories
    #[arg(long, global = true)]
    dump_trajectories: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve the state equation for the configured control
    Solve,
    /// Run projected gradient from the configured control and certify the result
    Optimize,
    /// Run verification suites
    Verify {
        /// max_principle, gradient, hessian, lipschitz, convergence or all
        #[arg(long, default_value = "all")]
        suite: String,
    },
    /// Repeat optimize over values of one parameter
    Sweep {
        /// key=v1,v2,... with key one of alpha, horizon, lower, upper, n_cells, n_steps
        #[arg(long = "sweep")]
        assignment: String,
    },
}

fn run(cli: &Cli) -> Result<Outcome, CliError> {
    let Some(path) = &cli.config else {
        return Err(CliError::Config("--config PATH is required".into()));
    };
    let bytes = std::fs::read(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let text = String::from_utf8(bytes.clone()).map_err(|_| CliError::Config("config is not UTF-8".into()))?;
    let mut cfg = RunConfig::parse(&text)?;
    if let Some(seed) = cli.seed {
        cfg.apply_seed(seed);
    }
    let Some(dir) = cli.out.clone().or_else(|| cfg.output.directory.clone()) else {
        return Err(CliError::Config("no output directory: pass --out or set output.directory".into()));
    };
    let out = OutputDir::create(&dir, Stamp::new(&bytes, cfg.optimizer.seed))?;
    let dump = cli.dump_trajectories || cfg.output.dump_trajectories;
    match &cli.command {
        Command::Solve => commands::solve(&cfg, &out),
        Command::Optimize => commands::optimize_cmd(&cfg, &out, dump),
        Command::Verify { suite } => commands::verify(&cfg, &out, suite),
        Command::Sweep { assignment } => commands::sweep(&cfg, &out, assignment),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::NotConverged) => {
            eprintln!("degctl: optimizer did not converge (artifacts written)");
            ExitCode::from(4)
        }
        Ok(Outcome::VerificationFailed) => {
            eprintln!("degctl: verification failed (see verify.json)");
            ExitCode::from(5)
        }
        Err(e) => {
            eprintln!("degctl: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
