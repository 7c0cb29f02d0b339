mod config;
mod run;

use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use thiserror::Error;

use config::{Experiment, RunArgs};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("i/o error: {0}")]
    Io(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("budget exhausted: {0}")]
    Budget(String),
    #[error("gate failed: {0}")]
    Gate(String),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Io(_) => 1,
            CliError::Config(_) => 2,
            CliError::Budget(_) => 3,
            CliError::Gate(_) => 4,
        }
    }
}

/// Monte Carlo laboratory for transient sub-ballistic random walks in random environment.
#[derive(Debug, Parser)]
#[command(name = "rwre-lab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Rates of the good-environment events over sampled environments
    EnvAudit(RunArgs),
    /// Deep valleys of sampled environments with their diagnostics
    Valleys(RunArgs),
    /// Aging frequencies against the arcsine limit
    Aging(RunArgs),
    /// Fraction of walks within a window of the bottom of the last entered valley
    Localization(RunArgs),
    /// Quenched walk against the clock model, valley by valley
    ClockCompare(RunArgs),
    /// Entry and exit times of the current valley against their limit laws
    Renewal(RunArgs),
    /// Exact quenched formulas against brute-force linear algebra
    OracleSuite(RunArgs),
}

impl Command {
    fn split(&self) -> (Experiment, &RunArgs) {
        match self {
            Command::EnvAudit(a) => (Experiment::EnvAudit, a),
            Command::Valleys(a) => (Experiment::Valleys, a),
            Command::Aging(a) => (Experiment::Aging, a),
            Command::Localization(a) => (Experiment::Localization, a),
            Command::ClockCompare(a) => (Experiment::ClockCompare, a),
            Command::Renewal(a) => (Experiment::Renewal, a),
            Command::OracleSuite(a) => (Experiment::OracleSuite, a),
        }
    }
}

fn execute(cli: &Cli) -> Result<(), CliError> {
    let started = Instant::now();
    let (experiment, args) = cli.command.split();
    let cfg = config::resolve(experiment, args)?;
    let art = run::run(&cfg)?;
    run::write(&cfg, &art, started)?;
    if let Some((pass, detail)) = &art.gate {
        eprintln!("{}: gate {} ({detail})", experiment.name(), if *pass { "pass" } else { "fail" });
    }
    eprintln!("wrote {}", cfg.out.display());
    if art.failed_replicas > 0 {
        return Err(CliError::Budget(format!("{} replicas did not finish", art.failed_replicas)));
    }
    match &art.gate {
        Some((false, detail)) if cfg.gate => Err(CliError::Gate(detail.clone())),
        _ => Ok(()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
