//! `crplus`: ingest mortality data, estimate the model, forecast leading
//! causes of death and compute annuity portfolio loss distributions.

mod commands;
mod config;
mod failure;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::commands::Run;
use crate::config::{Overrides, RunConfig};
use crate::failure::Failure;

#[derive(Parser)]
#[command(name = "crplus", version, about = "Stochastic mortality with gamma risk factors")]
struct Cli {
    /// JSON run configuration.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Overrides `seed` in the configuration.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Overrides `out_dir` in the configuration.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Normalize raw death and population files into a dataset.
    Ingest,
    /// Run the MCMC chains and write posterior samples and diagnostics.
    Estimate,
    /// Tabulate leading causes and death probabilities for target years.
    Forecast,
    /// Generate a synthetic dataset from given parameters.
    Simulate,
    /// Portfolio loss distribution, value-at-risk and expected shortfall.
    Loss,
    /// Recompute diagnostics from stored samples.
    Diagnose,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Ingest => "ingest",
            Command::Estimate => "estimate",
            Command::Forecast => "forecast",
            Command::Simulate => "simulate",
            Command::Loss => "loss",
            Command::Diagnose => "diagnose",
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let overrides = Overrides {
        seed: cli.seed,
        out: cli.out.clone(),
        threads: cli.threads,
    };
    let resolved = cfg.resolve(cli.config.as_deref(), &overrides)?;
    if let Some(n) = resolved.config.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::validation(format!("thread pool: {e}")))?;
    }
    let r = Run::new(resolved, cli.command.name())?;
    match cli.command {
        Command::Ingest => commands::ingest(r),
        Command::Estimate => commands::estimate(r),
        Command::Forecast => commands::forecast(r),
        Command::Simulate => commands::simulate(r),
        Command::Loss => commands::loss(r),
        Command::Diagnose => commands::diagnose(r),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code)
        }
    }
}
