//! Command-line front end for `dirflow`: configured runs, verification
//! suites, sign maps and figure reproductions.

pub mod config;
pub mod figures;
pub mod report;
pub mod run;
pub mod suites;
pub mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};

use crate::figures::{Figure, SignmapConfig};
use crate::report::Report;
use crate::suites::Suite;

/// Exit status for a certification or suite failure.
pub const EXIT_FAIL: u8 = 1;
/// Exit status for configuration and usage errors.
pub const EXIT_CONFIG: u8 = 2;

/// Env var holding the worker thread count.
pub const THREADS_VAR: &str = "DIRFLOW_THREADS";

#[derive(Debug, Parser)]
#[command(name = "dirflow", version, about = "Gradient-flow direction dynamics: simulate, certify, reproduce")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Base seed for stochastic runs.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Uniform certification slack, overriding config and defaults.
    #[arg(long, global = true)]
    pub slack: Option<f64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a configured trajectory and certify its bound curves.
    Simulate { config: PathBuf },
    /// Regenerate one of the reference figures.
    Reproduce {
        #[arg(value_enum)]
        figure: Figure,
    },
    /// Run a property suite.
    Verify {
        #[arg(value_enum)]
        suite: Suite,
    },
    /// Quadrature and Monte Carlo sign maps of N(w).
    Signmap { config: PathBuf },
}

fn configure_threads() -> Result<()> {
    if let Ok(s) = std::env::var(THREADS_VAR) {
        let n: usize = s
            .trim()
            .parse()
            .map_err(|_| anyhow::anyhow!("{THREADS_VAR} must be a positive integer, got {s:?}"))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

/// Runs a parsed command. `Err` means the run could not be set up.
pub fn execute(cli: &Cli) -> Result<Report> {
    configure_threads()?;
    if let Some(s) = cli.slack {
        if !(s >= 0.0 && s.is_finite()) {
            anyhow::bail!("--slack must be a nonnegative number, got {s}");
        }
    }
    let out = |default: &str| cli.out.clone().unwrap_or_else(|| PathBuf::from(default));
    match &cli.command {
        Command::Simulate { config } => {
            let mut cfg = config::RunConfig::load(config)?;
            if let Some(seed) = cli.seed {
                cfg.seed = seed;
            }
            let dir = cli.out.clone().or(cfg.out.clone()).unwrap_or_else(|| PathBuf::from("dirflow-out"));
            run::simulate(&cfg, &dir, cli.slack)
        }
        Command::Reproduce { figure } => {
            let name = format!("{figure:?}").to_lowercase();
            figures::reproduce(*figure, &out(&format!("dirflow-out/{name}")), cli.seed.unwrap_or(0), cli.slack)
        }
        Command::Verify { suite } => {
            let rep = suites::run_suite(*suite)?;
            run::write(&out(&format!("dirflow-out/verify-{}", suite.name())), "report.json", &rep.to_json())?;
            Ok(rep)
        }
        Command::Signmap { config } => {
            let mut cfg = SignmapConfig::load(config)?;
            if let Some(seed) = cli.seed {
                cfg.seed = seed;
            }
            figures::signmap(&cfg, &out("dirflow-out/signmap"))
        }
    }
}

/// Full command-line entry point with exit codes 0 (pass), 1 (failure)
/// and 2 (configuration error).
pub fn main_with(cli: Cli) -> ExitCode {
    match execute(&cli) {
        Ok(rep) => {
            print!("{}", rep.summary());
            if rep.pass {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(EXIT_FAIL)
            }
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_CONFIG)
        }
    }
}
