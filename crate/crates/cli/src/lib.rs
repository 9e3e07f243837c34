//! Command-line front end: TOML configuration, line-delimited JSON records, CSV scans and the
//! verification table.

pub mod commands;
pub mod config;
pub mod output;

use std::path::PathBuf;

use anyhow::Result;
use asdflow_core::flow::RhsVariant;
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::commands::{Singular, EXIT_CONFIG, EXIT_SINGULAR};
use crate::config::{Overrides, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "asdflow", version, about = "Integrate, verify and classify SU(2)-invariant anti-self-dual metrics")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Integrate the flow and write one record per accepted sample plus a summary.
    Integrate(RunArgs),
    /// Integrate and print a pass/fail table of the curvature and structure checks.
    Verify(RunArgs),
    /// Classify the configured state, or re-label the records of a trajectory file.
    Classify {
        #[command(flatten)]
        run: RunArgs,
        /// Trajectory file to re-ingest instead of the configured state.
        #[arg(long, value_name = "PATH")]
        records: Option<PathBuf>,
    },
    /// Sample initial states and write a CSV table.
    Scan(RunArgs),
    /// Print the coefficient pattern used by the right-hand side.
    Coefficients {
        #[arg(long, value_name = "PATH")]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Corruption {
    /// Replace dα by zero.
    Alpha,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub rtol: Option<f64>,
    #[arg(long)]
    pub atol: Option<f64>,
    #[arg(long)]
    pub tol_family: Option<f64>,
    #[arg(long)]
    pub tol_cert: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, hide = true, value_enum)]
    pub corrupt_rhs: Option<Corruption>,
}

impl RunArgs {
    pub fn load(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        cfg.apply(&Overrides {
            out: self.out.clone(),
            rtol: self.rtol,
            atol: self.atol,
            tol_family: self.tol_family,
            tol_cert: self.tol_cert,
            seed: self.seed,
        })?;
        Ok(cfg)
    }

    pub fn variant(&self) -> RhsVariant {
        match self.corrupt_rhs {
            None => RhsVariant::Asd,
            Some(Corruption::Alpha) => RhsVariant::ZeroAlphaDot,
        }
    }
}

pub fn dispatch(cli: &Cli) -> Result<i32> {
    match &cli.command {
        Command::Integrate(a) => commands::integrate(&a.load()?, a.variant()),
        Command::Verify(a) => commands::verify(&a.load()?, a.variant()),
        Command::Classify { run, records: Some(p) } => commands::reclassify(&run.load()?, p),
        Command::Classify { run, records: None } => commands::classify(&run.load()?),
        Command::Scan(a) => commands::scan(&a.load()?),
        Command::Coefficients { out } => commands::coefficients(out.as_deref()),
    }
}

/// Exit code for an error that escaped a command.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    if err.downcast_ref::<Singular>().is_some() { EXIT_SINGULAR } else { EXIT_CONFIG }
}
