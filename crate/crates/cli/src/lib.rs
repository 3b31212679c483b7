//! Experiment driver for the saddle-point solvers.
//!
//! The `saddle` binary wraps [`run`]; everything it does is reachable from
//! the library for tests and scripting.

pub mod commands;
pub mod config;
pub mod output;

use std::path::PathBuf;

use anyhow::Result;
use clap::{Parser, Subcommand};

pub use config::{EpsKind, ExperimentConfig, Instance, LayoutMode};
pub use output::{RunManifest, CSV_SCHEMA};

#[derive(Debug, Parser)]
#[command(
    name = "saddle",
    version,
    about = "Robust solvers for high-contrast diffusion in saddle-point form"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// Sweep configuration (TOML). Defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,

    /// Worker threads; 0 uses one per core.
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,

    /// Replaces the configured seed list with this single seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Homogeneous solves from a random start; writes solve.csv.
    Solve,
    /// Dense spectra and interval verdicts; writes spectrum.csv and verdict.csv.
    Spectrum,
    /// Operation counts per method; writes cost.md and cost.csv.
    Cost,
    /// Matrix Market export of the assembled blocks.
    ExportMatrix,
}

/// How a successful invocation ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Ok,
    VerificationFailed,
}

impl Status {
    pub fn exit_code(self) -> u8 {
        match self {
            Status::Ok => 0,
            Status::VerificationFailed => 2,
        }
    }
}

pub fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seeds = vec![seed];
    }
    Ok(cfg)
}

pub fn run(cli: &Cli) -> Result<Status> {
    let cfg = load_config(cli)?;
    match cli.command {
        Command::Solve => {
            let rows = commands::solve(&cfg, &cli.out, cli.threads)?;
            println!(
                "{} runs written to {}",
                rows.len(),
                cli.out.join("solve.csv").display()
            );
        }
        Command::Cost => {
            print!("{}", commands::cost(&cfg, &cli.out, cli.threads)?);
        }
        Command::Spectrum => {
            let verdicts = commands::spectrum(&cfg, &cli.out, cli.threads)?;
            let mut failed = false;
            for v in &verdicts {
                println!("{} {} {} {}", v.verdict, v.instance, v.pencil, v.note);
                failed |= v.verdict != "PASS";
            }
            if failed {
                return Ok(Status::VerificationFailed);
            }
        }
        Command::ExportMatrix => {
            for dir in commands::export_matrices(&cfg, &cli.out)? {
                println!("{}", cli.out.join(dir).display());
            }
        }
    }
    Ok(Status::Ok)
}
