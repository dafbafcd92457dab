//! Config-driven front end for `adaptlab-core`.
//!
//! Every subcommand reads one TOML config, writes CSV outputs atomically into
//! the output directory and finishes with a `manifest_<command>.json` listing
//! the SHA-256 of each file it wrote.

pub mod commands;
pub mod config;
pub mod output;
pub mod verify;

use std::path::PathBuf;
use std::time::Instant;

use anyhow::Result;
use clap::{Parser, Subcommand};

use crate::config::Experiment;
use crate::output::{OutputDir, RunManifest};

#[derive(Debug, Parser)]
#[command(name = "adaptlab", version, about = "Exact desk-scale domain adaptation experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Experiment config (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides `output_dir` from the config.
    #[arg(long, global = true)]
    pub output_dir: Option<PathBuf>,
    /// Replaces the config's base seed.
    #[arg(long, global = true)]
    pub seed_override: Option<u64>,
    /// Worker threads for parameter sweeps.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Sample the generic and target datasets; summarize both sources.
    Simulate,
    /// Train on the generic data and fine-tune on the target data.
    Train,
    /// Compute selection weights over the generic data.
    Select,
    /// Rank generic examples by mean influence on the target data.
    Influence,
    /// Run the acceptance suite; exits 1 if any check fails.
    Verify,
    /// Merge every summary CSV and manifest into report.csv.
    Report,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Train => "train",
            Command::Select => "select",
            Command::Influence => "influence",
            Command::Verify => "verify",
            Command::Report => "report",
        }
    }
}

#[derive(Debug)]
pub struct Outcome {
    pub manifest: RunManifest,
    /// `false` only when `verify` found a failing check.
    pub passed: bool,
}

pub fn run(cli: &Cli) -> Result<Outcome> {
    let start = Instant::now();
    let Some(config) = &cli.config else {
        anyhow::bail!("--config is required");
    };
    let exp = Experiment::load(config, cli.seed_override)?;
    if let Some(jobs) = cli.jobs {
        // A second call in the same process keeps the first pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build_global();
    }
    let root = cli.output_dir.clone().unwrap_or_else(|| exp.raw.output_dir.clone());
    let mut out = OutputDir::create(&root)?;
    let mut passed = true;
    match cli.command {
        Command::Simulate => commands::simulate(&exp, &mut out)?,
        Command::Train => commands::train_cmd(&exp, &mut out)?,
        Command::Select => commands::select(&exp, &mut out)?,
        Command::Influence => commands::influence_cmd(&exp, &mut out)?,
        Command::Verify => {
            passed = verify::run(&exp, &mut out)?.iter().all(|v| v.passed());
        }
        Command::Report => commands::report(&mut out)?,
    }
    let manifest = out.finish(cli.command.name(), &exp.config_hash, exp.seed, start.elapsed())?;
    Ok(Outcome { manifest, passed })
}
