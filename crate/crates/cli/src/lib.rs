//! Command-line orchestration of the difficulty-prediction pipeline.

pub mod config;
pub mod error;
pub mod manifest;
pub mod stages;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use config::PipelineConfig;
pub use error::CliError;
pub use stages::{Context, Stage};

use manifest::OutputLock;

#[derive(Debug, Parser)]
#[command(
    name = "mcqdiff",
    version,
    about = "Predict item difficulty from simulated learner personas"
)]
pub struct Cli {
    /// Pipeline config (TOML). Relative paths inside it resolve against its directory.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the config's seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Overrides the config's output directory.
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    /// Repeat for more log output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, Subcommand)]
pub enum Command {
    /// Validate inputs, drop image-only items, split profiling and estimation sets.
    Ingest,
    /// Fit 2PL IRT on the estimation set.
    FitIrt,
    /// Fit latent class models over the k range and assign students.
    FitLca,
    /// Deviation scores and persona-synthesis requests per class.
    Profile,
    /// Turn requests into personas (provider or manual file).
    Personas,
    /// Ask the provider for option probabilities per (item, persona).
    Simulate,
    /// Build the per-item feature table.
    Features,
    /// Nested cross-validated ridge regression of difficulty.
    Evaluate,
    /// Write a synthetic world to the configured input paths.
    Synth,
    /// Run every stage from ingest to evaluate.
    All,
}

impl Command {
    fn stages(self) -> Vec<Stage> {
        match self {
            Command::Ingest => vec![Stage::Ingest],
            Command::FitIrt => vec![Stage::FitIrt],
            Command::FitLca => vec![Stage::FitLca],
            Command::Profile => vec![Stage::Profile],
            Command::Personas => vec![Stage::Personas],
            Command::Simulate => vec![Stage::Simulate],
            Command::Features => vec![Stage::Features],
            Command::Evaluate => vec![Stage::Evaluate],
            Command::Synth => Vec::new(),
            Command::All => Stage::PIPELINE.to_vec(),
        }
    }
}

/// Effective config: file (or defaults), then flag overrides.
pub fn effective_config(cli: &Cli) -> Result<PipelineConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(dir) = &cli.out_dir {
        cfg.out_dir = dir.clone();
    }
    let seed = cli.seed.unwrap_or(cfg.seed);
    cfg.apply_seed(seed);
    Ok(cfg)
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    let ctx = Context::new(effective_config(cli)?)?;
    let _lock = OutputLock::acquire(&ctx.config.out_dir)?;
    if matches!(cli.command, Command::Synth) {
        return ctx.synth();
    }
    for stage in cli.command.stages() {
        ctx.run(stage)?;
    }
    Ok(())
}
