//! `drifa` command-line harness.

pub mod commands;
pub mod config;
pub mod error;
pub mod report;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use config::RunConfig;
pub use error::{CliError, Result};

#[derive(Debug, Parser)]
#[command(name = "drifa", version, about = "Train, evaluate and probe dual-attention multimodal fusion networks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Run configuration (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the training seed (ablate: first of the seed list).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CheckpointArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Checkpoint to load; defaults to `<out>/checkpoint.drif`.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train and write the best-validation checkpoint plus a per-epoch log.
    Train(CommonArgs),
    /// Deterministic test-split metrics of a checkpoint.
    Eval(CheckpointArgs),
    /// Train and evaluate every row of an ablation grid over several seeds.
    Ablate(CommonArgs),
    /// Monte-Carlo dropout ensemble report with deltas to the deterministic metrics.
    Uq(CheckpointArgs),
    /// Gradient-weighted class activation maps as greyscale images.
    Saliency(CheckpointArgs),
}

impl From<&CommonArgs> for commands::Common {
    fn from(a: &CommonArgs) -> Self {
        Self { config: a.config.clone(), seed: a.seed, out: a.out.clone() }
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Train(a) => commands::cmd_train(&a.into()),
        Command::Ablate(a) => commands::cmd_ablate(&a.into()),
        Command::Eval(a) => commands::cmd_eval(&(&a.common).into(), a.checkpoint.as_deref()),
        Command::Uq(a) => commands::cmd_uq(&(&a.common).into(), a.checkpoint.as_deref()),
        Command::Saliency(a) => commands::cmd_saliency(&(&a.common).into(), a.checkpoint.as_deref()),
    }
}
