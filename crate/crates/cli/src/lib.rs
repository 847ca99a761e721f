//! `htp` command-line pipeline: synthetic data, training, prediction,
//! evaluation and benchmarks over the `htp-core` library.

use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub mod commands;
pub mod config;
mod error;
pub mod svg;

pub use config::{Overrides, RunConfig};
pub use error::CliError;

#[derive(Debug, Parser)]
#[command(
    name = "htp",
    version,
    about = "Probabilistic pedestrian trajectory forecasting"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, clap::Args)]
pub struct Common {
    /// Flat `key = value` config file; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Directory receiving every output of the run.
    #[arg(long)]
    pub out_dir: PathBuf,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic pedestrian tracks as CSV.
    Synth {
        #[command(flatten)]
        common: Common,
    },
    /// Train a model on trajectory CSV files.
    Train {
        #[arg(long, required = true, num_args = 1..)]
        data: Vec<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Forecast every input window of a trajectory CSV file.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Calibration, sharpness and displacement scores on a data split.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, required = true, num_args = 1..)]
        data: Vec<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Time the forward pass and confidence-set post-processing.
    Bench {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        common: Common,
    },
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let resolve = |c: &Common| RunConfig::resolve(c.config.as_deref(), &c.overrides);
    match &cli.command {
        Command::Synth { common } => commands::synth(&resolve(common)?, &common.out_dir).map(drop),
        Command::Train { data, common } => {
            commands::train(&resolve(common)?, data, &common.out_dir).map(drop)
        }
        Command::Predict {
            checkpoint,
            input,
            common,
        } => commands::predict(&resolve(common)?, checkpoint, input, &common.out_dir),
        Command::Evaluate {
            checkpoint,
            data,
            common,
        } => commands::evaluate(&resolve(common)?, checkpoint, data, &common.out_dir).map(drop),
        Command::Bench { checkpoint, common } => {
            commands::bench(&resolve(common)?, checkpoint, &common.out_dir).map(drop)
        }
    }
}
