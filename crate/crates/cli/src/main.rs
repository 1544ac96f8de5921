//! `wbp` -- train weighted BP decoders, fit reliability priors and measure
//! BER/FER curves, all driven by one TOML config and a master seed.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use wbp_core::error::Error;

use commands::{cmd_evaluate, cmd_prior, cmd_train, Context};

#[derive(Parser)]
#[command(
    name = "wbp",
    version,
    about = "Weighted belief propagation decoder toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Master seed; overrides the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; 0 or absent = available parallelism.
    #[arg(long)]
    workers: Option<usize>,
    /// Output directory; overrides the config and WBP_OUT_DIR.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Train a weighted decoder and write weights + history.
    Train {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Measure a BER/FER curve (plain BP without --weights).
    Evaluate {
        #[command(flatten)]
        common: CommonArgs,
        /// Trained weights file; omit for the plain-BP baseline.
        #[arg(long)]
        weights: Option<PathBuf>,
    },
    /// Fit the reliability prior empirically and write the scatter study.
    Prior {
        #[command(flatten)]
        common: CommonArgs,
    },
}

/// 0 ok, 2 config problem, 3 artifact mismatch, 4 degenerate data, 1 other.
fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Config(_) | Error::Parse { .. } => 2,
        Error::ArtifactMismatch(_) => 3,
        Error::Degenerate(_) | Error::Sampling(_) => 4,
        _ => 1,
    }
}

fn run() -> Result<(), Error> {
    let cli = Cli::parse();
    match cli.command {
        Command::Train { common } => {
            let ctx = Context::prepare(&common.config, common.seed, common.workers, common.out)?;
            cmd_train(&ctx)
        }
        Command::Evaluate { common, weights } => {
            let ctx = Context::prepare(&common.config, common.seed, common.workers, common.out)?;
            cmd_evaluate(&ctx, weights.as_deref())
        }
        Command::Prior { common } => {
            let ctx = Context::prepare(&common.config, common.seed, common.workers, common.out)?;
            cmd_prior(&ctx)
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
