//! `iriscap`: encode iris textures, synthesize populations, score all pairs
//! and report constrained capacity over a grid of system configurations.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4 compute
//! failure.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::{ExperimentConfig, Overrides};
use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(
    name = "iriscap",
    version,
    about = "Iris template capacity experiments"
)]
struct Cli {
    /// Experiment config file (TOML).
    #[arg(long, global = true, default_value = "iriscap.toml")]
    config: PathBuf,
    /// Output directory, overriding `out_dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Experiment seed, overriding `experiment_seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[arg(long = "chunk-size", global = true)]
    chunk_size: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Encode manifest textures into template files.
    Encode,
    /// Generate a synthetic population: templates plus manifest.
    Synth,
    /// Score every pair for each grid cell into resumable stores.
    Run {
        /// Continue existing stores instead of starting over.
        #[arg(long)]
        resume: bool,
    },
    /// Calibrate operating-point thresholds at full features.
    Calibrate,
    /// Write results.csv and capacity curves.
    Report,
}

fn execute(cli: &Cli) -> Result<(), CliError> {
    let overrides = Overrides {
        out: cli.out.clone(),
        seed: cli.seed,
        workers: cli.workers,
        chunk_size: cli.chunk_size,
    };
    let cfg = ExperimentConfig::load(&cli.config, &overrides)?;
    match cli.command {
        Command::Encode => commands::encode(&cfg),
        Command::Synth => commands::synth(&cfg),
        Command::Run { resume } => commands::run(&cfg, resume),
        Command::Calibrate => commands::calibrate(&cfg),
        Command::Report => commands::report(&cfg),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
