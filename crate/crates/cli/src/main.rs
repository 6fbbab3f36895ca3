//! `resili`: extract features, train the resilience model and analyse its
//! levels from a single TOML configuration.

mod commands;
mod config;
mod error;
mod manifest;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::commands::Ctx;
use crate::config::Overrides;
use crate::error::CliResult;

#[derive(Parser)]
#[command(name = "resili", version, about = "Grid-cell community resilience rating")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long, short)]
    config: PathBuf,
    /// Output directory; overrides the config file and RESILI_OUT.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Root seed; overrides the config file.
    #[arg(long)]
    seed: Option<u64>,
    /// Select embedding width and cluster count by grid search.
    #[arg(long)]
    grid_search: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Build the grid and the per-cell feature matrix.
    Extract(Common),
    /// Train the autoencoder and clustering, then rate clusters.
    Train(Common),
    /// Re-rate stored clusters without retraining.
    Rate(Common),
    /// Global Moran's I of the resilience levels.
    Moran(Common),
    /// Apply the configured what-if scenario and re-rate.
    Scenario(Common),
    /// Combine flood-risk and resilience levels.
    RiskCombine(Common),
    /// Write the markdown report and the merged cell GeoJSON.
    Report(Common),
}

fn run(cli: Cli) -> CliResult<()> {
    let (common, f): (Common, fn(&Ctx) -> CliResult<()>) = match cli.command {
        Command::Extract(c) => (c, commands::extract),
        Command::Train(c) => (c, commands::train),
        Command::Rate(c) => (c, commands::rate),
        Command::Moran(c) => (c, commands::moran),
        Command::Scenario(c) => (c, commands::scenario),
        Command::RiskCombine(c) => (c, commands::risk_combine),
        Command::Report(c) => (c, commands::report),
    };
    let loaded = config::load(
        &common.config,
        &Overrides {
            out: common.out,
            seed: common.seed,
            grid_search: common.grid_search,
        },
    )?;
    std::fs::create_dir_all(&loaded.out)?;
    f(&Ctx::new(loaded))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
