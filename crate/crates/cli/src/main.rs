//! `disco`: config-driven experiment runner.

mod config;
mod experiment;
mod plot;
mod summary;

use std::path::PathBuf;

use anyhow::Result;
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "disco", version, about = "Run and summarize distributed optimization experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every cell of a TOML experiment config.
    Run { config: PathBuf },
    /// Print the rounds-to-target table for an output directory.
    Summarize {
        dir: PathBuf,
        #[arg(long, default_value_t = 1e-6)]
        target: f64,
        /// Also report the gap after this many rounds.
        #[arg(long)]
        at_rounds: Option<usize>,
    },
    /// Write one gap-vs-rounds SVG per machine count.
    Plot { dir: PathBuf },
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Run { config } => {
            let cfg = config::ExperimentConfig::load(&config)?;
            print!("{}", experiment::run_experiment(&cfg)?);
        }
        Command::Summarize { dir, target, at_rounds } => print!("{}", summary::summarize(&dir, target, at_rounds)?),
        Command::Plot { dir } => {
            for path in plot::plot_dir(&dir)? {
                println!("{}", path.display());
            }
        }
    }
    Ok(())
}
