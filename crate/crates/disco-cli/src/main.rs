//! `disco` — staged MoE training runs from one declarative config file.
//!
//! Exit codes: 0 success, 2 input error, 3 refused overwrite, 4 numerical
//! abort.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{AblateKind, TrainMode};

#[derive(Parser)]
#[command(
    name = "disco",
    version,
    about = "Staged mixture-of-experts training: cluster the data, train one dense submodel per expert in parallel, merge, fine-tune — plus cost accounting"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Cluster the corpus into one shard per expert; writes the shard
    /// manifest and a 2-D scatter CSV.
    Partition {
        #[arg(long)]
        config: PathBuf,
        /// Override the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Exact run directory (defaults to a fingerprinted directory under
        /// the run root).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        force: bool,
    },
    /// Run the staged pipeline (`disco`) or the full-parameter baseline
    /// (`full`); writes checkpoints and per-phase reports.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        mode: TrainMode,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Redo a run that already completed for this configuration.
        #[arg(long)]
        force: bool,
    },
    /// Paired runs for the partition (clustered vs random) or expert-count
    /// comparison; emits paired fine-tune curves.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        which: AblateKind,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        force: bool,
    },
    /// Dollar-cost report from run directories and a device rate file, or a
    /// replay of the built-in published cost table.
    Cost {
        /// Run directories: a staged run, optionally alongside a full run
        /// for the savings comparison.
        #[arg(value_name = "RUN_DIR")]
        runs: Vec<PathBuf>,
        #[arg(long)]
        rates: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Recompute the built-in published cost measurements instead of
        /// reading run directories.
        #[arg(long = "replay-table4")]
        replay_table4: bool,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Partition {
            config,
            seed,
            out,
            force,
        } => commands::cmd_partition(config, *seed, out.as_deref(), *force),
        Command::Train {
            config,
            mode,
            seed,
            out,
            force,
        } => commands::cmd_train(config, *mode, *seed, out.as_deref(), *force),
        Command::Ablate {
            config,
            which,
            seed,
            out,
            force,
        } => commands::cmd_ablate(config, *which, *seed, out.as_deref(), *force),
        Command::Cost {
            runs,
            rates,
            out,
            replay_table4,
        } => commands::cmd_cost(runs, rates.as_deref(), out.as_deref(), *replay_table4),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(fail) => {
            eprintln!("error: {}", fail.message);
            ExitCode::from(fail.code)
        }
    }
}
