mod commands;
mod config;

use clap::{Parser, Subcommand, ValueEnum};
use gale_core::Error;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "gale",
    version,
    about = "Wind farm generation modeling, storage-aware dispatch, and energy economics"
)]
struct Cli {
    /// Flat key-value config file (see README for the key list).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Master seed; overrides data.seed, nqf.seed, and cove.seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Run searches strictly serially (exactly reproducible logs).
    #[arg(long, global = true)]
    serial: bool,

    /// Directory for generated artifacts.
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum EvalModel {
    Gen,
    Dispatch,
    Baseload,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Split {
    Train,
    Test,
    All,
}

#[derive(Clone, clap::Args)]
struct StorageArgs {
    /// Storage technology to resolve from the catalog.
    #[arg(long)]
    storage_tech: Option<String>,
    /// Storage power rating, MW.
    #[arg(long)]
    storage_rating: Option<f64>,
    /// Storage duration, hours.
    #[arg(long)]
    storage_duration: Option<f64>,
    /// Storage catalog CSV (defaults to the built-in placeholder table).
    #[arg(long)]
    catalog: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a deterministic synthetic dataset CSV.
    Synth {
        /// Number of 8760-hour years.
        #[arg(long, default_value_t = 1)]
        years: usize,
        /// Output CSV path (default `<out-dir>/synth.csv`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the power-generation model; writes a checkpoint and
    /// per-epoch metrics.
    TrainGen {
        /// Dataset CSV (overrides data.path).
        #[arg(long)]
        data: Option<PathBuf>,
        /// Resume from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Stop after this epoch (for interruption testing).
        #[arg(long)]
        stop_after: Option<usize>,
        /// Override nqf.epochs.
        #[arg(long)]
        epochs: Option<usize>,
        /// Override nqf.seq_len.
        #[arg(long)]
        seq_len: Option<usize>,
    },
    /// Train the dispatch network; writes a checkpoint and per-epoch
    /// metrics.
    TrainDispatch {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        resume: Option<PathBuf>,
        #[arg(long)]
        stop_after: Option<usize>,
        /// Override cove.epochs.
        #[arg(long)]
        epochs: Option<usize>,
        #[command(flatten)]
        storage: StorageArgs,
    },
    /// Evaluate a trained model (or the baseload baseline) on a dataset
    /// split; writes per-year metric reports.
    Eval {
        #[arg(long, value_enum)]
        model: EvalModel,
        /// Checkpoint path (not needed for baseload).
        #[arg(long)]
        ckpt: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Split::Test)]
        split: Split,
        /// Fixed baseload target, MW (default: training-split mean
        /// generation).
        #[arg(long)]
        target: Option<f64>,
        /// Also export the dispatch trace to this CSV.
        #[arg(long)]
        trace_out: Option<PathBuf>,
        #[command(flatten)]
        storage: StorageArgs,
    },
    /// Rank every catalog storage configuration by baseload COVE.
    SearchStorage {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Split::Train)]
        split: Split,
        #[arg(long)]
        catalog: Option<PathBuf>,
    },
    /// Random hyperparameter search for the dispatch network with
    /// early termination; resumable through its log file.
    SearchHp {
        #[arg(long)]
        data: Option<PathBuf>,
        /// Number of trials (overrides search.trials).
        #[arg(long)]
        trials: Option<usize>,
        /// Epochs before the early-termination check (overrides
        /// search.probe_epochs).
        #[arg(long)]
        probe_epochs: Option<usize>,
        #[command(flatten)]
        storage: StorageArgs,
    },
    /// Export plot-ready CSV bundles from trained checkpoints.
    Plotdata {
        #[arg(long)]
        data: Option<PathBuf>,
        /// Generation-model checkpoint (enables overlay and density
        /// bundles).
        #[arg(long)]
        gen_ckpt: Option<PathBuf>,
        /// Dispatch-model checkpoint (enables dispatch, storage, and
        /// COVE bundles).
        #[arg(long)]
        dispatch_ckpt: Option<PathBuf>,
        /// Rows to keep in time-series overlays.
        #[arg(long, default_value_t = 744)]
        overlay_hours: usize,
        #[command(flatten)]
        storage: StorageArgs,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            match err {
                Error::Config(_) | Error::Contract(_) => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}
