//! Benchmark and training entry point: `train`, `test`, `time` and `trace`.

use clap::{Args, Parser, Subcommand};

mod commands;
mod setup;

#[derive(Parser)]
#[command(name = "hetgrad", version, about = "Heterogeneous mini deep-learning framework")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// Execution target for all layers (overridable per layer).
    #[arg(long, default_value = "host", value_parser = ["host", "emu"])]
    device: String,
    /// Per-layer placement overrides, e.g. --placement conv1=host.
    #[arg(long, value_name = "LAYER=host|emu")]
    placement: Vec<String>,
    /// Deterministic seed; the HETGRAD_SEED environment variable wins.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Batch size override for data layers and declared inputs.
    #[arg(long)]
    batch: Option<usize>,
    /// Report format.
    #[arg(long, default_value = "text", value_parser = ["text", "tsv"])]
    output: String,
    /// Training images in IDX format.
    #[arg(long)]
    data_images: Option<std::path::PathBuf>,
    /// Training labels in IDX format.
    #[arg(long)]
    data_labels: Option<std::path::PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Run a solver to max-iter, evaluating and snapshotting on schedule.
    Train {
        #[command(flatten)]
        common: CommonArgs,
        /// Solver description file.
        #[arg(long)]
        solver: std::path::PathBuf,
        /// Resume from a snapshot written by a previous run.
        #[arg(long)]
        snapshot: Option<std::path::PathBuf>,
        /// Initialize parameters from a weights/snapshot file.
        #[arg(long)]
        weights: Option<std::path::PathBuf>,
        /// Override the solver's max_iter.
        #[arg(long)]
        max_iter: Option<u64>,
        /// Test images in IDX format.
        #[arg(long)]
        test_images: Option<std::path::PathBuf>,
        /// Test labels in IDX format.
        #[arg(long)]
        test_labels: Option<std::path::PathBuf>,
        /// Synthetic train/test sample counts when no dataset is given.
        #[arg(long, default_value_t = 8192)]
        synth_train: usize,
        #[arg(long, default_value_t = 1024)]
        synth_test: usize,
    },
    /// Evaluate accuracy/loss over N test batches.
    Test {
        #[command(flatten)]
        common: CommonArgs,
        /// Network description file (train_val style with TEST outputs).
        #[arg(long)]
        model: std::path::PathBuf,
        /// Weights/snapshot file; untrained parameters when omitted.
        #[arg(long)]
        weights: Option<std::path::PathBuf>,
        #[arg(long, default_value_t = 10)]
        iterations: u64,
    },
    /// Per-layer forward/backward timing over N iterations.
    Time {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        model: std::path::PathBuf,
        #[arg(long, default_value_t = 100)]
        iterations: u64,
        /// One row per layer instead of name-prefix groups.
        #[arg(long)]
        raw_layers: bool,
        /// Build the TEST phase instead of TRAIN.
        #[arg(long)]
        test_phase: bool,
    },
    /// Kernel statistics (instance counts, time, efficiency) for F->B passes.
    Trace {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        model: std::path::PathBuf,
        #[arg(long, default_value_t = 1)]
        iterations: u64,
        /// Re-upload parameters every iteration (per-iteration weight
        /// loading emulation).
        #[arg(long)]
        upload_per_iteration: bool,
        /// Recompute convolution column buffers in backward.
        #[arg(long)]
        recompute_col: bool,
    },
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train {
            common,
            solver,
            snapshot,
            weights,
            max_iter,
            test_images,
            test_labels,
            synth_train,
            synth_test,
        } => commands::train(commands::TrainArgs {
            common,
            solver,
            snapshot,
            weights,
            max_iter,
            test_images,
            test_labels,
            synth_train,
            synth_test,
        }),
        Command::Test { common, model, weights, iterations } => {
            commands::test(common, model, weights, iterations)
        }
        Command::Time { common, model, iterations, raw_layers, test_phase } => {
            commands::time(common, model, iterations, raw_layers, test_phase)
        }
        Command::Trace { common, model, iterations, upload_per_iteration, recompute_col } => {
            commands::trace(common, model, iterations, upload_per_iteration, recompute_col)
        }
    };
    if let Err(e) = result {
        eprintln!("error: {:#}", e);
        std::process::exit(1);
    }
}
