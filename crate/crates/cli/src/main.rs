//! `gacse` command-line interface.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use gacse::graph::DatasetFormat;
use gacse::train::Variant;

#[derive(Parser)]
#[command(name = "gacse", version, about = "Graph attention recommender: data prep, training, evaluation")]
struct Cli {
    /// Worker threads; 1 gives the strictly sequential mode.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Ingest raw interactions, apply the k-core filter and split.
    Prepare(PrepareArgs),
    /// Train a model on a prepared dataset.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a prepared dataset.
    Evaluate(EvaluateArgs),
    /// Train the full model and both ablations under one seed.
    Ablate(TrainArgs),
    /// Turn a run's report.jsonl into metrics.csv and plot.tsv.
    ExportMetrics(ExportArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Tsv,
    Adjlist,
}

impl From<Format> for DatasetFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Tsv => DatasetFormat::Tsv,
            Format::Adjlist => DatasetFormat::AdjList,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Ablation {
    None,
    NoSimilarity,
    NoAdaptiveMargin,
}

impl From<Ablation> for Variant {
    fn from(a: Ablation) -> Self {
        match a {
            Ablation::None => Variant::Full,
            Ablation::NoSimilarity => Variant::NoSimilarity,
            Ablation::NoAdaptiveMargin => Variant::NoAdaptiveMargin,
        }
    }
}

#[derive(Args)]
struct PrepareArgs {
    /// Raw interaction file.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value = "tsv")]
    format: Format,
    /// Output directory for the split.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 2020)]
    seed: u64,
    /// Minimum interactions per user and item.
    #[arg(long, default_value_t = 10)]
    min_degree: usize,
    #[arg(long, default_value_t = 0.8)]
    train_frac: f64,
    #[arg(long, default_value_t = 0.1)]
    valid_frac: f64,
}

#[derive(Args)]
struct TrainArgs {
    /// Prepared dataset directory.
    #[arg(long)]
    data: PathBuf,
    /// JSON training config; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    run_id: Option<String>,
    /// Ignored by `ablate`, which always runs every variant.
    #[arg(long, value_enum)]
    ablation: Option<Ablation>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Validation,
    Test,
    Train,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = gacse::eval::DEFAULT_K)]
    k: usize,
    #[arg(long, value_enum, default_value = "test")]
    split: SplitArg,
    /// Also drop validation positives from test-time candidates.
    #[arg(long)]
    exclude_validation: bool,
    /// Directory for metrics.json and the appended metrics.csv.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExportArgs {
    /// A run's report.jsonl.
    #[arg(long)]
    report: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.category());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
