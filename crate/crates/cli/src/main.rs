//! `sparse-cert`: train, bound, compress and attack ReLU networks.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::error::CliError;

#[derive(Parser)]
#[command(name = "sparse-cert", version, about = "Sparsity-based robust generalization bounds")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a network from a TOML config; writes metrics.csv and model.esnn.
    Train(TrainArgs),
    /// Evaluate the robust generalization bound of a model on a dataset (JSON).
    Bound(BoundArgs),
    /// Compress a model layer by layer and audit the deviation (JSON).
    Compress(CompressArgs),
    /// Run PGD against a model; per-sample margins as CSV.
    Attack(AttackArgs),
}

#[derive(Args, Clone, Debug, Default)]
pub struct DataArgs {
    /// IDX image file (optionally gzip-compressed).
    #[arg(long)]
    pub data_images: Option<PathBuf>,
    /// IDX label file (optionally gzip-compressed).
    #[arg(long)]
    pub data_labels: Option<PathBuf>,
}

#[derive(Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct BoundArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    /// Margin threshold in the model's own output units.
    #[arg(long)]
    pub gamma: f64,
    #[arg(long, default_value_t = 0.2)]
    pub eps: f64,
    #[arg(long, default_value_t = 10)]
    pub steps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Write the report here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct CompressArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Margin threshold in the model's own output units.
    #[arg(long)]
    pub gamma: f64,
    #[arg(long, default_value_t = 0.0)]
    pub eps: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Compressed model path; the audit is also written to `<out>.audit.json`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct AttackArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value_t = 0.2)]
    pub eps: f64,
    #[arg(long, default_value_t = 10)]
    pub steps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Per-sample CSV path; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn run(cli: Cli) -> Result<(), CliError> {
    config::init_threads()?;
    match cli.command {
        Command::Train(a) => commands::train(a),
        Command::Bound(a) => commands::bound(a),
        Command::Compress(a) => commands::compress(a),
        Command::Attack(a) => commands::attack(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
