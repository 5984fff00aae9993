mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};

/// MIPC-Net segmentation: synthetic data, training, evaluation, gradient
/// checks and ablation grids.
#[derive(Debug, Parser)]
#[command(name = "mipcnet", version)]
pub struct Cli {
    /// JSON file with optional `model`, `train`, `data` and `ablation` sections.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed of the command's main random stream (see each command).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true, value_enum)]
    pub preset: Option<PresetArg>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum PresetArg {
    Paper,
    Tiny,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic image/mask folder under <out>/data (--seed: generator seed).
    SynthData(SynthArgs),
    /// Train a model; writes a checkpoint, the JSONL log and a report (--seed: training seed).
    Train(TrainArgs),
    /// Evaluate a checkpoint (--seed: synthetic data seed when --data is absent).
    Evaluate(EvalArgs),
    /// Run ablation grids and write tables and plots (--seed: run a single seed).
    Ablate(AblateArgs),
    /// Finite-difference check of every block, the micro model and both losses.
    Gradcheck(GradcheckArgs),
    /// Rewrite markdown, CSV and SVG outputs from saved result tables.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub num_samples: Option<usize>,
    #[arg(long)]
    pub num_classes: Option<usize>,
    #[arg(long)]
    pub image_size: Option<usize>,
    #[arg(long)]
    pub channels: Option<usize>,
    #[arg(long)]
    pub noise_sigma: Option<f64>,
    #[arg(long)]
    pub shapes_min: Option<usize>,
    #[arg(long)]
    pub shapes_max: Option<usize>,
    /// Fraction of ids in the recorded train split.
    #[arg(long, default_value_t = 0.8)]
    pub train_fraction: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ScheduleArg {
    Constant,
    Poly,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Image/mask folder; synthetic data from the config when absent.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long, allow_negative_numbers = true)]
    pub lr: Option<f64>,
    #[arg(long, value_enum)]
    pub lr_schedule: Option<ScheduleArg>,
    #[arg(long)]
    pub eval_every: Option<usize>,
    /// Random flips and quarter turns.
    #[arg(long)]
    pub augment: bool,
    /// Hold out part of the data for evaluation; otherwise evaluate on the training set.
    #[arg(long)]
    pub train_fraction: Option<f64>,
    /// Train in f64 instead of f32.
    #[arg(long)]
    pub double: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Image/mask folder; synthetic data from the config when absent.
    #[arg(long)]
    pub data: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    /// table4, table5, table6 or all.
    #[arg(long, default_value = "all")]
    pub axis: String,
    /// Comma-separated seeds (default 0,1,2).
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Only run checks whose name contains this text.
    #[arg(long)]
    pub only: Option<String>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Run directory holding tables/*.json (default: --out).
    #[arg(long)]
    pub from: Option<PathBuf>,
}

fn is_invalid(e: &anyhow::Error) -> bool {
    e.chain().any(|c| {
        c.is::<config::Invalid>() || matches!(c.downcast_ref::<mipcnet::Error>(), Some(mipcnet::Error::Config(_)))
    })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(if is_invalid(&e) { 1 } else { 2 })
        }
    }
}
