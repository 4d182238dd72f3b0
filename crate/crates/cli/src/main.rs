//! `adrop`: reproducible adaptive-dropout experiments.
//!
//! Exit codes: 0 success, 1 usage error, 2 runtime error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

mod commands;

#[derive(Parser, Debug)]
#[command(name = "adrop", version, about = "Adaptive dropout for blind super-resolution", arg_required_else_help = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Degrade a directory of HR PNGs with the named test combos
    Degrade(DegradeArgs),
    /// Train a model and write loss.csv, w_trace.csv and a checkpoint
    Train(TrainArgs),
    /// PSNR of a checkpoint (or plain bicubic) on each degradation combo
    Eval(EvalArgs),
    /// Per-channel occlusion of block outputs with energy renormalization
    Ablate(AblateArgs),
    /// Train-mode vs Eval-mode feature moments of each block
    Stats(StatsArgs),
    /// Closed-form vs Monte-Carlo variance shift of adaptive dropout
    Verify(VerifyArgs),
}

/// HR images for commands that read a dataset.
#[derive(Args, Debug, Clone)]
#[group(required = true, multiple = false)]
pub struct DataSource {
    /// Directory of 8-bit RGB PNG images
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Use this many generated images instead of a directory
    #[arg(long)]
    pub synthetic: Option<usize>,
}

#[derive(Args, Debug)]
pub struct SyntheticShape {
    /// Side of generated images
    #[arg(long, default_value_t = 96)]
    pub synthetic_size: usize,
}

#[derive(Args, Debug)]
pub struct DegradeArgs {
    /// Directory of HR PNGs
    #[arg(long)]
    pub input: PathBuf,
    /// Output directory; one subdirectory per combo plus manifest.csv
    #[arg(long)]
    pub out: PathBuf,
    /// Comma-separated combos or `all`
    #[arg(long, default_value = "all")]
    pub combos: String,
    #[arg(long, default_value_t = 2)]
    pub scale: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// `key = value` config file; unset keys keep their defaults
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub source: DataSource,
    #[command(flatten)]
    pub shape: SyntheticShape,
    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the config seed
    #[arg(long)]
    pub seed: Option<u64>,
    /// Config override `key=value`; repeatable, applied after --config
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Continue from a checkpoint; its stored config is used
    #[arg(long, conflicts_with_all = ["config", "overrides", "seed"])]
    pub resume: Option<PathBuf>,
    /// Stop before this iteration (default: run to the end)
    #[arg(long)]
    pub until: Option<usize>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Model checkpoint
    #[arg(long, required_unless_present = "bicubic")]
    pub checkpoint: Option<PathBuf>,
    /// Evaluate plain bicubic upsampling instead of a model
    #[arg(long, conflicts_with = "checkpoint")]
    pub bicubic: bool,
    /// Scale for --bicubic
    #[arg(long, default_value_t = 2)]
    pub scale: usize,
    #[command(flatten)]
    pub source: DataSource,
    #[command(flatten)]
    pub shape: SyntheticShape,
    /// Comma-separated combos or `all` (default: the checkpoint's eval_combos)
    #[arg(long)]
    pub combos: Option<String>,
    /// Dataset label in the CSV (default: directory name)
    #[arg(long)]
    pub dataset_name: Option<String>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "metrics.csv")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct AblateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub source: DataSource,
    #[command(flatten)]
    pub shape: SyntheticShape,
    /// Block to ablate (default: every block)
    #[arg(long)]
    pub block: Option<usize>,
    /// Degradation applied to build the LR inputs
    #[arg(long, default_value = "clean")]
    pub combo: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "ablation.csv")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct StatsArgs {
    /// Model checkpoint (default: a fresh model from --config/--set)
    #[arg(long, conflicts_with_all = ["config", "overrides"])]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Config override `key=value`; repeatable
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Re-draw the zero-initialized residual convs of a fresh model
    #[arg(long)]
    pub randomize_residual: bool,
    /// Train-mode forwards with fresh masks
    #[arg(long, default_value_t = 10_000)]
    pub samples: usize,
    /// `all`, or a block index to make the only stochastic block
    #[arg(long, default_value = "all")]
    pub scope: String,
    /// Side of the random input
    #[arg(long, default_value_t = 16)]
    pub input_size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "stats.csv")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct VerifyArgs {
    /// Feature mean
    #[arg(long, required_unless_present = "grid", allow_negative_numbers = true)]
    pub mu: Option<f64>,
    /// Feature variance
    #[arg(long, required_unless_present = "grid")]
    pub sigma2: Option<f64>,
    /// Drop rate
    #[arg(long, required_unless_present = "grid")]
    pub p: Option<f64>,
    /// Clean-branch weight
    #[arg(long, required_unless_present = "grid")]
    pub w: Option<f64>,
    /// Sweep the built-in 36-cell grid instead of one cell
    #[arg(long, conflicts_with_all = ["mu", "sigma2", "p", "w"])]
    pub grid: bool,
    /// Monte-Carlo feature-map samples per cell
    #[arg(long, default_value_t = 1_000_000)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also write the CSV here
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    let result = match cli.command {
        Command::Degrade(a) => commands::degrade(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Ablate(a) => commands::ablate(a),
        Command::Stats(a) => commands::stats(a),
        Command::Verify(a) => commands::verify(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
