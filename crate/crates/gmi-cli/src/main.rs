mod commands;
mod config;
mod dataset;
mod failure;
mod verify;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};
use gmi_core::objective::WeightMode;
use gmi_core::trainer::Monitor;

use crate::config::RunConfig;
use crate::failure::{CliResult, Failure};

/// Unsupervised graph embeddings trained by maximizing the mutual
/// information between node representations and their neighborhoods.
#[derive(Parser)]
#[command(name = "gmi", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train an encoder and export embeddings.
    Train(CommonArgs),
    /// Score trained embeddings with a logistic probe over label splits.
    Classify(ClassifyArgs),
    /// Remove edges, retrain, and score recovery of the missing links.
    Linkpred(CommonArgs),
    /// Run the numeric self-checks: oracle sweeps and gradient checks.
    Verify(VerifyArgs),
    /// Convert a citation dataset into the binary cache format.
    ExportCache(CommonArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum WeightModeArg {
    Mean,
    Adaptive,
}

#[derive(Clone, Copy, ValueEnum)]
enum MonitorArg {
    TrainLoss,
    ValidationAccuracy,
}

#[derive(Args)]
struct CommonArgs {
    /// Dataset path prefix: <prefix>.bin, or <prefix>.content + .cites.
    #[arg(long)]
    dataset: Option<String>,
    /// Config file applied before flag overrides.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Root seed; all random streams derive from it.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    weight_mode: Option<WeightModeArg>,
    /// Feature-pair term weight in the loss, in [0, 1].
    #[arg(long)]
    alpha: Option<f64>,
    /// Topology term weight in the loss, in [0, 1].
    #[arg(long)]
    beta: Option<f64>,
    /// Negative samples per positive pair.
    #[arg(long)]
    negatives: Option<usize>,
    #[arg(long)]
    hidden_dim: Option<usize>,
    #[arg(long)]
    depth: Option<usize>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    residual: Option<bool>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    dense_gmi: Option<bool>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    compressed_input: Option<bool>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    early_stop_window: Option<usize>,
    /// Run exactly this many epochs with no early stopping.
    #[arg(long)]
    fixed_epochs: Option<usize>,
    #[arg(long, value_enum)]
    monitor: Option<MonitorArg>,
    /// Evaluation repetitions (classify defaults to 50, linkpred to 10).
    #[arg(long)]
    runs: Option<usize>,
    /// Fraction of edges to remove for link prediction.
    #[arg(long)]
    ratio: Option<f64>,
    /// Standardize embeddings before evaluation.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    standardize: Option<bool>,
}

#[derive(Args)]
struct ClassifyArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Embeddings TSV written by train.
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// Checkpoint to re-encode the dataset from instead of a TSV.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    /// Joint tables per oracle sweep; 0 skips the sweeps.
    #[arg(long, default_value_t = 200)]
    tables: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, hide = true)]
    inject_grad_bug: bool,
}

fn resolve(common: &CommonArgs) -> CliResult<RunConfig> {
    let mut config = RunConfig::default();
    if let Some(path) = &common.config {
        config.apply_file(path).map_err(Failure::Config)?;
    }
    if let Some(v) = &common.dataset {
        config.dataset = Some(v.clone());
    }
    if let Some(v) = common.seed {
        config.seed = v;
    }
    if let Some(v) = &common.out {
        config.out = Some(v.clone());
    }
    if let Some(v) = common.weight_mode {
        config.weight_mode = match v {
            WeightModeArg::Mean => WeightMode::Mean,
            WeightModeArg::Adaptive => WeightMode::Adaptive,
        };
    }
    if let Some(v) = common.alpha {
        config.alpha = v;
    }
    if let Some(v) = common.beta {
        config.beta = v;
    }
    if let Some(v) = common.negatives {
        config.negatives = v;
    }
    if let Some(v) = common.hidden_dim {
        config.hidden_dim = v;
    }
    if let Some(v) = common.depth {
        config.depth = v;
    }
    if let Some(v) = common.residual {
        config.residual = v;
    }
    if let Some(v) = common.dense_gmi {
        config.dense_gmi = v;
    }
    if let Some(v) = common.compressed_input {
        config.compressed_input = v;
    }
    if let Some(v) = common.learning_rate {
        config.learning_rate = v;
    }
    if let Some(v) = common.max_epochs {
        config.max_epochs = v;
    }
    if let Some(v) = common.early_stop_window {
        config.early_stop_window = v;
    }
    if let Some(v) = common.fixed_epochs {
        config.fixed_epochs = Some(v);
    }
    if let Some(v) = common.monitor {
        config.monitor = match v {
            MonitorArg::TrainLoss => Monitor::TrainLoss,
            MonitorArg::ValidationAccuracy => Monitor::ValidationAccuracy,
        };
    }
    if let Some(v) = common.runs {
        config.runs = Some(v);
    }
    if let Some(v) = common.ratio {
        config.ratio = v;
    }
    if let Some(v) = common.standardize {
        config.standardize = v;
    }
    config.validate().map_err(Failure::Config)?;
    Ok(config)
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Train(args) => commands::train(resolve(&args)?),
        Command::Classify(args) => {
            let mut config = resolve(&args.common)?;
            if let Some(path) = args.embeddings {
                config.embeddings = Some(path);
            }
            if let Some(path) = args.checkpoint {
                config.checkpoint = Some(path);
            }
            commands::classify(config)
        }
        Command::Linkpred(args) => commands::linkpred(resolve(&args)?),
        Command::Verify(args) => verify::verify(args.tables, args.seed, args.inject_grad_bug),
        Command::ExportCache(args) => commands::export_cache(resolve(&args)?),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("gmi: {:#}", failure.error());
            ExitCode::from(failure.code())
        }
    }
}
