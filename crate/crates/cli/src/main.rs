//! `qppnet` — train and apply plan-structured latency models for query
//! execution plans.

mod commands;
mod config;

use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Parser, Subcommand, ValueEnum};

use qppnet::train::GroupWeighting;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Parser)]
#[command(
    name = "qppnet",
    version,
    about = "Plan-structured neural latency prediction for query execution plans"
)]
struct Cli {
    /// TOML file supplying defaults for any long flag; explicit flags win.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic labeled plan corpus
    Synth(SynthArgs),
    /// Parse EXPLAIN (FORMAT JSON) files into a corpus and fit an encoder
    Featurize(FeaturizeArgs),
    /// Train a model on a labeled corpus
    Train(TrainArgs),
    /// Predict plan latencies with a trained model
    Predict(PredictArgs),
    /// Score a model (and optionally the cost baseline) on labeled plans
    Evaluate(EvaluateArgs),
    /// Summarize artifact files
    Inspect(InspectArgs),
}

#[derive(Args)]
pub struct SynthArgs {
    /// Output corpus path (NDJSON)
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Number of plans to generate
    #[arg(long)]
    plans: Option<usize>,
    /// Number of distinct templates the plans are drawn from
    #[arg(long)]
    templates: Option<usize>,
    /// Lognormal noise scale on observed latencies
    #[arg(long)]
    noise_sigma: Option<f64>,
    #[arg(long)]
    depth_min: Option<usize>,
    #[arg(long)]
    depth_max: Option<usize>,
    #[arg(long)]
    fanout_min: Option<usize>,
    #[arg(long)]
    fanout_max: Option<usize>,
    #[arg(long)]
    rows_min: Option<f64>,
    #[arg(long)]
    rows_max: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
pub struct FeaturizeArgs {
    /// EXPLAIN (FORMAT JSON) files to ingest
    #[arg(value_name = "EXPLAIN_JSON", required = true)]
    inputs: Vec<PathBuf>,
    /// Output corpus path (NDJSON)
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Output encoder path (JSON)
    #[arg(long)]
    encoder: Option<PathBuf>,
    /// Reject unknown operator kinds instead of using the fallback kind,
    /// and abort on any parse failure
    #[arg(long)]
    strict: bool,
    /// Seed to record in the corpus header
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum WeightingArg {
    /// Weight structure groups by operator count (matches the flat batch
    /// gradient exactly)
    OperatorCount,
    /// Weight structure groups by plan count
    PlanCount,
}

impl From<WeightingArg> for GroupWeighting {
    fn from(w: WeightingArg) -> Self {
        match w {
            WeightingArg::OperatorCount => GroupWeighting::OperatorCount,
            WeightingArg::PlanCount => GroupWeighting::PlanCount,
        }
    }
}

#[derive(Args)]
pub struct TrainArgs {
    /// Labeled training corpus (NDJSON)
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Encoder path: loaded when the file exists, otherwise fitted on the
    /// training split and written here
    #[arg(long)]
    encoder: Option<PathBuf>,
    /// Output model path (JSON)
    #[arg(long)]
    model: Option<PathBuf>,
    /// Output per-epoch stats CSV (default: model path with .stats.csv)
    #[arg(long)]
    stats: Option<PathBuf>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    momentum: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Hold out this fraction of plans at random
    #[arg(long, conflicts_with_all = ["holdout_template_fraction", "holdout_templates"])]
    holdout_fraction: Option<f64>,
    /// Hold out every plan of this fraction of templates
    #[arg(long, conflicts_with = "holdout_templates")]
    holdout_template_fraction: Option<f64>,
    /// Hold out every plan of exactly this many templates
    #[arg(long)]
    holdout_templates: Option<usize>,
    #[arg(long, value_enum)]
    weighting: Option<WeightingArg>,
    #[arg(long)]
    hidden_layers: Option<usize>,
    #[arg(long)]
    hidden_width: Option<usize>,
    /// Width of the opaque data vector each unit passes to its parent
    #[arg(long)]
    data_width: Option<usize>,
    /// Suppress per-epoch progress lines
    #[arg(long)]
    quiet: bool,
}

#[derive(Args)]
pub struct PredictArgs {
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    encoder: Option<PathBuf>,
    /// Corpus of plans to predict (labels not required)
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Output predictions CSV
    #[arg(long)]
    out: Option<PathBuf>,
    /// Emit one row per plan node instead of one row per plan
    #[arg(long)]
    per_node: bool,
}

#[derive(Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    encoder: Option<PathBuf>,
    /// Labeled corpus to score against (NDJSON)
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Output report path (JSON)
    #[arg(long)]
    report: Option<PathBuf>,
    /// Output CDF of prediction factors (CSV; default: report path with
    /// .cdf.csv)
    #[arg(long)]
    cdf: Option<PathBuf>,
    /// Also fit the calibrated optimizer-cost baseline on the training
    /// split and score it on the same held-out plans
    #[arg(long)]
    baseline: bool,
    /// Score only this held-out fraction of plans
    #[arg(long, conflicts_with_all = ["holdout_template_fraction", "holdout_templates"])]
    holdout_fraction: Option<f64>,
    #[arg(long, conflicts_with = "holdout_templates")]
    holdout_template_fraction: Option<f64>,
    #[arg(long)]
    holdout_templates: Option<usize>,
    /// Seed for the holdout split (must match training to reuse its split)
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
pub struct InspectArgs {
    /// Artifact files (corpus, encoder, model, report, or CSV)
    #[arg(value_name = "PATH", required = true)]
    paths: Vec<PathBuf>,
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let file = config::FileConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::Synth(args) => commands::cmd_synth(args, &file),
        Command::Featurize(args) => commands::cmd_featurize(args, &file),
        Command::Train(args) => commands::cmd_train(args, &file),
        Command::Predict(args) => commands::cmd_predict(args, &file),
        Command::Evaluate(args) => commands::cmd_evaluate(args, &file),
        Command::Inspect(args) => commands::cmd_inspect(args),
    }
}
