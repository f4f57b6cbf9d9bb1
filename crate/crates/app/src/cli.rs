use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(
    name = "halluguard",
    version,
    about = "Hallucination verification toolkit"
)]
pub struct Cli {
    /// TOML or JSON configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override one configuration key, e.g. `--set plan.fraction=0.25`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a seeded phenotype trace corpus.
    Synth(SynthArgs),
    /// Turn traces into a feature corpus.
    Extract(ExtractArgs),
    /// Train the stacking classifier.
    Train(TrainArgs),
    /// Evaluate a model on held-out or supplied features.
    Eval(EvalArgs),
    /// Score features or raw traces.
    Predict(PredictArgs),
    /// Judge answers against reference contexts.
    Judge(JudgeArgs),
    /// Combine judge verdicts with classifier probabilities.
    Arbitrate(ArbitrateArgs),
    /// Select the riskiest answers for intervention.
    Plan(PlanArgs),
    /// ROC curve, percentile table and PCA coordinates.
    Report(ReportArgs),
    /// Inspect or resolve the human review queue.
    Review(ReviewArgs),
    /// Run the HTTP scoring service.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    #[arg(long)]
    pub traces: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Labeled feature corpus.
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    /// Also write the held-out evaluation report here.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Evaluate every row instead of re-deriving the held-out split.
    #[arg(long)]
    pub all: bool,
    #[arg(long)]
    pub roc: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Input is a feature corpus, or a trace file with `--traces`.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub traces: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct JudgeArgs {
    /// Answers, one JSON object per line.
    #[arg(long)]
    pub answers: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Per-call transcript for the LLM backend.
    #[arg(long)]
    pub transcript: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ArbitrateArgs {
    /// Judgement records from `judge`.
    #[arg(long, requires_all = ["predictions", "out"], conflicts_with_all = ["db_category", "probability"])]
    pub judgements: Option<PathBuf>,
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Single-case mode: database category.
    #[arg(long, requires = "probability")]
    pub db_category: Option<String>,
    /// Single-case mode: classifier probability.
    #[arg(long, requires = "db_category")]
    pub probability: Option<f64>,
}

#[derive(Debug, Args)]
pub struct PlanArgs {
    #[arg(long)]
    pub predictions: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Hash recorded in the plan's provenance.
    #[arg(long)]
    pub model: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Predictions carrying ground-truth labels.
    #[arg(long)]
    pub predictions: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Number of percentile bins; defaults to `plan.bins`.
    #[arg(long)]
    pub percentiles: Option<usize>,
    /// Feature corpus to project onto two principal components.
    #[arg(long)]
    pub features: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReviewArgs {
    #[command(subcommand)]
    pub action: ReviewAction,
}

#[derive(Debug, Subcommand)]
pub enum ReviewAction {
    /// Print queue items as JSON lines.
    List {
        #[arg(long)]
        pending: bool,
    },
    /// Attach a human label to an item.
    Resolve {
        item_id: String,
        /// fact, hallucination, confusion, confabulation or contamination.
        label: String,
    },
    /// Append resolved labels to a labeled feature corpus. Answers already
    /// in the corpus are skipped.
    Merge {
        /// Feature corpus holding the reviewed answers.
        #[arg(long)]
        features: PathBuf,
        /// Labeled corpus to extend in place.
        #[arg(long)]
        into: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Overrides `serve.model`.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Overrides `serve.addr`.
    #[arg(long)]
    pub addr: Option<String>,
}
