use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(name = "countseg", version, about = "Counting-constrained mask labelling and confidence-free evaluation")]
pub struct Cli {
    /// JSON config file with one section per subcommand; keys are flag names.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Only log warnings and errors.
    #[arg(long, short, global = true)]
    pub quiet: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Query the counter for every manifest image (or replay stored replies).
    Count(CountArgs),
    /// Assign categories to proposals under the counts.
    Match(MatchArgs),
    /// Score detections against ground truth.
    Eval(EvalArgs),
    /// Sweep a score threshold for score-bearing detections.
    Sweep(SweepArgs),
    /// Summarize per-stage timing records.
    Bench(BenchArgs),
    /// Compute context-expanded crop regions for proposal embedding.
    Crops(CropsArgs),
}

#[derive(Debug, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct CountArgs {
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// open-vocabulary, open-ended or open-subclass.
    #[arg(long)]
    pub setting: Option<String>,
    /// Built-in prompt preset: nwpu or dior.
    #[arg(long)]
    pub dataset: Option<String>,
    /// Parent category for the open-subclass setting.
    #[arg(long)]
    pub parent: Option<String>,
    /// Comma-separated categories for a generic open-vocabulary prompt.
    #[arg(long, value_delimiter = ',')]
    pub classes: Option<Vec<String>>,
    /// JSON prompt specification overriding the presets.
    #[arg(long)]
    pub prompt_file: Option<PathBuf>,
    /// Prompt rendering: json or markdown.
    #[arg(long)]
    pub format: Option<String>,
    #[arg(long)]
    pub endpoint: Option<String>,
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub top_p: Option<f64>,
    #[arg(long)]
    pub timeout_secs: Option<f64>,
    #[arg(long)]
    pub max_attempts: Option<u32>,
    #[arg(long)]
    pub backoff_ms: Option<u64>,
    /// Environment variable holding the API key.
    #[arg(long)]
    pub api_key_env: Option<String>,
    #[arg(long)]
    pub max_concurrent: Option<usize>,
    #[arg(long)]
    pub workers: Option<usize>,
    /// Record per-image failures and continue.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub keep_going: Option<bool>,
    /// Directory of audit records to replay instead of calling the endpoint.
    #[arg(long)]
    pub replay: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct MatchArgs {
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// counts.json, or the output directory of `count`.
    #[arg(long)]
    pub counts: Option<PathBuf>,
    /// Audit directory supplying counter latency and token usage.
    #[arg(long)]
    pub audit: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Category prompt template with one {category} placeholder.
    #[arg(long)]
    pub template: Option<String>,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub keep_going: Option<bool>,
}

#[derive(Debug, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct EvalArgs {
    /// Results JSON (detections.json, or the output directory of `match`).
    #[arg(long)]
    pub detections: Option<PathBuf>,
    #[arg(long)]
    pub ground_truth: Option<PathBuf>,
    /// Manifest whose ground_truth is used when --ground-truth is absent.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub setting: Option<String>,
    #[arg(long, value_delimiter = ',')]
    pub classes: Option<Vec<String>>,
    #[arg(long)]
    pub iou: Option<f64>,
    /// Also compute mask metrics.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub mask: Option<bool>,
    /// Embedding directory of category prompt texts, for name matching.
    #[arg(long)]
    pub text_embeddings: Option<PathBuf>,
    /// HTTP embeddings endpoint, as an alternative to --text-embeddings.
    #[arg(long)]
    pub embedding_endpoint: Option<String>,
    #[arg(long)]
    pub equivalence_threshold: Option<f64>,
    #[arg(long)]
    pub template: Option<String>,
}

#[derive(Debug, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct SweepArgs {
    #[arg(long)]
    pub detections: Option<PathBuf>,
    #[arg(long)]
    pub ground_truth: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub classes: Option<Vec<String>>,
    #[arg(long)]
    pub iou: Option<f64>,
    #[arg(long)]
    pub step: Option<f64>,
    /// box or mask.
    #[arg(long)]
    pub kind: Option<String>,
}

#[derive(Debug, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct BenchArgs {
    /// timing.json written by `match`, or its output directory.
    #[arg(long)]
    pub timings: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct CropsArgs {
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub scale: Option<f64>,
}
