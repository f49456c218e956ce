//! Command-line definitions.
//!
//! Settings that also come from the environment or the config file are plain optional
//! flags here; [`crate::config::Settings`] applies the layering.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(
    name = "spectod",
    version,
    about = "Schema-guided task-oriented dialogue pipeline"
)]
pub struct Cli {
    /// TOML file with default settings (also `SPECTOD_CONFIG`).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Convert a raw MultiWOZ release into six-role train/dev/test files.
    Ingest(IngestArgs),
    /// Write the fine-tuning set and training manifest.
    Export(ExportArgs),
    /// Run the pipeline over a converted split.
    Run(RunArgs),
    /// Score transcripts against the gold split.
    Eval(EvalArgs),
    /// Talk to the pipeline on stdin/stdout.
    Chat(ChatArgs),
}

/// Registry, normalization, prompt templates and database locations.
#[derive(Debug, Clone, Args, Default)]
pub struct ResourceArgs {
    /// Function registry JSON; the bundled MultiWOZ registry when omitted.
    #[arg(long)]
    pub schema: Option<PathBuf>,
    /// Value normalization table JSON.
    #[arg(long)]
    pub normalization: Option<PathBuf>,
    /// Directory holding ds.txt, dst.txt and rg.txt.
    #[arg(long)]
    pub templates: Option<PathBuf>,
    /// Directory holding `<domain>_db.json` files.
    #[arg(long)]
    pub db: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct IngestArgs {
    /// Directory of the raw release.
    #[arg(long)]
    pub raw: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Release version: 2.0, 2.1 or 2.2.
    #[arg(long = "version")]
    pub corpus_version: Option<String>,
    #[arg(long)]
    pub workers: Option<String>,
    #[command(flatten)]
    pub resources: ResourceArgs,
}

#[derive(Debug, Clone, Args)]
pub struct ExportArgs {
    /// Six-role JSONL produced by `ingest`, usually train.jsonl.
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Share of dialogues to keep, in (0, 1].
    #[arg(long)]
    pub fraction: Option<String>,
    #[arg(long)]
    pub seed: Option<String>,
    /// Sample within each primary domain separately.
    #[arg(long)]
    pub stratified: bool,
    /// Token budget per training sample.
    #[arg(long)]
    pub context_limit: Option<String>,
    /// What to do with dialogues over the budget: split or skip.
    #[arg(long)]
    pub overflow: Option<String>,
    /// Manifest override, `field=value`; repeatable.
    #[arg(long = "set", value_name = "FIELD=VALUE")]
    pub overrides: Vec<String>,
    #[arg(long)]
    pub schema: Option<PathBuf>,
}

/// Where completions come from.
#[derive(Debug, Clone, Args, Default)]
pub struct BackendArgs {
    /// OpenAI-compatible server (also `SPECTOD_ENDPOINT`).
    #[arg(long, conflicts_with = "mock")]
    pub endpoint: Option<String>,
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub api_key: Option<String>,
    /// Replay completions: from a JSON object of tag to text, or from the gold corpus
    /// when no file is given.
    #[arg(long, num_args = 0..=1, default_missing_value = "")]
    pub mock: Option<String>,
    #[arg(long)]
    pub max_attempts: Option<String>,
    #[arg(long)]
    pub timeout_secs: Option<String>,
    /// Requests in flight at once.
    #[arg(long)]
    pub concurrency: Option<String>,
    #[arg(long)]
    pub max_new_tokens: Option<String>,
    #[arg(long)]
    pub context_tokens: Option<String>,
    /// Append every request and response to this JSONL file.
    #[arg(long)]
    pub trace: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// Six-role JSONL to replay, usually test.jsonl.
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// policy or gold-state.
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long)]
    pub workers: Option<String>,
    /// Only the first N dialogues by id.
    #[arg(long)]
    pub limit: Option<usize>,
    #[command(flatten)]
    pub backend: BackendArgs,
    #[command(flatten)]
    pub resources: ResourceArgs,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub transcripts: PathBuf,
    /// Six-role gold JSONL.
    #[arg(long)]
    pub gold: PathBuf,
    /// Score only the gold dialogues present in the transcripts.
    #[arg(long)]
    pub subset: bool,
    /// Comma-separated: inform, success, bleu, combined, jga, jga_raw, fn_se, gpt.
    #[arg(long)]
    pub metrics: Option<String>,
    /// Judge server for the `gpt` metric.
    #[arg(long, conflicts_with = "judge_mock")]
    pub judge_endpoint: Option<String>,
    #[arg(long)]
    pub judge_model: Option<String>,
    /// Answer every judge request with this score.
    #[arg(long)]
    pub judge_mock: Option<f64>,
    /// Abort judging once this share of requests has failed.
    #[arg(long)]
    pub judge_max_failure_rate: Option<String>,
    /// Write the report here as JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub resources: ResourceArgs,
}

#[derive(Debug, Clone, Args)]
pub struct ChatArgs {
    /// Where the session transcript is written on exit.
    #[arg(long, default_value = "chat_transcript.jsonl")]
    pub transcript: PathBuf,
    #[command(flatten)]
    pub backend: BackendArgs,
    #[command(flatten)]
    pub resources: ResourceArgs,
}
