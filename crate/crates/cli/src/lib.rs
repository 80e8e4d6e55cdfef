//! Command-line driver: dataset building, chessboard generation and grading,
//! metric evaluation, prediction fetching, template expansion and coordinate
//! fuzzing.

pub mod commands;
pub mod config;
pub mod error;
pub mod fetch;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use refdial_core::TaskKind;

pub use config::RunConfig;
pub use error::{CliError, CliResult, ExitKind};

#[derive(Debug, Parser)]
#[command(name = "refdial", version, about = "Referential-dialogue data and grounding evaluation toolkit")]
pub struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Decimal places for serialized coordinates.
    #[arg(long, global = true)]
    pub precision: Option<u32>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Import annotations, build instruction records, drop leaked images.
    BuildDataset(BuildDatasetArgs),
    /// Sample a balanced chessboard item set from detections.
    GenChessboard(GenChessboardArgs),
    /// Grade chessboard answers.
    EvalChessboard(EvalChessboardArgs),
    /// Score predictions against ground truth.
    Eval(EvalArgs),
    /// Request predictions for an item file from an inference endpoint.
    FetchPredictions(FetchArgs),
    /// Ask a generation endpoint for rewrites of a prompt template.
    ExpandTemplates(ExpandArgs),
    /// Check coordinate serialization round trips on random geometry.
    FuzzRoundtrip(FuzzArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::BuildDataset(_) => "build-dataset",
            Command::GenChessboard(_) => "gen-chessboard",
            Command::EvalChessboard(_) => "eval-chessboard",
            Command::Eval(_) => "eval",
            Command::FetchPredictions(_) => "fetch-predictions",
            Command::ExpandTemplates(_) => "expand-templates",
            Command::FuzzRoundtrip(_) => "fuzz-roundtrip",
        }
    }
}

fn parse_task(s: &str) -> Result<TaskKind, String> {
    s.parse()
}

#[derive(Debug, Args)]
pub struct BuildDatasetArgs {
    /// Annotation file with its kind, e.g. `referring_expression=refcoco.jsonl`.
    #[arg(long = "source", value_name = "KIND=PATH", required = true)]
    pub sources: Vec<String>,
    /// Restrict to these tasks; default is every task each source can feed.
    #[arg(long = "task", value_parser = parse_task)]
    pub tasks: Vec<TaskKind>,
    /// Image keys that must not appear in the output.
    #[arg(long)]
    pub holdout: Option<PathBuf>,
    /// Extra template sets; replace the starter set of the same task.
    #[arg(long)]
    pub templates: Option<PathBuf>,
    /// Start from an empty template registry.
    #[arg(long)]
    pub no_starter_templates: bool,
    #[arg(long, short)]
    pub output: PathBuf,
    /// Training stage for the mixed stream (1 or 2).
    #[arg(long)]
    pub stage: Option<u8>,
    /// Boosted share of stage-2 draws.
    #[arg(long)]
    pub ratio: Option<f64>,
    /// Number of mixed draws to write; 0 disables mixing.
    #[arg(long)]
    pub draws: Option<usize>,
    /// Where to write the mixed stream; default `<output>.mix.jsonl`.
    #[arg(long)]
    pub mix_output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenChessboardArgs {
    /// Detection annotations.
    #[arg(long, short)]
    pub input: PathBuf,
    #[arg(long)]
    pub quota: Option<usize>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long, short)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalChessboardArgs {
    #[arg(long)]
    pub items: PathBuf,
    #[arg(long)]
    pub predictions: PathBuf,
    /// Machine-readable report; the table always goes to stdout.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Metric {
    Rec,
    WhichBox,
    Pointqa,
    Vqa,
    Pope,
    Caption,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, value_enum)]
    pub metric: Metric,
    #[arg(long)]
    pub predictions: PathBuf,
    #[arg(long = "ground-truth", visible_alias = "gt")]
    pub ground_truth: PathBuf,
    /// IoU cutoff for `rec`.
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EndpointArgs {
    #[arg(long)]
    pub address: Option<String>,
    #[arg(long, env = "REFDIAL_API_TOKEN", hide_env_values = true)]
    pub token: Option<String>,
    /// Per-request timeout in seconds.
    #[arg(long)]
    pub timeout: Option<f64>,
    #[arg(long)]
    pub max_retries: Option<u32>,
}

#[derive(Debug, Args)]
pub struct FetchArgs {
    /// Items with `item_id` and `prompt` fields.
    #[arg(long)]
    pub items: PathBuf,
    #[arg(long, short)]
    pub output: PathBuf,
    #[command(flatten)]
    pub endpoint: EndpointArgs,
    #[arg(long)]
    pub concurrency: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ExpandArgs {
    #[arg(long, value_parser = parse_task)]
    pub task: TaskKind,
    /// How many new templates to request.
    #[arg(long, default_value_t = 10)]
    pub count: usize,
    /// One-line description of the task, shown to the generator.
    #[arg(long)]
    pub purpose: String,
    /// Template file to take the sample from; default is the starter set.
    #[arg(long)]
    pub templates: Option<PathBuf>,
    /// Id of the sample template; default is the first of the task's set.
    #[arg(long)]
    pub template_id: Option<String>,
    /// Replacement instruction text with {purpose}, {sample}, {count} and
    /// {placeholders} slots.
    #[arg(long)]
    pub prompt_file: Option<PathBuf>,
    #[arg(long, short)]
    pub output: PathBuf,
    #[command(flatten)]
    pub endpoint: EndpointArgs,
}

#[derive(Debug, Args)]
pub struct FuzzArgs {
    #[arg(long, default_value_t = 100_000)]
    pub cases: usize,
    #[arg(long, default_value_t = 1)]
    pub min_precision: u32,
    #[arg(long, default_value_t = 6)]
    pub max_precision: u32,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

/// Parses `args` and runs the command, returning the process exit code.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { ExitKind::Usage as i32 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match commands::run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.code()
        }
    }
}
