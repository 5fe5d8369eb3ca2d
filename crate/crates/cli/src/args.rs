use std::path::PathBuf;

use clap::{ArgAction, Args, Parser, Subcommand};
use ralstm::model::CellVariant;
use serde_json::{json, Value};

use crate::config::{parse_assignment, read_layer, Layer};
use crate::data::SplitName;
use crate::error::CliResult;

#[derive(Parser, Debug, Clone)]
#[command(
    name = "ralstm",
    version,
    about = "Train, run and evaluate a dialogue-act conditioned sentence generator",
    args_override_self = true
)]
pub struct Cli {
    /// Log more (-v debug, -vv trace).
    #[arg(short, long, action = ArgAction::Count, global = true)]
    pub verbose: u8,
    /// Only log warnings and errors.
    #[arg(short, long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug, Clone)]
pub enum Command {
    /// Train one or more models into a run directory.
    Train(TrainArgs),
    /// Over-generate, rerank and print realizations for DAs, one per line.
    Generate(GenerateArgs),
    /// BLEU and slot error rate of trained checkpoints on a split.
    Evaluate(EvaluateArgs),
    /// Finite-difference check of the full model's gradients.
    Gradcheck(GradcheckArgs),
    /// Summarize data directories or a checkpoint.
    Inspect(InspectArgs),
    /// Re-run the command recorded in a manifest with its resolved settings.
    Replay(ReplayArgs),
}

/// Settings shared by every command that reads a run configuration.
#[derive(Args, Debug, Clone, Default)]
pub struct ConfigArgs {
    /// TOML config layered over the defaults. A manifest.json also works.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Override any setting, e.g. `--set train.patience=10`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Replaces the config file layer (used by replay).
    #[arg(skip)]
    pub layer: Option<Layer>,
    /// Dataset hash the sources must match (used by replay).
    #[arg(skip)]
    pub expect_dataset: Option<String>,
}

impl ConfigArgs {
    pub fn file_layer(&self) -> CliResult<Option<Layer>> {
        match (&self.layer, &self.config) {
            (Some(l), _) => Ok(Some(l.clone())),
            (None, Some(p)) => read_layer(p).map(Some),
            (None, None) => Ok(None),
        }
    }

    pub fn assignments(&self) -> CliResult<Vec<(String, Value)>> {
        self.set.iter().map(|s| parse_assignment(s)).collect()
    }
}

fn parse_variant(s: &str) -> Result<CellVariant, String> {
    s.parse::<CellVariant>().map_err(|e| e.to_string())
}

#[derive(Args, Debug, Clone, Default)]
pub struct ModelArgs {
    /// First seed; further runs use the following integers.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Decoder cell: full, wo-r (without refinement) or wo-a (without adjustment).
    #[arg(long, value_parser = parse_variant)]
    pub variant: Option<CellVariant>,
    /// Hidden size (even).
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,
    /// Initial learning rate.
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Number of differently seeded runs.
    #[arg(long)]
    pub runs: Option<usize>,
}

impl ModelArgs {
    pub fn overrides(&self) -> Vec<(String, Value)> {
        let mut out = Vec::new();
        let mut put = |k: &str, v: Option<Value>| {
            if let Some(v) = v {
                out.push((k.to_string(), v));
            }
        };
        put("train.seed", self.seed.map(|v| json!(v)));
        put("train.variant", self.variant.map(|v| json!(v)));
        put("train.hidden", self.hidden.map(|v| json!(v)));
        put("train.dropout", self.dropout.map(|v| json!(v)));
        put("train.learning_rate", self.lr.map(|v| json!(v)));
        put("train.max_epochs", self.epochs.map(|v| json!(v)));
        put("runs", self.runs.map(|v| json!(v)));
        out
    }
}

#[derive(Args, Debug, Clone, Default)]
pub struct BeamArgs {
    /// Beam width.
    #[arg(long)]
    pub beam: Option<usize>,
    /// Candidates over-generated per DA.
    #[arg(long)]
    pub overgen: Option<usize>,
    /// Realizations kept after reranking.
    #[arg(long = "top-k")]
    pub top_k: Option<usize>,
    /// Weight of the slot error rate in the rerank score.
    #[arg(long)]
    pub lambda: Option<f64>,
}

impl BeamArgs {
    pub fn overrides(&self) -> Vec<(String, Value)> {
        let mut out = Vec::new();
        let mut put = |k: &str, v: Option<Value>| {
            if let Some(v) = v {
                out.push((k.to_string(), v));
            }
        };
        put("beam.beam_width", self.beam.map(|v| json!(v)));
        put("beam.overgen", self.overgen.map(|v| json!(v)));
        put("beam.top_k", self.top_k.map(|v| json!(v)));
        put("beam.lambda", self.lambda.map(|v| json!(v)));
        out
    }
}

#[derive(Args, Debug, Clone)]
pub struct TrainArgs {
    /// Data directory with schema.toml. Repeat to pool several domains.
    #[arg(long = "data", required = true, value_name = "DIR")]
    pub data: Vec<PathBuf>,
    /// Run directory to create.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Warm-start from a checkpoint; its vocabulary and shape are reused.
    #[arg(long = "init-from", value_name = "CKPT")]
    pub init_from: Option<PathBuf>,
    #[command(flatten)]
    pub config: ConfigArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub beam: BeamArgs,
}

/// Where a trained model comes from.
#[derive(Args, Debug, Clone, Default)]
pub struct ModelSource {
    /// Run directory written by `train`.
    #[arg(long, value_name = "DIR")]
    pub run: Option<PathBuf>,
    /// Checkpoint file. Repeatable for evaluate.
    #[arg(long = "checkpoint", value_name = "CKPT")]
    pub checkpoints: Vec<PathBuf>,
    /// Vocabulary file; defaults to the vocab.json beside the checkpoint.
    #[arg(long, value_name = "FILE")]
    pub vocab: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub source: ModelSource,
    /// File with one DA per line (`-` for stdin). Blank and `#` lines are skipped.
    #[arg(long, value_name = "FILE")]
    pub input: PathBuf,
    /// Also write generations.tsv and a manifest here.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Write the per-step DA vector of each top realization to <out>/s-trace/.
    #[arg(long = "s-trace", requires = "out")]
    pub s_trace: bool,
    #[command(flatten)]
    pub config: ConfigArgs,
    #[command(flatten)]
    pub beam: BeamArgs,
}

#[derive(Args, Debug, Clone)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub source: ModelSource,
    /// Data directories; defaults to the sources recorded in the run manifest.
    #[arg(long = "data", value_name = "DIR")]
    pub data: Vec<PathBuf>,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitName,
    /// Evaluate every seed-<n> checkpoint of the run and add a mean row.
    #[arg(long = "per-seed")]
    pub per_seed: bool,
    /// Print tab-separated values instead of the table.
    #[arg(long)]
    pub tsv: bool,
    /// Also write report.json, report.tsv and a manifest here.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub config: ConfigArgs,
    #[command(flatten)]
    pub beam: BeamArgs,
}

#[derive(Args, Debug, Clone)]
pub struct GradcheckArgs {
    /// Hidden size, even and at most 8.
    #[arg(long, default_value_t = 4)]
    pub hidden: usize,
    /// Slot-value pairs in the check DA.
    #[arg(long, default_value_t = 3)]
    pub pairs: usize,
    /// Decoder steps, EOS included.
    #[arg(long, default_value_t = 3)]
    pub steps: usize,
    #[arg(long = "vocab-size", default_value_t = 12)]
    pub vocab_size: usize,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Check a single variant instead of all three.
    #[arg(long, value_parser = parse_variant)]
    pub variant: Option<CellVariant>,
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
    #[arg(long, default_value_t = 1e-5)]
    pub epsilon: f64,
    /// Parameters are drawn from ±scale.
    #[arg(long, default_value_t = 1.0)]
    pub scale: f64,
    /// Multiply the analytic gradient by this factor (negative control).
    #[arg(long = "corrupt-gradient", default_value_t = 1.0, hide = true)]
    pub corrupt_gradient: f64,
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct InspectArgs {
    #[arg(long = "data", value_name = "DIR")]
    pub data: Vec<PathBuf>,
    /// Print a checkpoint header.
    #[arg(long, value_name = "CKPT")]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Args, Debug, Clone)]
pub struct ReplayArgs {
    /// manifest.json of an earlier run.
    pub manifest: PathBuf,
    /// Fresh output directory.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}
