//! Command-line surface of scribe: configuration, dataset manifests,
//! pipeline stages and the inference benchmark.

pub mod bench;
pub mod commands;
pub mod config;
pub mod data;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use scribe_core::model::ModelError;
use scribe_core::trainer::TrainError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("data: {0}")]
    Data(String),
    #[error("diverged: {0}")]
    Divergence(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
            CliError::Divergence(_) => 4,
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Divergence { .. } => CliError::Divergence(e.to_string()),
            TrainError::Config(_) | TrainError::MissingStage(_) => CliError::Usage(e.to_string()),
            TrainError::Io(ref io) if io.kind() == std::io::ErrorKind::NotFound => CliError::Usage(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Config(_) => CliError::Usage(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "scribe", version, about = "Page-level handwritten document recognition at desk scale")]
#[command(after_long_help = config::keys_help(), after_help = config::keys_help())]
pub struct Cli {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// Base preset: desk or paper-full.
    #[arg(long, global = true, default_value = "desk")]
    pub preset: String,
    /// File of key=value lines applied over the preset.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Single key=value override, applied last; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Vocabulary file; defaults to the desk vocabulary of the bundled corpus.
    #[arg(long, global = true)]
    pub vocab: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Drop vocabulary entries from rejected Unicode blocks that the corpus never uses.
    PruneVocab {
        #[arg(long)]
        out: PathBuf,
        /// Text whose characters count as used; defaults to the bundled corpus.
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Rejected blocks as U+XXXX<TAB>U+YYYY<TAB>name lines; defaults to the built-in list.
        #[arg(long)]
        blocks: Option<PathBuf>,
    },
    /// Render synthetic pages with their labels into a dataset directory.
    Gen {
        #[arg(long)]
        template: String,
        #[arg(long)]
        count: usize,
        #[arg(long = "lines-max")]
        lines_max: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        /// Dataset id written into the manifest; defaults to the template name.
        #[arg(long)]
        dataset: Option<String>,
        #[arg(long, default_value = "train")]
        split: String,
        #[arg(long, default_value = "htr")]
        task: String,
        /// Index of the first page.
        #[arg(long, default_value_t = 0)]
        start: u64,
    },
    /// Pretrain the encoder and CTC head on rendered lines.
    PretrainEncoder {
        #[arg(long)]
        out: PathBuf,
    },
    /// Pretrain the whole model on synthetic pages of the listed datasets.
    Pretrain {
        #[arg(long)]
        init: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated dataset ids; defaults to every declared dataset.
        #[arg(long)]
        datasets: Option<String>,
        /// Stage name used for the checkpoint and manifest files.
        #[arg(long, default_value = "multilingual")]
        name: String,
    },
    /// Fine-tune with strategy A, B, C or D.
    Finetune {
        #[arg(long)]
        strategy: String,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        target: Option<String>,
        #[arg(long = "init-multilingual")]
        init_multilingual: Option<PathBuf>,
        #[arg(long = "init-monolingual")]
        init_monolingual: Option<PathBuf>,
        /// Manifest of a finished strategy A run.
        #[arg(long = "strategy-a")]
        strategy_a: Option<PathBuf>,
    },
    /// Score predictions against manifest labels.
    Eval {
        /// htr or ner.
        #[arg(long)]
        task: String,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        /// Decode with this checkpoint.
        #[arg(long, conflicts_with = "predictions")]
        checkpoint: Option<PathBuf>,
        /// Or read predicted labels as image<TAB>label lines.
        #[arg(long)]
        predictions: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the label string decoded from one page.
    Decode {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long, default_value = "htr")]
        task: String,
    },
    /// Time batch-1 greedy decoding over a manifest split.
    Bench {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        /// Character-vocabulary baseline checkpoint to compare against.
        #[arg(long = "baseline-checkpoint", requires = "baseline_vocab")]
        baseline_checkpoint: Option<PathBuf>,
        #[arg(long = "baseline-vocab")]
        baseline_vocab: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Runs a parsed command line and returns what goes to standard output.
pub fn run(cli: Cli) -> Result<String, CliError> {
    commands::dispatch(cli)
}
