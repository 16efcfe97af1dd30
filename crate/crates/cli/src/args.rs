use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::{parse_assignment, Layer};

#[derive(Debug, Parser)]
#[command(
    name = "nl2sparql",
    version,
    about = "Generate question/SPARQL corpora, train seq2seq translators and evaluate them",
    after_help = "Exit codes: 0 ok, 2 usage or input error, 3 knowledge-base service error, 4 numeric failure.\n\
                  NL2SPARQL_CACHE overrides the endpoint response cache directory."
)]
pub struct Cli {
    /// More log output (-v info, -vv debug). RUST_LOG takes precedence.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Instantiate template pairs with entities from a knowledge base.
    Generate(GenerateArgs),
    /// Encode SPARQL queries, one per line, into token sequences.
    Encode(CodecArgs),
    /// Decode token sequences, one per line, back into SPARQL.
    Decode(CodecArgs),
    /// Split a generated corpus into train, validation and test sets.
    Split(SplitArgs),
    /// Build a vocabulary file from the training split.
    Vocab(VocabArgs),
    /// Train a model on a split corpus.
    Train(TrainArgs),
    /// Translate questions read from stdin, one per line.
    Translate(TranslateArgs),
    /// Score a checkpoint (or a hypothesis file) on a split.
    Evaluate(EvaluateArgs),
    /// Run a preset x dataset grid and rank the results.
    Experiment(ExperimentArgs),
}

/// Configuration layers shared by every command.
#[derive(Debug, Clone, Default, Args)]
pub struct ConfigArgs {
    /// Flat `key = value` file; `#` starts a comment.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Override one config key; repeatable. Applied after --config.
    #[arg(long = "set", value_name = "KEY=VALUE", value_parser = parse_assignment)]
    pub set: Vec<(String, String)>,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Template TSV (`question<TAB>query<TAB>assistant query`) or `bundled`.
    #[arg(long, value_name = "FILE")]
    pub templates: String,
    /// SPARQL endpoint URL, N-Triples file, or `bundled` for the built-in
    /// monument store.
    #[arg(long, value_name = "URL|FILE")]
    pub kb: String,
    /// Maximum pairs per template.
    #[arg(long)]
    pub cap: Option<usize>,
    /// Sampling seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct CodecArgs {
    /// Input file (default stdin).
    #[arg(long = "in", value_name = "FILE")]
    pub input: Option<PathBuf>,
    /// Output file (default stdout).
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitModeArg {
    Ratio,
    Fixed,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    /// Directory holding `corpus.nl` and `corpus.sparql`.
    #[arg(long = "in", value_name = "DIR")]
    pub input: PathBuf,
    #[arg(long, value_enum)]
    pub mode: Option<SplitModeArg>,
    /// Training fraction (ratio mode).
    #[arg(long)]
    pub train: Option<f64>,
    /// Validation fraction (ratio mode).
    #[arg(long)]
    pub val: Option<f64>,
    /// Test fraction (ratio mode).
    #[arg(long)]
    pub test: Option<f64>,
    /// Validation pairs (fixed mode).
    #[arg(long)]
    pub val_count: Option<usize>,
    /// Test pairs (fixed mode).
    #[arg(long)]
    pub test_count: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Side {
    Nl,
    Sparql,
}

#[derive(Debug, Args)]
pub struct VocabArgs {
    /// Split corpus directory; the vocabulary is built from its training set.
    #[arg(long, value_name = "DIR")]
    pub data: PathBuf,
    #[arg(long, value_enum)]
    pub side: Side,
    #[arg(long)]
    pub min_count: Option<usize>,
    #[arg(long)]
    pub max_size: Option<usize>,
    /// One token per line, reserved tokens first.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Split corpus directory (`train`, `valid`, `test` pairs).
    #[arg(long, value_name = "DIR")]
    pub data: PathBuf,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Start from a named model preset.
    #[arg(long)]
    pub preset: Option<String>,
    /// Stop after the first epoch that ends past this many seconds.
    #[arg(long, value_name = "SECONDS")]
    pub time_limit: Option<f64>,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct TranslateArgs {
    #[arg(long, value_name = "FILE")]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub beam_width: Option<usize>,
    /// Prompt on stderr before each line.
    #[arg(long)]
    pub interactive: bool,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long, value_name = "FILE", required_unless_present = "hypotheses")]
    pub checkpoint: Option<PathBuf>,
    /// Encoded hypotheses, one per line, scored instead of decoding.
    #[arg(long, value_name = "FILE", conflicts_with = "checkpoint")]
    pub hypotheses: Option<PathBuf>,
    /// Split corpus directory.
    #[arg(long, value_name = "DIR")]
    pub data: PathBuf,
    /// Which split to score.
    #[arg(long, default_value = "test", value_parser = ["train", "valid", "test"])]
    pub split: String,
    #[arg(long)]
    pub beam_width: Option<usize>,
    /// Also write `report.tsv` and `translations.tsv` here.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    /// Grid file: `presets`, `datasets` and optional `seeds` lists plus
    /// shared config keys.
    #[arg(long, value_name = "FILE")]
    pub grid: PathBuf,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Runs executed concurrently, each in its own process.
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    #[command(flatten)]
    pub config: ConfigArgs,
}

impl ConfigArgs {
    /// The file layer followed by `extra` flags and then `--set` pairs.
    pub fn layers(&self, extra: Layer) -> Result<Vec<Layer>, crate::error::CliError> {
        let mut layers = Vec::new();
        if let Some(p) = &self.config {
            layers.push(crate::config::read_layer(p)?);
        }
        layers.push(extra);
        layers.push(self.set.clone());
        Ok(layers)
    }
}

/// `(key, value)` for each flag that was given.
pub fn flag_layer(flags: &[(&str, Option<String>)]) -> Layer {
    flags.iter().filter_map(|(k, v)| v.clone().map(|v| (k.to_string(), v))).collect()
}
