//! `qe`: pseudo-MQM data generation, QE training and span evaluation.
//!
//! Exit status: 0 on success, 1 for bad input, 2 for runtime failures
//! (sampler errors, training divergence).

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use config::{PipelineConfig, CONFIG_ENV};

#[derive(Parser, Debug)]
#[command(name = "qe", version, about = "Quality-estimation pipeline: pseudo data, training, spans, evaluation")]
pub struct Cli {
    /// TOML configuration file; flags override its values.
    #[arg(long, global = true, env = CONFIG_ENV)]
    pub config: Option<PathBuf>,

    /// Print the effective configuration and exit.
    #[arg(long, global = true)]
    pub show_config: bool,

    /// Worker threads. Outputs do not depend on this value.
    #[arg(long, global = true, default_value_t = 1)]
    pub jobs: usize,

    /// Overrides `seed` and `train.seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    #[command(subcommand)]
    pub command: Option<Command>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a toy parallel corpus and annotated QE data with planted errors.
    ToyCorpus(ToyCorpusArgs),
    /// Estimate corruption statistics from annotated data.
    GenStats(GenStatsArgs),
    /// Corrupt reference translations into masked records.
    Corrupt(CorruptArgs),
    /// Train an n-gram language model on the target side of a parallel corpus.
    TrainLm(TrainLmArgs),
    /// Fill masks, producing pseudo QE samples.
    Fix(FixArgs),
    /// Train (pre-train and/or fine-tune) the QE model.
    TrainQe(TrainQeArgs),
    /// Predict sentence scores and OK-probabilities.
    Predict(PredictArgs),
    /// Combine prediction files from several systems.
    Ensemble(EnsembleArgs),
    /// Convert predictions into word tags and error spans.
    Spans(SpansArgs),
    /// Grid-search thresholds on annotated dev data.
    Tune(TuneArgs),
    /// Score predictions against gold annotations.
    Eval(EvalArgs),
}

#[derive(Args, Debug)]
pub struct ToyCorpusArgs {
    #[arg(long, default_value_t = 50)]
    pub pairs: usize,
    /// Annotated records with planted errors.
    #[arg(long, default_value_t = 50)]
    pub annotated: usize,
    /// Additional annotated records written to dev.jsonl.
    #[arg(long, default_value_t = 0)]
    pub dev: usize,
    #[arg(long)]
    pub output_dir: PathBuf,
}

#[derive(Args, Debug)]
pub struct GenStatsArgs {
    /// Annotated QE data (JSONL).
    #[arg(long, required_unless_present = "synthetic_defaults")]
    pub input: Option<PathBuf>,
    /// Write the built-in synthetic defaults instead of estimating.
    #[arg(long, conflicts_with = "input")]
    pub synthetic_defaults: bool,
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Args, Debug)]
pub struct CorruptArgs {
    /// Parallel corpus, source<TAB>target per line.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub stats: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long)]
    pub insert: Option<f64>,
    #[arg(long)]
    pub delete: Option<f64>,
}

#[derive(Args, Debug)]
pub struct TrainLmArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long)]
    pub order: Option<usize>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ModeArg {
    Ltr,
    Parallel,
}

#[derive(Args, Debug)]
pub struct FixArgs {
    /// Output of `corrupt`.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, required_unless_present = "external_cmd")]
    pub lm: Option<PathBuf>,
    /// Shell command speaking the line-delimited JSON sampler protocol.
    #[arg(long, conflicts_with = "lm")]
    pub external_cmd: Option<String>,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    #[arg(long)]
    pub k_minor: Option<usize>,
    #[arg(long)]
    pub k_major: Option<usize>,
    #[arg(long)]
    pub k_critical: Option<usize>,
    #[arg(long)]
    pub timeout_secs: Option<f64>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum SigmaArg {
    Sigmoid,
    None,
}

#[derive(Args, Debug)]
pub struct TrainQeArgs {
    /// Pseudo data for the first stage.
    #[arg(long, required_unless_present = "finetune_data")]
    pub pretrain_data: Option<PathBuf>,
    /// Real data for the second stage.
    #[arg(long)]
    pub finetune_data: Option<PathBuf>,
    #[arg(long)]
    pub valid: PathBuf,
    /// Start from this checkpoint instead of zero weights.
    #[arg(long)]
    pub init: Option<PathBuf>,
    #[arg(long)]
    pub output: PathBuf,
    /// Per-evaluation training history (JSON).
    #[arg(long)]
    pub history: Option<PathBuf>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub margin: Option<f64>,
    #[arg(long, value_enum)]
    pub sigma: Option<SigmaArg>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// QE records (JSONL); annotations are ignored.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Args, Debug)]
pub struct EnsembleArgs {
    /// Prediction files, one per system.
    #[arg(long = "input", required = true, num_args = 1..)]
    pub inputs: Vec<PathBuf>,
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum MergeArg {
    Worst,
    Majority,
}

#[derive(Args, Debug)]
pub struct SpansArgs {
    #[arg(long)]
    pub predictions: PathBuf,
    /// QE records supplying the translations.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    /// Also write binary word tags here.
    #[arg(long)]
    pub tags_output: Option<PathBuf>,
    /// Thresholds written by `tune`.
    #[arg(long)]
    pub thresholds: Option<PathBuf>,
    #[arg(long)]
    pub e_bad: Option<f64>,
    #[arg(long)]
    pub e_minor: Option<f64>,
    #[arg(long)]
    pub e_major: Option<f64>,
    #[arg(long, value_enum)]
    pub merge: Option<MergeArg>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum MatchArg {
    Strict,
    Lenient,
}

#[derive(Args, Debug)]
pub struct TuneArgs {
    #[arg(long)]
    pub predictions: PathBuf,
    /// Annotated dev records with tags and spans.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long)]
    pub step: Option<f64>,
    #[arg(long, value_enum)]
    pub mode: Option<MatchArg>,
    #[arg(long, value_enum)]
    pub merge: Option<MergeArg>,
}

#[derive(Clone, Copy, Debug, ValueEnum, PartialEq, Eq)]
pub enum TaskArg {
    Sentence,
    Word,
    Span,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long, value_enum)]
    pub task: TaskArg,
    /// Annotated gold records.
    #[arg(long)]
    pub gold: PathBuf,
    /// Prediction file (sentence), tag file (word) or span file (span).
    #[arg(long)]
    pub predictions: PathBuf,
    #[arg(long, value_enum)]
    pub mode: Option<MatchArg>,
    /// Also write the report here.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = if e.is_validation() { 1 } else { 2 };
            eprintln!("{}", serde_json::json!({ "event": "error", "message": e.to_string(), "exit": code }));
            eprintln!("error: {e}");
            ExitCode::from(code)
        }
    }
}

pub(crate) fn base_config(cli: &Cli) -> qe_core::Result<PipelineConfig> {
    let (mut config, _) = PipelineConfig::load(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
        config.train.seed = seed;
    }
    Ok(config)
}
