//! The `personachat` command line.
//!
//! Exit status is 0 on success, 1 when the arguments, config or inputs are
//! invalid (checked before any work starts), and 2 when a run fails.

mod commands;
pub mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use personachat::corpus::{ConditioningMode, Speaker, Split, Variant};
use personachat::eval::PredictionLevel;
use personachat_service::ModelType;

pub use commands::{chat_loop, parse_model_spec, ModelSpec};

#[derive(Debug, Parser)]
#[command(name = "personachat", version, about = "Persona-conditioned dialogue models: corpora, training, evaluation and live chat")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse released dialogue files into a canonical JSONL corpus and print its statistics
    Ingest(IngestArgs),
    /// Generate a synthetic persona corpus
    Synth(SynthArgs),
    /// Train a model on the training split of a corpus
    Train(TrainArgs),
    /// Evaluate models over conditioning modes and persona variants
    Eval(EvalArgs),
    /// Rank true personas against sampled ones from a speaker's utterances
    ProfilePred(ProfilePredArgs),
    /// Chat with a model in the terminal
    Chat(ChatArgs),
    /// Start the HTTP chat and evaluation service
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct Common {
    /// JSON file with defaults for any flag; flags win
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Seed for every random choice
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Dialogue file, or a directory holding `<split>_{both,self}_<variant>.txt` files (repeatable)
    #[arg(long = "in", value_name = "PATH")]
    pub input: Vec<PathBuf>,
    /// Canonical JSONL output
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
    /// Split of a single input file (default: from the file name, else train)
    #[arg(long)]
    pub split: Option<Split>,
    /// Persona variant: original or revised (default: from the file name; directories take both)
    #[arg(long)]
    pub variant: Option<Variant>,
    /// Input lines carry no label candidates
    #[arg(long)]
    pub no_candidates: bool,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Canonical JSONL output
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub n_personas: Option<usize>,
    #[arg(long)]
    pub n_episodes: Option<usize>,
    /// Candidates per labeled turn, gold included
    #[arg(long)]
    pub n_candidates: Option<usize>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Canonical JSONL corpus
    #[arg(long = "in", value_name = "FILE")]
    pub input: Option<PathBuf>,
    /// Model file; side files `<out>.vocab` and `<out>.kv` are written next to it
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
    /// ir, ranker, profile-mem, kv-profile-mem, seq2seq, lm or gen-profile-mem
    #[arg(long)]
    pub model_type: Option<ModelType>,
    /// Persona conditioning: none, self, their or both (default self)
    #[arg(long)]
    pub mode: Option<ConditioningMode>,
    /// Persona variant: original or revised (default original)
    #[arg(long)]
    pub variant: Option<Variant>,
    /// Split to train on (default train)
    #[arg(long)]
    pub split: Option<Split>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Canonical JSONL corpus
    #[arg(long = "in", value_name = "FILE")]
    pub input: Option<PathBuf>,
    /// Model as `[NAME=][TYPE:]PATH` (repeatable); `{mode}` and `{variant}` in PATH select a file per cell
    #[arg(long, value_name = "SPEC")]
    pub model: Vec<String>,
    /// Type for model specs that do not name one
    #[arg(long)]
    pub model_type: Option<ModelType>,
    /// Evaluate one conditioning mode only (default: all four)
    #[arg(long)]
    pub mode: Option<ConditioningMode>,
    /// Evaluate one persona variant only (default: both)
    #[arg(long)]
    pub variant: Option<Variant>,
    /// Candidates per example, gold included (default 20)
    #[arg(long)]
    pub n_candidates: Option<usize>,
    /// Split to evaluate (default test)
    #[arg(long)]
    pub split: Option<Split>,
    /// Also write the report as JSONL here
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct ProfilePredArgs {
    /// Canonical JSONL corpus
    #[arg(long = "in", value_name = "FILE")]
    pub input: Option<PathBuf>,
    /// profile or sentence
    #[arg(long, value_parser = parse_level)]
    pub level: Option<PredictionLevel>,
    /// Speaker whose utterances are read: p0 or p1
    #[arg(long)]
    pub speaker: Option<Speaker>,
    /// Speaker whose persona is predicted: p0 or p1
    #[arg(long)]
    pub target: Option<Speaker>,
    /// Persona variant (default original)
    #[arg(long)]
    pub variant: Option<Variant>,
    /// Candidate personas per dialogue, true one included (default 101)
    #[arg(long)]
    pub n_candidates: Option<usize>,
    /// Dialogues to evaluate (default test)
    #[arg(long)]
    pub split: Option<Split>,
    /// Also write the result as JSON here
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct ChatArgs {
    /// Model file
    #[arg(long, value_name = "FILE")]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub model_type: Option<ModelType>,
    /// none ignores the sampled persona; self conditions on it (default self)
    #[arg(long)]
    pub mode: Option<ConditioningMode>,
    /// Corpus supplying the persona (test split) and the reply pool (training split)
    #[arg(long = "in", value_name = "FILE")]
    pub input: Option<PathBuf>,
    /// Persona variant (default original)
    #[arg(long)]
    pub variant: Option<Variant>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// JSON file whose `service` section configures models, corpus and event log
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Port to listen on; 0 picks a free one (default 8080)
    #[arg(long)]
    pub port: Option<u16>,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
}

fn parse_level(s: &str) -> Result<PredictionLevel, String> {
    match s {
        "profile" => Ok(PredictionLevel::Profile),
        "sentence" => Ok(PredictionLevel::Sentence),
        other => Err(format!("unknown level `{other}` (profile or sentence)")),
    }
}

#[derive(Debug)]
pub enum Failure {
    Invalid(anyhow::Error),
    Runtime(anyhow::Error),
}

impl Failure {
    pub fn code(&self) -> i32 {
        match self {
            Failure::Invalid(_) => 1,
            Failure::Runtime(_) => 2,
        }
    }
}

/// Parses `args` (program name first), runs the subcommand and returns the
/// exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).try_init();
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    match commands::dispatch(cli.command) {
        Ok(()) => 0,
        Err(f) => {
            let (kind, e) = match &f {
                Failure::Invalid(e) => ("invalid input", e),
                Failure::Runtime(e) => ("failed", e),
            };
            eprintln!("error ({kind}): {e:#}");
            f.code()
        }
    }
}
