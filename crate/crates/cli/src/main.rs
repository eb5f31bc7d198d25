//! `taseq`: LDA training, data preparation, model training, generation,
//! interactive chat and evaluation for topic-aware seq2seq.

mod commands;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use error::CliError;

#[derive(Parser, Debug)]
#[command(name = "taseq", version, about = "Topic-aware sequence-to-sequence response generation")]
struct Cli {
    /// Flat key = value run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// More log output (repeat for debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a Twitter LDA model by collapsed Gibbs sampling.
    LdaTrain(LdaTrainArgs),
    /// List the top words of one topic.
    LdaTopics(LdaTopicsArgs),
    /// Build vocabularies and topic-word tables in the work directory.
    Prepare,
    /// Train the response generation model.
    Train(TrainArgs),
    /// Generate one response per input line.
    Generate(GenerateArgs),
    /// Interactive loop: message in, topic words and response out.
    Chat(ChatArgs),
    /// Perplexity, distinct-1/2 and optional Fleiss' kappa.
    Eval(EvalArgs),
}

#[derive(Args, Debug)]
pub struct LdaTrainArgs {
    /// Documents, one per line, optionally `user<TAB>text`.
    #[arg(long)]
    docs: Option<PathBuf>,
    #[arg(long)]
    topics: Option<usize>,
    /// `auto` for 1/T, or a positive number.
    #[arg(long)]
    alpha: Option<String>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    iters: Option<usize>,
    /// Output model file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct LdaTopicsArgs {
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    topic: usize,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long = "stoplist-size")]
    stoplist_size: Option<usize>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Continue from this checkpoint's parameters and training state.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Overrides max_epochs.
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Messages, one per line (text before a TAB is used).
    #[arg(long)]
    input: PathBuf,
    /// Defaults to stdout.
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    beam: Option<usize>,
    #[arg(long = "max-len")]
    max_len: Option<usize>,
    /// Greedy decoding instead of beam search.
    #[arg(long)]
    greedy: bool,
}

#[derive(Args, Debug)]
pub struct ChatArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    beam: Option<usize>,
    #[arg(long = "max-len")]
    max_len: Option<usize>,
    /// Append `> message` / `< response` lines here.
    #[arg(long)]
    transcript: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Test pairs; defaults to test_file from the config.
    #[arg(long)]
    test: Option<PathBuf>,
    /// Validation pairs for PPL-D; defaults to valid_file from the config.
    #[arg(long)]
    valid: Option<PathBuf>,
    /// Pre-generated responses for distinct-n; otherwise generated here.
    #[arg(long)]
    responses: Option<PathBuf>,
    /// Annotation matrix (TSV, one row per item, labels 0/1/2).
    #[arg(long)]
    annotations: Option<PathBuf>,
    /// Also write the key=value report here.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    beam: Option<usize>,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = match &cli.config {
        Some(p) => ta_seq2seq::config::RunConfig::load(p)?,
        None => ta_seq2seq::config::RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    match cli.command {
        Command::LdaTrain(a) => commands::lda_train(&cfg, a),
        Command::LdaTopics(a) => commands::lda_topics(&cfg, a),
        Command::Prepare => commands::prepare(&cfg),
        Command::Train(a) => commands::train(cfg, a),
        Command::Generate(a) => commands::generate(&cfg, a),
        Command::Chat(a) => commands::chat(&cfg, a),
        Command::Eval(a) => commands::eval(&cfg, a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).format_timestamp(None).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
