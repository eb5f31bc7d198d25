use std::fmt;

use ta_seq2seq::checkpoint::CheckpointError;
use ta_seq2seq::config::ConfigError;
use ta_seq2seq::corpus::CorpusError;
use ta_seq2seq::eval::EvalError;
use ta_seq2seq::lda::LdaError;
use ta_seq2seq::pipeline::PipelineError;
use ta_seq2seq::seq2seq::Seq2SeqError;
use ta_seq2seq::training::TrainError;

/// Command failure, classified by exit code: 1 usage/config, 2 data,
/// 3 numeric.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }

    pub fn data(context: impl fmt::Display, e: impl fmt::Display) -> Self {
        CliError::Data(format!("{context}: {e}"))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Data(m) => f.write_str(m),
            CliError::Numeric(m) => write!(f, "numeric failure: {m}"),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<LdaError> for CliError {
    fn from(e: LdaError) -> Self {
        match e {
            LdaError::InvalidHyperparams(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Corpus(e) => e.into(),
            PipelineError::Lda(e) => e.into(),
        }
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<Seq2SeqError> for CliError {
    fn from(e: Seq2SeqError) -> Self {
        match e {
            Seq2SeqError::Numeric(_) => CliError::Numeric(e.to_string()),
            Seq2SeqError::Contract(_) => CliError::Data(e.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Model(m) => m.into(),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        if e.is_numeric() {
            return CliError::Numeric(e.to_string());
        }
        match e {
            TrainError::Config(_) => CliError::Usage(e.to_string()),
            TrainError::Eval(inner) => inner.into(),
            other => CliError::Data(other.to_string()),
        }
    }
}
