//! Flat `key = value` run configuration.
//!
//! One entry per line, `#` starts a comment, blank lines are ignored.
//! Unknown keys, repeated keys and ill-typed values are rejected, and the
//! loaded values are range-checked before any command uses them.

use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use thiserror::Error;

use crate::corpus::{DEFAULT_MAX_DUP, DEFAULT_MAX_LEN, DEFAULT_VOCAB_SIZE};
use crate::lda::{
    LdaHyperparams, DEFAULT_BETA, DEFAULT_GAMMA, DEFAULT_STOPLIST_SIZE, DEFAULT_TOPICS, DEFAULT_TOPIC_WORDS,
};
use crate::numeric::AdaDeltaConfig;
use crate::parallel::Exec;
use crate::seq2seq::{ScoreActivation, Variant};
use crate::training::{TrainConfig, DEFAULT_BATCH, DEFAULT_LEARNING_RATE, DEFAULT_STOP_THRESHOLD, DEFAULT_STOP_WINDOW};

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("{origin}:{line}: {reason}")]
    Syntax { origin: String, line: usize, reason: String },
    #[error("{origin}:{line}: unknown key {key:?}")]
    UnknownKey { origin: String, line: usize, key: String },
    #[error("{origin}:{line}: key {key:?} set twice")]
    Duplicate { origin: String, line: usize, key: String },
    #[error("{origin}:{line}: bad value for {key}: {reason}")]
    Value {
        origin: String,
        line: usize,
        key: String,
        reason: String,
    },
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("cannot read {path}: {reason}")]
    Io { path: String, reason: String },
}

/// LDA `alpha`: `auto` means `1/T`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Alpha {
    Auto,
    Fixed(f64),
}

impl FromStr for Alpha {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "auto" {
            Ok(Alpha::Auto)
        } else {
            s.parse::<f64>().map(Alpha::Fixed).map_err(|e| e.to_string())
        }
    }
}

impl fmt::Display for Alpha {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Alpha::Auto => f.write_str("auto"),
            Alpha::Fixed(a) => write!(f, "{a}"),
        }
    }
}

fn parse_exec(s: &str) -> Result<Exec, String> {
    match s {
        "parallel" => Ok(Exec::Parallel),
        "sequential" => Ok(Exec::Sequential),
        other => Err(format!("expected parallel or sequential, got {other:?}")),
    }
}

fn exec_name(e: Exec) -> &'static str {
    match e {
        Exec::Parallel => "parallel",
        Exec::Sequential => "sequential",
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    // Files.
    pub train_file: Option<PathBuf>,
    pub valid_file: Option<PathBuf>,
    pub test_file: Option<PathBuf>,
    pub lda_docs: Option<PathBuf>,
    pub lda_model: Option<PathBuf>,
    /// Vocabularies, checkpoints and the training log go here.
    pub work_dir: PathBuf,
    // Corpus.
    pub max_len: usize,
    pub max_dup: usize,
    pub message_vocab: usize,
    pub response_vocab: usize,
    // Twitter LDA and topic words.
    pub lda_topics: usize,
    pub lda_alpha: Alpha,
    pub lda_beta: f64,
    pub lda_gamma: f64,
    pub lda_iters: usize,
    pub topic_words: usize,
    pub stoplist_size: usize,
    // Model.
    pub variant: Variant,
    pub hidden: usize,
    pub embed: usize,
    pub attn_hidden: usize,
    pub score_activation: ScoreActivation,
    pub init_std: f64,
    // Training.
    pub batch_size: usize,
    pub learning_rate: f64,
    /// 0 validates once per epoch.
    pub validate_every: usize,
    pub stop_window: usize,
    pub stop_threshold: f64,
    pub max_epochs: usize,
    /// 0 disables clipping.
    pub clip: f64,
    pub adadelta_rho: f64,
    pub adadelta_epsilon: f64,
    pub exec: Exec,
    // Generation.
    pub beam: usize,
    pub gen_max_len: usize,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let ada = AdaDeltaConfig::default();
        Self {
            train_file: None,
            valid_file: None,
            test_file: None,
            lda_docs: None,
            lda_model: None,
            work_dir: PathBuf::from("work"),
            max_len: DEFAULT_MAX_LEN,
            max_dup: DEFAULT_MAX_DUP,
            message_vocab: DEFAULT_VOCAB_SIZE,
            response_vocab: DEFAULT_VOCAB_SIZE,
            lda_topics: DEFAULT_TOPICS,
            lda_alpha: Alpha::Auto,
            lda_beta: DEFAULT_BETA,
            lda_gamma: DEFAULT_GAMMA,
            lda_iters: 1000,
            topic_words: DEFAULT_TOPIC_WORDS,
            stoplist_size: DEFAULT_STOPLIST_SIZE,
            variant: Variant::TaSeq2Seq,
            hidden: 1000,
            embed: 620,
            attn_hidden: 1000,
            score_activation: ScoreActivation::Tanh,
            init_std: 0.01,
            batch_size: DEFAULT_BATCH,
            learning_rate: DEFAULT_LEARNING_RATE,
            validate_every: 0,
            stop_window: DEFAULT_STOP_WINDOW,
            stop_threshold: DEFAULT_STOP_THRESHOLD,
            max_epochs: 20,
            clip: 0.0,
            adadelta_rho: ada.rho,
            adadelta_epsilon: ada.epsilon,
            exec: Exec::default(),
            beam: 5,
            gen_max_len: DEFAULT_MAX_LEN,
            seed: 1,
        }
    }
}

/// Every accepted key, in the order [`RunConfig::to_text`] writes them.
pub const KEYS: &[&str] = &[
    "train_file",
    "valid_file",
    "test_file",
    "lda_docs",
    "lda_model",
    "work_dir",
    "max_len",
    "max_dup",
    "message_vocab",
    "response_vocab",
    "lda_topics",
    "lda_alpha",
    "lda_beta",
    "lda_gamma",
    "lda_iters",
    "topic_words",
    "stoplist_size",
    "variant",
    "hidden",
    "embed",
    "attn_hidden",
    "score_activation",
    "init_std",
    "batch_size",
    "learning_rate",
    "validate_every",
    "stop_window",
    "stop_threshold",
    "max_epochs",
    "clip",
    "adadelta_rho",
    "adadelta_epsilon",
    "exec",
    "beam",
    "gen_max_len",
    "seed",
];

fn parse_value<T: FromStr>(v: &str) -> Result<T, String>
where
    T::Err: fmt::Display,
{
    v.parse::<T>().map_err(|e| e.to_string())
}

impl RunConfig {
    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        let path = |v: &str| -> Result<Option<PathBuf>, String> {
            if v.is_empty() {
                Err("empty path".into())
            } else {
                Ok(Some(PathBuf::from(v)))
            }
        };
        match key {
            "train_file" => self.train_file = path(value)?,
            "valid_file" => self.valid_file = path(value)?,
            "test_file" => self.test_file = path(value)?,
            "lda_docs" => self.lda_docs = path(value)?,
            "lda_model" => self.lda_model = path(value)?,
            "work_dir" => self.work_dir = path(value)?.unwrap_or_default(),
            "max_len" => self.max_len = parse_value(value)?,
            "max_dup" => self.max_dup = parse_value(value)?,
            "message_vocab" => self.message_vocab = parse_value(value)?,
            "response_vocab" => self.response_vocab = parse_value(value)?,
            "lda_topics" => self.lda_topics = parse_value(value)?,
            "lda_alpha" => self.lda_alpha = parse_value(value)?,
            "lda_beta" => self.lda_beta = parse_value(value)?,
            "lda_gamma" => self.lda_gamma = parse_value(value)?,
            "lda_iters" => self.lda_iters = parse_value(value)?,
            "topic_words" => self.topic_words = parse_value(value)?,
            "stoplist_size" => self.stoplist_size = parse_value(value)?,
            "variant" => self.variant = parse_value(value)?,
            "hidden" => self.hidden = parse_value(value)?,
            "embed" => self.embed = parse_value(value)?,
            "attn_hidden" => self.attn_hidden = parse_value(value)?,
            "score_activation" => self.score_activation = parse_value(value)?,
            "init_std" => self.init_std = parse_value(value)?,
            "batch_size" => self.batch_size = parse_value(value)?,
            "learning_rate" => self.learning_rate = parse_value(value)?,
            "validate_every" => self.validate_every = parse_value(value)?,
            "stop_window" => self.stop_window = parse_value(value)?,
            "stop_threshold" => self.stop_threshold = parse_value(value)?,
            "max_epochs" => self.max_epochs = parse_value(value)?,
            "clip" => self.clip = parse_value(value)?,
            "adadelta_rho" => self.adadelta_rho = parse_value(value)?,
            "adadelta_epsilon" => self.adadelta_epsilon = parse_value(value)?,
            "exec" => self.exec = parse_exec(value)?,
            "beam" => self.beam = parse_value(value)?,
            "gen_max_len" => self.gen_max_len = parse_value(value)?,
            "seed" => self.seed = parse_value(value)?,
            _ => return Err(format!("unknown key {key:?}")),
        }
        Ok(())
    }

    /// Parses config text over the defaults and validates the result.
    pub fn parse(text: &str, origin: &str) -> Result<Self, ConfigError> {
        let mut cfg = RunConfig::default();
        let mut seen = std::collections::HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let Some((key, value)) = content.split_once('=') else {
                return Err(ConfigError::Syntax {
                    origin: origin.into(),
                    line,
                    reason: format!("expected key = value, got {content:?}"),
                });
            };
            let (key, value) = (key.trim(), value.trim());
            if !KEYS.contains(&key) {
                return Err(ConfigError::UnknownKey {
                    origin: origin.into(),
                    line,
                    key: key.into(),
                });
            }
            if !seen.insert(key.to_owned()) {
                return Err(ConfigError::Duplicate {
                    origin: origin.into(),
                    line,
                    key: key.into(),
                });
            }
            cfg.set(key, value).map_err(|reason| ConfigError::Value {
                origin: origin.into(),
                line,
                key: key.into(),
                reason,
            })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads a config file. Relative paths inside it are resolved against
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        let mut cfg = Self::parse(&text, &path.display().to_string())?;
        if let Some(base) = path.parent() {
            cfg.rebase(base);
        }
        Ok(cfg)
    }

    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for p in [
            &mut self.train_file,
            &mut self.valid_file,
            &mut self.test_file,
            &mut self.lda_docs,
            &mut self.lda_model,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
        fix(&mut self.work_dir);
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = [
            ("max_len", self.max_len),
            ("max_dup", self.max_dup),
            ("message_vocab", self.message_vocab),
            ("response_vocab", self.response_vocab),
            ("lda_topics", self.lda_topics),
            ("lda_iters", self.lda_iters),
            ("topic_words", self.topic_words),
            ("hidden", self.hidden),
            ("embed", self.embed),
            ("attn_hidden", self.attn_hidden),
            ("batch_size", self.batch_size),
            ("stop_window", self.stop_window),
            ("max_epochs", self.max_epochs),
            ("beam", self.beam),
            ("gen_max_len", self.gen_max_len),
        ];
        for (k, v) in positive {
            if v == 0 {
                return Err(ConfigError::Invalid(format!("{k} must be at least 1")));
            }
        }
        let pos_real = [
            ("lda_beta", self.lda_beta),
            ("lda_gamma", self.lda_gamma),
            ("init_std", self.init_std),
            ("learning_rate", self.learning_rate),
            ("stop_threshold", self.stop_threshold),
            ("adadelta_epsilon", self.adadelta_epsilon),
        ];
        for (k, v) in pos_real {
            if !(v > 0.0 && v.is_finite()) {
                return Err(ConfigError::Invalid(format!("{k} must be positive and finite")));
            }
        }
        if let Alpha::Fixed(a) = self.lda_alpha {
            if !(a > 0.0 && a.is_finite()) {
                return Err(ConfigError::Invalid("lda_alpha must be positive or auto".into()));
            }
        }
        if !(0.0..1.0).contains(&self.adadelta_rho) {
            return Err(ConfigError::Invalid("adadelta_rho must be in [0, 1)".into()));
        }
        if !(self.clip >= 0.0 && self.clip.is_finite()) {
            return Err(ConfigError::Invalid("clip must be >= 0 (0 disables)".into()));
        }
        Ok(())
    }

    pub fn lda_hyperparams(&self) -> LdaHyperparams {
        let mut h = LdaHyperparams::new(self.lda_topics, self.lda_iters, self.seed);
        h.beta = self.lda_beta;
        h.gamma = self.lda_gamma;
        if let Alpha::Fixed(a) = self.lda_alpha {
            h.alpha = a;
        }
        h
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            validate_every: (self.validate_every > 0).then_some(self.validate_every),
            stop_window: self.stop_window,
            stop_threshold: self.stop_threshold,
            max_epochs: self.max_epochs,
            seed: self.seed,
            clip: (self.clip > 0.0).then_some(self.clip),
            adadelta: AdaDeltaConfig {
                rho: self.adadelta_rho,
                epsilon: self.adadelta_epsilon,
            },
            exec: self.exec,
        }
    }

    fn value_of(&self, key: &str) -> Option<String> {
        let p = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
        Some(match key {
            "train_file" => return p(&self.train_file),
            "valid_file" => return p(&self.valid_file),
            "test_file" => return p(&self.test_file),
            "lda_docs" => return p(&self.lda_docs),
            "lda_model" => return p(&self.lda_model),
            "work_dir" => self.work_dir.display().to_string(),
            "max_len" => self.max_len.to_string(),
            "max_dup" => self.max_dup.to_string(),
            "message_vocab" => self.message_vocab.to_string(),
            "response_vocab" => self.response_vocab.to_string(),
            "lda_topics" => self.lda_topics.to_string(),
            "lda_alpha" => self.lda_alpha.to_string(),
            "lda_beta" => self.lda_beta.to_string(),
            "lda_gamma" => self.lda_gamma.to_string(),
            "lda_iters" => self.lda_iters.to_string(),
            "topic_words" => self.topic_words.to_string(),
            "stoplist_size" => self.stoplist_size.to_string(),
            "variant" => self.variant.to_string(),
            "hidden" => self.hidden.to_string(),
            "embed" => self.embed.to_string(),
            "attn_hidden" => self.attn_hidden.to_string(),
            "score_activation" => self.score_activation.to_string(),
            "init_std" => self.init_std.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "learning_rate" => self.learning_rate.to_string(),
            "validate_every" => self.validate_every.to_string(),
            "stop_window" => self.stop_window.to_string(),
            "stop_threshold" => self.stop_threshold.to_string(),
            "max_epochs" => self.max_epochs.to_string(),
            "clip" => self.clip.to_string(),
            "adadelta_rho" => self.adadelta_rho.to_string(),
            "adadelta_epsilon" => self.adadelta_epsilon.to_string(),
            "exec" => exec_name(self.exec).to_string(),
            "beam" => self.beam.to_string(),
            "gen_max_len" => self.gen_max_len.to_string(),
            "seed" => self.seed.to_string(),
            _ => return None,
        })
    }

    /// Serializes every set key; `parse(to_text(c)) == c`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for k in KEYS {
            if let Some(v) = self.value_of(k) {
                let _ = writeln!(s, "{k} = {v}");
            }
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_the_paper() {
        let c = RunConfig::default();
        assert_eq!((c.hidden, c.embed, c.batch_size), (1000, 620, 128));
        assert_eq!((c.lda_topics, c.topic_words, c.stoplist_size), (200, 100, 2000));
        assert_eq!(c.learning_rate, 1.0);
        assert!(c.validate().is_ok());
    }

    #[test]
    fn parses_comments_and_values() {
        let c = RunConfig::parse("# toy\nhidden = 16 # small\n\nvariant=s2sa\nlda_alpha = 0.5\nexec = sequential\n", "t")
            .unwrap();
        assert_eq!(c.hidden, 16);
        assert_eq!(c.variant, Variant::S2sa);
        assert_eq!(c.lda_alpha, Alpha::Fixed(0.5));
        assert_eq!(c.exec, Exec::Sequential);
        assert_eq!(c.lda_hyperparams().alpha, 0.5);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(RunConfig::parse("hiden = 3", "t"), Err(ConfigError::UnknownKey { line: 1, .. })));
        assert!(matches!(RunConfig::parse("hidden = x", "t"), Err(ConfigError::Value { .. })));
        assert!(matches!(RunConfig::parse("hidden 3", "t"), Err(ConfigError::Syntax { .. })));
        assert!(matches!(
            RunConfig::parse("seed = 1\nseed = 2", "t"),
            Err(ConfigError::Duplicate { line: 2, .. })
        ));
        assert!(matches!(RunConfig::parse("batch_size = 0", "t"), Err(ConfigError::Invalid(_))));
        assert!(matches!(RunConfig::parse("stop_threshold = -1", "t"), Err(ConfigError::Invalid(_))));
        assert!(matches!(RunConfig::parse("variant = lstm", "t"), Err(ConfigError::Value { .. })));
    }

    #[test]
    fn text_round_trip() {
        let c = RunConfig {
            train_file: Some("a/train.tsv".into()),
            variant: Variant::TopicConcat,
            clip: 5.0,
            lda_alpha: Alpha::Fixed(0.25),
            ..RunConfig::default()
        };
        let back = RunConfig::parse(&c.to_text(), "t").unwrap();
        assert_eq!(back, c);
    }
}
