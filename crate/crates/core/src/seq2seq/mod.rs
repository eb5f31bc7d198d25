//! The topic-aware encoder-decoder and its ablation variants.
//!
//! * [`params`] owns the trainable tensors for a [`ModelConfig`].
//! * [`model`] holds the forward pass: bidirectional GRU encoder, message and
//!   topic attention, the decoder step and its generation distribution, and
//!   the teacher-forced loss.
//! * [`decode`] holds greedy and beam-search generation over a frozen model.

pub mod decode;
pub mod model;
pub mod params;
#[cfg(test)]
mod tests;

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::numeric::NumericError;

pub use decode::{beam_search, greedy_decode, BeamConfig, DecoderState, Hypothesis};
pub use model::{
    decode_step, encode, message_attention, sequence_nll, sequence_nll_graph, sequence_nll_with_grads, step,
    step_log_prob, step_log_probs, topic_attention, Conditioning, EncoderOutput, GenerationDistribution, StepOutput,
};
pub use params::ModelParams;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Seq2SeqError {
    #[error(transparent)]
    Numeric(#[from] NumericError),
    #[error("{0}")]
    Contract(String),
}

pub(crate) fn contract<T>(msg: impl Into<String>) -> Result<T, Seq2SeqError> {
    Err(Seq2SeqError::Contract(msg.into()))
}

/// Which components of the full model are active.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    /// Attention encoder-decoder with no topic input.
    S2sa,
    /// A static topic vector from an MLP over the concatenated topic
    /// embeddings, no generation bias.
    TopicConcat,
    /// Topic attention, no generation bias.
    TopicAttention,
    /// Joint attention plus the topic-biased generation distribution.
    TaSeq2Seq,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::S2sa,
        Variant::TopicConcat,
        Variant::TopicAttention,
        Variant::TaSeq2Seq,
    ];

    pub fn uses_topics(self) -> bool {
        self != Variant::S2sa
    }

    pub fn has_topic_attention(self) -> bool {
        matches!(self, Variant::TopicAttention | Variant::TaSeq2Seq)
    }

    pub fn has_topic_bias(self) -> bool {
        self == Variant::TaSeq2Seq
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::S2sa => "s2sa",
            Variant::TopicConcat => "topic-concat",
            Variant::TopicAttention => "topic-attention",
            Variant::TaSeq2Seq => "ta-seq2seq",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "s2sa" => Ok(Variant::S2sa),
            "topic-concat" | "topicconcat" | "s2sa-topicconcat" => Ok(Variant::TopicConcat),
            "topic-attention" | "topicattention" | "s2sa-topicattention" => Ok(Variant::TopicAttention),
            "ta-seq2seq" | "taseq2seq" | "ta" => Ok(Variant::TaSeq2Seq),
            other => Err(format!("unknown model variant {other:?}")),
        }
    }
}

/// Squashing applied to the biased-distribution scores of the full model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub enum ScoreActivation {
    #[default]
    Tanh,
    Identity,
}

impl fmt::Display for ScoreActivation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScoreActivation::Tanh => "tanh",
            ScoreActivation::Identity => "identity",
        })
    }
}

impl FromStr for ScoreActivation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "tanh" => Ok(ScoreActivation::Tanh),
            "identity" | "none" => Ok(ScoreActivation::Identity),
            other => Err(format!("unknown score activation {other:?}")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub hidden: usize,
    pub embed: usize,
    pub attn_hidden: usize,
    pub message_vocab: usize,
    /// Size of the output vocabulary `U` (response vocabulary plus topic words).
    pub output_vocab: usize,
    /// Dimension of a topic-word embedding (the LDA topic count).
    pub topic_dim: usize,
    /// Maximum number of topic words per message.
    pub topic_capacity: usize,
    pub variant: Variant,
    pub score_activation: ScoreActivation,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), Seq2SeqError> {
        let sizes = [
            ("hidden", self.hidden),
            ("embed", self.embed),
            ("attn_hidden", self.attn_hidden),
            ("message_vocab", self.message_vocab),
            ("output_vocab", self.output_vocab),
            ("topic_dim", self.topic_dim),
            ("topic_capacity", self.topic_capacity),
        ];
        for (name, v) in sizes {
            if v == 0 {
                return contract(format!("model size {name} must be at least 1"));
            }
        }
        Ok(())
    }

    /// Width of the topic vector fed to the decoder GRU.
    pub fn topic_input_dim(&self) -> usize {
        match self.variant {
            Variant::S2sa => 0,
            Variant::TopicConcat => 2 * self.hidden,
            Variant::TopicAttention | Variant::TaSeq2Seq => self.topic_dim,
        }
    }

    pub fn decoder_input_dim(&self) -> usize {
        self.embed + 2 * self.hidden + self.topic_input_dim()
    }
}

/// Topic words of one message: output-vocabulary ids and `p(z|w)` vectors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TopicContext {
    pub words: Vec<usize>,
    pub embeddings: Vec<Vec<f64>>,
}

impl TopicContext {
    pub fn new(words: Vec<usize>, embeddings: Vec<Vec<f64>>) -> Self {
        Self { words, embeddings }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub(crate) fn validate(&self, cfg: &ModelConfig) -> Result<(), Seq2SeqError> {
        if self.words.len() != self.embeddings.len() {
            return contract("topic words and embeddings differ in length");
        }
        if self.words.len() > cfg.topic_capacity {
            return contract(format!(
                "{} topic words exceed capacity {}",
                self.words.len(),
                cfg.topic_capacity
            ));
        }
        if cfg.variant.uses_topics() && self.is_empty() {
            return contract(format!("variant {} needs a non-empty topic word set", cfg.variant));
        }
        if let Some(&bad) = self.words.iter().find(|&&w| w >= cfg.output_vocab) {
            return contract(format!("topic word id {bad} outside the output vocabulary"));
        }
        if self.embeddings.iter().any(|e| e.len() != cfg.topic_dim) {
            return contract(format!("topic embeddings must have dimension {}", cfg.topic_dim));
        }
        let mut seen = self.words.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != self.words.len() {
            return contract("topic word ids must be distinct");
        }
        Ok(())
    }
}

/// One encoded training or evaluation record.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub message: Vec<usize>,
    /// Response ids ending with EOS.
    pub response: Vec<usize>,
    pub topics: TopicContext,
}
