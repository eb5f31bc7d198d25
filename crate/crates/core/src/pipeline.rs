//! Glue between the corpus, the topic model and the network: vocabulary
//! planning (`U` = response vocabulary plus topic words), example encoding
//! and model sizing from a [`RunConfig`].

use std::collections::BTreeSet;

use thiserror::Error;

use crate::config::RunConfig;
use crate::corpus::{CorpusError, Side, TokenizedPair, Vocabulary};
use crate::lda::{LdaError, LdaModel};
use crate::seq2seq::{Example, ModelConfig, TopicContext};
use crate::topics::{all_topic_words, Assignment, TopicTable};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Lda(#[from] LdaError),
}

/// LDA model plus the derived per-topic word sets.
#[derive(Clone, Debug, PartialEq)]
pub struct TopicResources {
    pub lda: LdaModel,
    pub topic_words: usize,
    pub stoplist_size: usize,
    pub stoplist: BTreeSet<String>,
    pub table: TopicTable,
}

impl TopicResources {
    pub fn new(lda: LdaModel, topic_words: usize, stoplist_size: usize, output: &Vocabulary) -> Result<Self, LdaError> {
        let stoplist = lda.stoplist(stoplist_size);
        let table = TopicTable::build(&lda, topic_words, &stoplist, output)?;
        Ok(Self {
            lda,
            topic_words,
            stoplist_size,
            stoplist,
            table,
        })
    }

    pub fn lookup<S: AsRef<str>>(&self, message: &[S]) -> (Assignment, &TopicContext) {
        self.table.lookup(&self.lda, message)
    }
}

/// Message vocabulary and output vocabulary `U`.
#[derive(Clone, Debug, PartialEq)]
pub struct Vocabularies {
    pub message: Vocabulary,
    pub output: Vocabulary,
}

/// The `message_size` / `response_size` most frequent training tokens per
/// side; topic words of every topic are appended to the response side.
pub fn build_vocabularies(
    pairs: &[TokenizedPair],
    message_size: usize,
    response_size: usize,
    lda: &LdaModel,
    topic_words: usize,
    stoplist_size: usize,
) -> Result<Vocabularies, PipelineError> {
    let message = Vocabulary::build(pairs, Side::Message, message_size)?;
    let mut output = Vocabulary::build(pairs, Side::Response, response_size)?;
    let stoplist = lda.stoplist(stoplist_size);
    output.extend(all_topic_words(lda, topic_words, &stoplist)?);
    Ok(Vocabularies { message, output })
}

pub fn encode_example(pair: &TokenizedPair, vocabs: &Vocabularies, topics: &TopicResources) -> Example {
    Example {
        message: vocabs.message.encode(&pair.message),
        response: vocabs.output.encode_response(&pair.response),
        topics: topics.lookup(&pair.message).1.clone(),
    }
}

pub fn encode_examples(pairs: &[TokenizedPair], vocabs: &Vocabularies, topics: &TopicResources) -> Vec<Example> {
    pairs.iter().map(|p| encode_example(p, vocabs, topics)).collect()
}

pub fn model_config(run: &RunConfig, vocabs: &Vocabularies, topics: &TopicResources) -> ModelConfig {
    ModelConfig {
        hidden: run.hidden,
        embed: run.embed,
        attn_hidden: run.attn_hidden,
        message_vocab: vocabs.message.len(),
        output_vocab: vocabs.output.len(),
        topic_dim: topics.lda.topics(),
        topic_capacity: topics.table.capacity().max(1),
        variant: run.variant,
        score_activation: run.score_activation,
    }
}
