//! Per-message topic words: LDA topic assignment, top-n topic words with a
//! stoplist, and their mapping into the output vocabulary `U`.

use std::collections::BTreeSet;

use crate::corpus::Vocabulary;
use crate::lda::{LdaError, LdaModel};
use crate::seq2seq::TopicContext;

/// Topic words of one topic, resolved to output-vocabulary ids.
#[derive(Clone, Debug, PartialEq)]
pub struct TopicEntry {
    pub words: Vec<String>,
    pub context: TopicContext,
}

/// Which topic a message was given and why.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Assignment {
    /// MAP topic under the LDA model.
    Inferred(usize),
    /// No message word is in the LDA vocabulary, or the inferred topic has
    /// no topic words left after the stoplist: the fallback topic is used.
    Fallback(usize),
}

impl Assignment {
    pub fn topic(self) -> usize {
        match self {
            Assignment::Inferred(z) | Assignment::Fallback(z) => z,
        }
    }
}

/// Precomputed topic-word sets for every LDA topic.
#[derive(Clone, Debug, PartialEq)]
pub struct TopicTable {
    entries: Vec<TopicEntry>,
    fallback: usize,
}

/// Topic words of every topic, in topic order, deduplicated in first-seen
/// order. These are the words appended to the response vocabulary to form `U`.
pub fn all_topic_words(lda: &LdaModel, n: usize, stoplist: &BTreeSet<String>) -> Result<Vec<String>, LdaError> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for z in 0..lda.topics() {
        for w in lda.topic_words(z, n, stoplist)?.words {
            if seen.insert(w.clone()) {
                out.push(w);
            }
        }
    }
    Ok(out)
}

impl TopicTable {
    /// Resolves each topic's top-`n` words against `output`. Words missing
    /// from `output` are skipped (they cannot be generated).
    pub fn build(
        lda: &LdaModel,
        n: usize,
        stoplist: &BTreeSet<String>,
        output: &Vocabulary,
    ) -> Result<Self, LdaError> {
        let mut entries = Vec::with_capacity(lda.topics());
        for z in 0..lda.topics() {
            let set = lda.topic_words(z, n, stoplist)?;
            let mut entry = TopicEntry {
                words: Vec::new(),
                context: TopicContext::default(),
            };
            for (w, e) in set.words.into_iter().zip(set.embeddings) {
                if let Some(id) = output.id(&w) {
                    entry.words.push(w);
                    entry.context.words.push(id);
                    entry.context.embeddings.push(e);
                }
            }
            entries.push(entry);
        }
        // Fallback: the non-empty topic with the most training documents.
        let t = lda.topics();
        let units = lda.units().len();
        let docs = |z: usize| -> u64 { (0..units).map(|u| lda.counts().unit_topic[u * t + z]).sum() };
        let fallback = (0..t)
            .filter(|&z| !entries[z].words.is_empty())
            .max_by(|&a, &b| docs(a).cmp(&docs(b)).then(b.cmp(&a)))
            .ok_or(LdaError::NoTopic)?;
        Ok(Self { entries, fallback })
    }

    pub fn topics(&self) -> usize {
        self.entries.len()
    }

    pub fn entry(&self, z: usize) -> &TopicEntry {
        &self.entries[z]
    }

    pub fn fallback(&self) -> usize {
        self.fallback
    }

    /// Largest topic-word set; the model's topic capacity.
    pub fn capacity(&self) -> usize {
        self.entries.iter().map(|e| e.words.len()).max().unwrap_or(0)
    }

    pub fn assign<S: AsRef<str>>(&self, lda: &LdaModel, message: &[S]) -> Assignment {
        match lda.assign_topic(message) {
            Ok(z) if !self.entries[z].words.is_empty() => Assignment::Inferred(z),
            _ => Assignment::Fallback(self.fallback),
        }
    }

    /// Topic assignment and topic-word context for a raw message.
    pub fn lookup<S: AsRef<str>>(&self, lda: &LdaModel, message: &[S]) -> (Assignment, &TopicContext) {
        let a = self.assign(lda, message);
        (a, &self.entries[a.topic()].context)
    }
}
