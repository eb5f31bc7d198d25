//! Twitter LDA trained by collapsed Gibbs sampling.
//!
//! Each document carries a single topic; each token is either drawn from that
//! topic or from a corpus-wide background distribution. The trained counts
//! give a topic for a new message, the topic's top words, and a `p(z|w)`
//! embedding per word.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::corpus::{rank_by_frequency, Document};

pub const DEFAULT_TOPICS: usize = 200;
pub const DEFAULT_BETA: f64 = 0.01;
pub const DEFAULT_GAMMA: f64 = 0.01;
pub const DEFAULT_TOPIC_WORDS: usize = 100;
pub const DEFAULT_STOPLIST_SIZE: usize = 2000;

const FORMAT_HEADER: &str = "twitter-lda v1";
const GLOBAL_UNIT: &str = "*";

#[derive(Debug, Error)]
pub enum LdaError {
    #[error("invalid hyperparameters: {0}")]
    InvalidHyperparams(String),
    #[error("no trainable documents")]
    EmptyCorpus,
    #[error("message has no in-vocabulary tokens; no topic can be assigned")]
    NoTopic,
    #[error("topic embedding undefined for {0:?}: no topic assignments")]
    UndefinedEmbedding(String),
    #[error("topic {topic} out of range for a model with {topics} topics")]
    TopicOutOfRange { topic: usize, topics: usize },
    #[error("model file line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct LdaHyperparams {
    pub topics: usize,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub iterations: usize,
    pub seed: u64,
}

impl LdaHyperparams {
    /// Defaults: `alpha = 1/T`, `beta = gamma = 0.01`.
    pub fn new(topics: usize, iterations: usize, seed: u64) -> Self {
        Self {
            topics,
            alpha: 1.0 / topics.max(1) as f64,
            beta: DEFAULT_BETA,
            gamma: DEFAULT_GAMMA,
            iterations,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), LdaError> {
        let bad = |m: &str| Err(LdaError::InvalidHyperparams(m.to_owned()));
        if self.topics == 0 {
            return bad("topic count must be at least 1");
        }
        if !(self.alpha > 0.0 && self.beta > 0.0 && self.gamma > 0.0) {
            return bad("alpha, beta and gamma must be positive");
        }
        if !(self.alpha.is_finite() && self.beta.is_finite() && self.gamma.is_finite()) {
            return bad("alpha, beta and gamma must be finite");
        }
        if self.iterations == 0 {
            return bad("iterations must be at least 1");
        }
        Ok(())
    }
}

/// Sampler state for one document.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DocAssignment {
    pub unit: usize,
    pub tokens: Vec<usize>,
    pub topic: usize,
    /// `true` where the token is attributed to the background distribution.
    pub background: Vec<bool>,
}

/// Count tables, exactly recomputable from the assignments.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CountTables {
    /// `C_wz`, row-major `[word][topic]`.
    pub topic_word: Vec<u64>,
    pub topic_total: Vec<u64>,
    pub background_word: Vec<u64>,
    pub background_total: u64,
    /// Documents per `[unit][topic]`.
    pub unit_topic: Vec<u64>,
    pub n_topic: u64,
    pub n_background: u64,
}

impl CountTables {
    fn zeros(words: usize, topics: usize, units: usize) -> Self {
        Self {
            topic_word: vec![0; words * topics],
            topic_total: vec![0; topics],
            background_word: vec![0; words],
            background_total: 0,
            unit_topic: vec![0; units * topics],
            n_topic: 0,
            n_background: 0,
        }
    }

    fn tally(words: usize, topics: usize, units: usize, docs: &[DocAssignment]) -> Self {
        let mut c = Self::zeros(words, topics, units);
        for d in docs {
            c.unit_topic[d.unit * topics + d.topic] += 1;
            for (&w, &bg) in d.tokens.iter().zip(&d.background) {
                if bg {
                    c.background_word[w] += 1;
                    c.background_total += 1;
                    c.n_background += 1;
                } else {
                    c.topic_word[w * topics + d.topic] += 1;
                    c.topic_total[d.topic] += 1;
                    c.n_topic += 1;
                }
            }
        }
        c
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LdaModel {
    pub hyper: LdaHyperparams,
    vocab: Vec<String>,
    index: HashMap<String, usize>,
    units: Vec<String>,
    counts: CountTables,
    docs: Vec<DocAssignment>,
}

/// Top topic words of one topic and their `p(z|w)` embeddings.
#[derive(Clone, Debug, PartialEq)]
pub struct TopicWordSet {
    pub topic: usize,
    pub words: Vec<String>,
    pub embeddings: Vec<Vec<f64>>,
}

fn index_of(vocab: &[String]) -> HashMap<String, usize> {
    vocab.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect()
}

/// Collapsed Gibbs sampler. [`gibbs_train`] drives it to completion; tests use
/// it directly to inspect the state between sweeps.
pub struct GibbsSampler {
    model: LdaModel,
    rng: ChaCha8Rng,
    sweeps: usize,
}

impl GibbsSampler {
    /// Vocabulary is every token in `docs`, most frequent first.
    pub fn new(docs: &[Document], hyper: LdaHyperparams) -> Result<Self, LdaError> {
        let vocab: Vec<String> = rank_by_frequency(docs.iter().flat_map(|d| d.tokens.iter().map(String::as_str)))
            .into_iter()
            .map(|(t, _)| t)
            .collect();
        Self::with_vocabulary(docs, vocab, hyper)
    }

    /// Tokens outside `vocab` are dropped; documents left empty are skipped
    /// with a warning.
    pub fn with_vocabulary(docs: &[Document], vocab: Vec<String>, hyper: LdaHyperparams) -> Result<Self, LdaError> {
        hyper.validate()?;
        let index = index_of(&vocab);
        let per_user = docs.iter().any(|d| d.user.is_some());
        let mut units: Vec<String> = Vec::new();
        let mut unit_index: HashMap<String, usize> = HashMap::new();
        if !per_user {
            units.push(GLOBAL_UNIT.to_owned());
        }
        let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
        let mut assignments = Vec::with_capacity(docs.len());
        for (i, d) in docs.iter().enumerate() {
            let tokens: Vec<usize> = d.tokens.iter().filter_map(|t| index.get(t).copied()).collect();
            if tokens.is_empty() {
                warn!("skipping LDA document {i}: no in-vocabulary tokens");
                continue;
            }
            let unit = if per_user {
                let name = d.user.clone().unwrap_or_default();
                *unit_index.entry(name.clone()).or_insert_with(|| {
                    units.push(name);
                    units.len() - 1
                })
            } else {
                0
            };
            let topic = rng.random_range(0..hyper.topics);
            let background = tokens.iter().map(|_| rng.random_bool(0.5)).collect();
            assignments.push(DocAssignment {
                unit,
                tokens,
                topic,
                background,
            });
        }
        if assignments.is_empty() {
            return Err(LdaError::EmptyCorpus);
        }
        let counts = CountTables::tally(vocab.len(), hyper.topics, units.len(), &assignments);
        Ok(Self {
            model: LdaModel {
                hyper,
                vocab,
                index,
                units,
                counts,
                docs: assignments,
            },
            rng,
            sweeps: 0,
        })
    }

    pub fn model(&self) -> &LdaModel {
        &self.model
    }

    pub fn into_model(self) -> LdaModel {
        self.model
    }

    pub fn sweeps(&self) -> usize {
        self.sweeps
    }

    /// One full pass: every document's topic, then each of its tokens'
    /// background/topic indicators.
    pub fn sweep(&mut self) {
        let m = &mut self.model;
        let t_count = m.hyper.topics;
        let (alpha, beta, gamma) = (m.hyper.alpha, m.hyper.beta, m.hyper.gamma);
        let v_beta = m.vocab.len() as f64 * beta;
        let c = &mut m.counts;
        let mut log_p = vec![0.0; t_count];
        let mut repeats: HashMap<usize, u64> = HashMap::new();

        for d in m.docs.iter_mut() {
            // document topic
            let z_old = d.topic;
            c.unit_topic[d.unit * t_count + z_old] -= 1;
            for (&w, &bg) in d.tokens.iter().zip(&d.background) {
                if !bg {
                    c.topic_word[w * t_count + z_old] -= 1;
                    c.topic_total[z_old] -= 1;
                }
            }
            for (z, lp) in log_p.iter_mut().enumerate() {
                let mut acc = (c.unit_topic[d.unit * t_count + z] as f64 + alpha).ln();
                repeats.clear();
                let mut seen = 0u64;
                for (&w, &bg) in d.tokens.iter().zip(&d.background) {
                    if bg {
                        continue;
                    }
                    let prior = repeats.entry(w).or_insert(0);
                    acc += (c.topic_word[w * t_count + z] as f64 + beta + *prior as f64).ln()
                        - (c.topic_total[z] as f64 + v_beta + seen as f64).ln();
                    *prior += 1;
                    seen += 1;
                }
                *lp = acc;
            }
            let z_new = sample_log(&log_p, &mut self.rng);
            d.topic = z_new;
            c.unit_topic[d.unit * t_count + z_new] += 1;
            for (&w, &bg) in d.tokens.iter().zip(&d.background) {
                if !bg {
                    c.topic_word[w * t_count + z_new] += 1;
                    c.topic_total[z_new] += 1;
                }
            }

            // token indicators
            let z = d.topic;
            for (&w, bg) in d.tokens.iter().zip(d.background.iter_mut()) {
                if *bg {
                    c.background_word[w] -= 1;
                    c.background_total -= 1;
                    c.n_background -= 1;
                } else {
                    c.topic_word[w * t_count + z] -= 1;
                    c.topic_total[z] -= 1;
                    c.n_topic -= 1;
                }
                let p_bg = (c.n_background as f64 + gamma) * (c.background_word[w] as f64 + beta)
                    / (c.background_total as f64 + v_beta);
                let p_topic = (c.n_topic as f64 + gamma) * (c.topic_word[w * t_count + z] as f64 + beta)
                    / (c.topic_total[z] as f64 + v_beta);
                *bg = self.rng.random::<f64>() * (p_bg + p_topic) < p_bg;
                if *bg {
                    c.background_word[w] += 1;
                    c.background_total += 1;
                    c.n_background += 1;
                } else {
                    c.topic_word[w * t_count + z] += 1;
                    c.topic_total[z] += 1;
                    c.n_topic += 1;
                }
            }
        }
        self.sweeps += 1;
    }
}

/// Draws an index with probability proportional to `exp(log_p)`.
fn sample_log(log_p: &[f64], rng: &mut impl Rng) -> usize {
    let max = log_p.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = log_p.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut r = rng.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if r < *w {
            return i;
        }
        r -= w;
    }
    // rounding left r at the tail: take the last positive weight
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(0)
}

/// Runs `hyper.iterations` sweeps and returns the final state.
pub fn gibbs_train(docs: &[Document], hyper: LdaHyperparams) -> Result<LdaModel, LdaError> {
    let iterations = hyper.iterations;
    let mut s = GibbsSampler::new(docs, hyper)?;
    for _ in 0..iterations {
        s.sweep();
    }
    Ok(s.into_model())
}

/// The `count` most frequent tokens, ties broken lexicographically.
pub fn build_stoplist(docs: &[Document], count: usize) -> BTreeSet<String> {
    rank_by_frequency(docs.iter().flat_map(|d| d.tokens.iter().map(String::as_str)))
        .into_iter()
        .take(count)
        .map(|(t, _)| t)
        .collect()
}

impl LdaModel {
    pub fn topics(&self) -> usize {
        self.hyper.topics
    }

    pub fn vocabulary(&self) -> &[String] {
        &self.vocab
    }

    pub fn word_id(&self, w: &str) -> Option<usize> {
        self.index.get(w).copied()
    }

    pub fn units(&self) -> &[String] {
        &self.units
    }

    pub fn counts(&self) -> &CountTables {
        &self.counts
    }

    pub fn assignments(&self) -> &[DocAssignment] {
        &self.docs
    }

    pub fn topic_word_count(&self, w: usize, z: usize) -> u64 {
        self.counts.topic_word[w * self.topics() + z]
    }

    /// Recomputes every count table from the stored assignments.
    pub fn recount(&self) -> CountTables {
        CountTables::tally(self.vocab.len(), self.topics(), self.units.len(), &self.docs)
    }

    pub fn counts_consistent(&self) -> bool {
        self.recount() == self.counts
    }

    /// Smoothed `p(w|z)` for every word.
    pub fn topic_distribution(&self, z: usize) -> Vec<f64> {
        let beta = self.hyper.beta;
        let denom = self.counts.topic_total[z] as f64 + self.vocab.len() as f64 * beta;
        (0..self.vocab.len())
            .map(|w| (self.topic_word_count(w, z) as f64 + beta) / denom)
            .collect()
    }

    /// Raw corpus frequency of each vocabulary word (topic plus background).
    pub fn word_frequencies(&self) -> Vec<u64> {
        (0..self.vocab.len())
            .map(|w| self.counts.background_word[w] + (0..self.topics()).map(|z| self.topic_word_count(w, z)).sum::<u64>())
            .collect()
    }

    /// The `count` most frequent words of the training corpus.
    pub fn stoplist(&self, count: usize) -> BTreeSet<String> {
        let freq = self.word_frequencies();
        let mut order: Vec<usize> = (0..self.vocab.len()).collect();
        order.sort_by(|&a, &b| freq[b].cmp(&freq[a]).then_with(|| self.vocab[a].cmp(&self.vocab[b])));
        order.into_iter().take(count).map(|w| self.vocab[w].clone()).collect()
    }

    /// MAP topic of a message under the trained counts, with the global
    /// document-topic counts as prior. Ties go to the lowest topic id.
    pub fn assign_topic<S: AsRef<str>>(&self, message: &[S]) -> Result<usize, LdaError> {
        let words: Vec<usize> = message.iter().filter_map(|t| self.word_id(t.as_ref())).collect();
        if words.is_empty() {
            return Err(LdaError::NoTopic);
        }
        let t_count = self.topics();
        let beta = self.hyper.beta;
        let v_beta = self.vocab.len() as f64 * beta;
        let mut best = (0, f64::NEG_INFINITY);
        for z in 0..t_count {
            let docs_in_z: u64 = (0..self.units.len()).map(|u| self.counts.unit_topic[u * t_count + z]).sum();
            let mut score = (docs_in_z as f64 + self.hyper.alpha).ln();
            let denom = (self.counts.topic_total[z] as f64 + v_beta).ln();
            for &w in &words {
                score += (self.topic_word_count(w, z) as f64 + beta).ln() - denom;
            }
            if score > best.1 {
                best = (z, score);
            }
        }
        Ok(best.0)
    }

    /// `p(z|w) = C_wz / Σ_z' C_wz'`.
    pub fn topic_word_embedding(&self, w: &str) -> Result<Vec<f64>, LdaError> {
        let id = self.word_id(w).ok_or_else(|| LdaError::UndefinedEmbedding(w.to_owned()))?;
        embedding_from_counts(&self.counts.topic_word[id * self.topics()..(id + 1) * self.topics()])
            .ok_or_else(|| LdaError::UndefinedEmbedding(w.to_owned()))
    }

    /// Words of topic `z` ranked by `C_wz` (ties lexicographic), stoplist
    /// removed before truncation to `n`. Words never assigned to `z` are
    /// excluded.
    pub fn topic_words(&self, z: usize, n: usize, stoplist: &BTreeSet<String>) -> Result<TopicWordSet, LdaError> {
        if z >= self.topics() {
            return Err(LdaError::TopicOutOfRange {
                topic: z,
                topics: self.topics(),
            });
        }
        let mut ranked: Vec<usize> = (0..self.vocab.len())
            .filter(|&w| self.topic_word_count(w, z) > 0 && !stoplist.contains(&self.vocab[w]))
            .collect();
        ranked.sort_by(|&a, &b| {
            self.topic_word_count(b, z)
                .cmp(&self.topic_word_count(a, z))
                .then_with(|| self.vocab[a].cmp(&self.vocab[b]))
        });
        ranked.truncate(n);
        let mut words = Vec::with_capacity(ranked.len());
        let mut embeddings = Vec::with_capacity(ranked.len());
        for w in ranked {
            words.push(self.vocab[w].clone());
            embeddings.push(self.topic_word_embedding(&self.vocab[w])?);
        }
        Ok(TopicWordSet {
            topic: z,
            words,
            embeddings,
        })
    }

    pub fn to_text(&self) -> String {
        let h = &self.hyper;
        let t_count = self.topics();
        let mut s = String::new();
        let _ = writeln!(s, "{FORMAT_HEADER}");
        let _ = writeln!(s, "topics\t{}", h.topics);
        let _ = writeln!(s, "alpha\t{}", h.alpha);
        let _ = writeln!(s, "beta\t{}", h.beta);
        let _ = writeln!(s, "gamma\t{}", h.gamma);
        let _ = writeln!(s, "iterations\t{}", h.iterations);
        let _ = writeln!(s, "seed\t{}", h.seed);
        let _ = writeln!(s, "indicators\t{}\t{}", self.counts.n_topic, self.counts.n_background);
        let _ = writeln!(s, "vocab\t{}", self.vocab.len());
        for (w, word) in self.vocab.iter().enumerate() {
            let _ = write!(s, "{word}\t{}", self.counts.background_word[w]);
            for z in 0..t_count {
                let _ = write!(s, "\t{}", self.topic_word_count(w, z));
            }
            s.push('\n');
        }
        let _ = writeln!(s, "units\t{}", self.units.len());
        for (u, name) in self.units.iter().enumerate() {
            let _ = write!(s, "{name}");
            for z in 0..t_count {
                let _ = write!(s, "\t{}", self.counts.unit_topic[u * t_count + z]);
            }
            s.push('\n');
        }
        let _ = writeln!(s, "docs\t{}", self.docs.len());
        for d in &self.docs {
            let _ = write!(s, "{}\t{}\t", d.unit, d.topic);
            for (i, (&w, &bg)) in d.tokens.iter().zip(&d.background).enumerate() {
                if i > 0 {
                    s.push(' ');
                }
                let _ = write!(s, "{w}:{}", if bg { 'b' } else { 't' });
            }
            s.push('\n');
        }
        s.push_str("end\n");
        s
    }

    /// Parses [`LdaModel::to_text`] output and checks that the stored
    /// tables match a recount of the stored assignments.
    pub fn from_text(text: &str) -> Result<Self, LdaError> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim_end_matches('\r')));
        let mut next = |what: &str| -> Result<(usize, &str), LdaError> {
            lines.next().ok_or_else(|| LdaError::Parse {
                line: 0,
                reason: format!("unexpected end of file, expected {what}"),
            })
        };
        let perr = |line: usize, reason: String| LdaError::Parse { line, reason };

        let (n, header) = next("header")?;
        if header != FORMAT_HEADER {
            return Err(perr(n, format!("unsupported header {header:?}")));
        }
        fn field<'a>(line: (usize, &'a str), key: &str) -> Result<Vec<&'a str>, LdaError> {
            let mut parts = line.1.split('\t');
            if parts.next() != Some(key) {
                return Err(LdaError::Parse {
                    line: line.0,
                    reason: format!("expected {key}"),
                });
            }
            Ok(parts.collect())
        }
        fn num<T: std::str::FromStr>(line: usize, s: Option<&&str>) -> Result<T, LdaError> {
            s.and_then(|v| v.parse().ok()).ok_or_else(|| LdaError::Parse {
                line,
                reason: format!("bad number {s:?}"),
            })
        }
        let l = next("topics")?;
        let topics: usize = num(l.0, field(l, "topics")?.first())?;
        let l = next("alpha")?;
        let alpha: f64 = num(l.0, field(l, "alpha")?.first())?;
        let l = next("beta")?;
        let beta: f64 = num(l.0, field(l, "beta")?.first())?;
        let l = next("gamma")?;
        let gamma: f64 = num(l.0, field(l, "gamma")?.first())?;
        let l = next("iterations")?;
        let iterations: usize = num(l.0, field(l, "iterations")?.first())?;
        let l = next("seed")?;
        let seed: u64 = num(l.0, field(l, "seed")?.first())?;
        let hyper = LdaHyperparams {
            topics,
            alpha,
            beta,
            gamma,
            iterations,
            seed,
        };
        hyper.validate()?;
        let l = next("indicators")?;
        let ind = field(l, "indicators")?;
        let n_topic: u64 = num(l.0, ind.first())?;
        let n_background: u64 = num(l.0, ind.get(1))?;

        let l = next("vocab")?;
        let v: usize = num(l.0, field(l, "vocab")?.first())?;
        let mut vocab = Vec::with_capacity(v);
        let mut topic_word = Vec::with_capacity(v * topics);
        let mut background_word = Vec::with_capacity(v);
        for _ in 0..v {
            let (ln, line) = next("vocabulary row")?;
            let parts: Vec<&str> = line.split('\t').collect();
            if parts.len() != topics + 2 {
                return Err(perr(ln, format!("expected {} fields", topics + 2)));
            }
            vocab.push(parts[0].to_owned());
            background_word.push(num(ln, parts.get(1))?);
            for p in &parts[2..] {
                topic_word.push(num(ln, Some(p))?);
            }
        }
        let l = next("units")?;
        let u: usize = num(l.0, field(l, "units")?.first())?;
        let mut units = Vec::with_capacity(u);
        let mut unit_topic = Vec::with_capacity(u * topics);
        for _ in 0..u {
            let (ln, line) = next("unit row")?;
            let parts: Vec<&str> = line.split('\t').collect();
            if parts.len() != topics + 1 {
                return Err(perr(ln, format!("expected {} fields", topics + 1)));
            }
            units.push(parts[0].to_owned());
            for p in &parts[1..] {
                unit_topic.push(num(ln, Some(p))?);
            }
        }
        let l = next("docs")?;
        let dn: usize = num(l.0, field(l, "docs")?.first())?;
        let mut docs = Vec::with_capacity(dn);
        for _ in 0..dn {
            let (ln, line) = next("document row")?;
            let parts: Vec<&str> = line.split('\t').collect();
            if parts.len() != 3 {
                return Err(perr(ln, "expected unit, topic, tokens".into()));
            }
            let unit: usize = num(ln, parts.first())?;
            let topic: usize = num(ln, parts.get(1))?;
            if unit >= u || topic >= topics {
                return Err(perr(ln, "unit or topic out of range".into()));
            }
            let mut tokens = Vec::new();
            let mut background = Vec::new();
            for item in parts[2].split(' ').filter(|s| !s.is_empty()) {
                let (w, kind) = item.split_once(':').ok_or_else(|| perr(ln, format!("bad token {item:?}")))?;
                let w: usize = num(ln, Some(&w))?;
                if w >= v {
                    return Err(perr(ln, format!("word id {w} out of range")));
                }
                tokens.push(w);
                background.push(match kind {
                    "b" => true,
                    "t" => false,
                    _ => return Err(perr(ln, format!("bad indicator {kind:?}"))),
                });
            }
            docs.push(DocAssignment {
                unit,
                tokens,
                topic,
                background,
            });
        }
        let (ln, end) = next("end")?;
        if end != "end" {
            return Err(perr(ln, "expected end".into()));
        }
        let topic_total = (0..topics)
            .map(|z| (0..v).map(|w| topic_word[w * topics + z]).sum())
            .collect();
        let background_total = background_word.iter().sum();
        let counts = CountTables {
            topic_word,
            topic_total,
            background_word,
            background_total,
            unit_topic,
            n_topic,
            n_background,
        };
        let model = LdaModel {
            hyper,
            index: index_of(&vocab),
            vocab,
            units,
            counts,
            docs,
        };
        if !model.counts_consistent() {
            return Err(perr(0, "count tables do not match the stored assignments".into()));
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<(), LdaError> {
        fs::write(path, self.to_text()).map_err(|source| LdaError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, LdaError> {
        let text = fs::read_to_string(path).map_err(|source| LdaError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_text(&text)
    }

    /// Builds a model directly from count tables, with no assignments.
    /// Intended for hand-built fixtures.
    pub fn from_counts(hyper: LdaHyperparams, vocab: Vec<String>, topic_word: Vec<u64>) -> Result<Self, LdaError> {
        hyper.validate()?;
        let t_count = hyper.topics;
        if topic_word.len() != vocab.len() * t_count {
            return Err(LdaError::InvalidHyperparams(format!(
                "count table has {} cells for {} words x {t_count} topics",
                topic_word.len(),
                vocab.len()
            )));
        }
        let topic_total = (0..t_count)
            .map(|z| (0..vocab.len()).map(|w| topic_word[w * t_count + z]).sum())
            .collect();
        let n_topic = topic_word.iter().sum();
        let v = vocab.len();
        Ok(Self {
            hyper,
            index: index_of(&vocab),
            vocab,
            units: vec![GLOBAL_UNIT.to_owned()],
            counts: CountTables {
                topic_word,
                topic_total,
                background_word: vec![0; v],
                background_total: 0,
                unit_topic: vec![0; t_count],
                n_topic,
                n_background: 0,
            },
            docs: Vec::new(),
        })
    }
}

pub fn embedding_from_counts(counts: &[u64]) -> Option<Vec<f64>> {
    let total: u64 = counts.iter().sum();
    (total > 0).then(|| counts.iter().map(|&c| c as f64 / total as f64).collect())
}
