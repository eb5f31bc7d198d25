//! Self-describing binary checkpoint.
//!
//! ```text
//! magic "TASEQCKP" | version u32 | payload length u64 | payload | SHA-256(payload)
//! ```
//!
//! All integers are little-endian; floats are stored as their IEEE-754 bit
//! patterns, so `load(save(x))` reproduces every value bitwise and a second
//! save yields identical bytes.

use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::Vocabulary;
use crate::eval::Perplexity;
use crate::lda::LdaModel;
use crate::numeric::{AdaDelta, AdaDeltaConfig, AdaDeltaState, ParamStore, Tensor};
use crate::seq2seq::{ModelConfig, ModelParams, ScoreActivation, Variant};
use crate::training::{StopRule, TrainState, ValidationRecord};

pub const MAGIC: &[u8; 8] = b"TASEQCKP";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint (bad magic)")]
    Magic,
    #[error("unsupported checkpoint version {0} (expected {VERSION})")]
    Version(u32),
    #[error("checkpoint digest mismatch: file is corrupt")]
    Digest,
    #[error("truncated or malformed checkpoint: {0}")]
    Malformed(String),
    #[error("checkpoint i/o on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

type Result<T> = std::result::Result<T, CheckpointError>;

fn malformed<T>(m: impl Into<String>) -> Result<T> {
    Err(CheckpointError::Malformed(m.into()))
}

/// Topic-word source stored with the model so generation can assign topics.
#[derive(Clone, Debug, PartialEq)]
pub struct TopicSource {
    pub lda: LdaModel,
    pub topic_words: usize,
    pub stoplist_size: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: ModelParams,
    pub message_vocab: Vocabulary,
    pub output_vocab: Vocabulary,
    pub topics: Option<TopicSource>,
    pub train_state: Option<TrainState>,
    /// The run configuration text that produced this checkpoint.
    pub run_config: String,
}

// ---------------------------------------------------------------------------
// Encoding primitives

#[derive(Default)]
struct Writer(Vec<u8>);

impl Writer {
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn usize(&mut self, v: usize) {
        self.u64(v as u64);
    }
    fn f64(&mut self, v: f64) {
        self.u64(v.to_bits());
    }
    fn bool(&mut self, v: bool) {
        self.0.push(u8::from(v));
    }
    fn str(&mut self, s: &str) {
        self.usize(s.len());
        self.0.extend_from_slice(s.as_bytes());
    }
    fn f64s(&mut self, v: &[f64]) {
        self.usize(v.len());
        v.iter().for_each(|&x| self.f64(x));
    }
    fn strs(&mut self, v: &[String]) {
        self.usize(v.len());
        v.iter().for_each(|s| self.str(s));
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return malformed(format!("need {n} bytes at offset {}", self.pos));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn usize(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).or_else(|_| malformed("size overflow"))
    }
    /// A length that must fit in the remaining bytes at `unit` bytes each.
    fn len(&mut self, unit: usize) -> Result<usize> {
        let n = self.usize()?;
        if n.saturating_mul(unit) > self.buf.len() - self.pos {
            return malformed(format!("length {n} exceeds remaining payload"));
        }
        Ok(n)
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_bits(self.u64()?))
    }
    fn bool(&mut self) -> Result<bool> {
        match self.take(1)?[0] {
            0 => Ok(false),
            1 => Ok(true),
            b => malformed(format!("bad bool byte {b}")),
        }
    }
    fn str(&mut self) -> Result<String> {
        let n = self.len(1)?;
        String::from_utf8(self.take(n)?.to_vec()).or_else(|_| malformed("invalid UTF-8"))
    }
    fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.len(8)?;
        (0..n).map(|_| self.f64()).collect()
    }
    fn strs(&mut self) -> Result<Vec<String>> {
        let n = self.len(8)?;
        (0..n).map(|_| self.str()).collect()
    }
}

// ---------------------------------------------------------------------------
// Sections

fn write_model_config(w: &mut Writer, c: &ModelConfig) {
    for v in [
        c.hidden,
        c.embed,
        c.attn_hidden,
        c.message_vocab,
        c.output_vocab,
        c.topic_dim,
        c.topic_capacity,
    ] {
        w.usize(v);
    }
    w.str(c.variant.name());
    w.str(&c.score_activation.to_string());
}

fn read_model_config(r: &mut Reader<'_>) -> Result<ModelConfig> {
    let mut v = [0usize; 7];
    for x in &mut v {
        *x = r.usize()?;
    }
    let variant: Variant = r.str()?.parse().map_err(CheckpointError::Malformed)?;
    let score_activation: ScoreActivation = r.str()?.parse().map_err(CheckpointError::Malformed)?;
    Ok(ModelConfig {
        hidden: v[0],
        embed: v[1],
        attn_hidden: v[2],
        message_vocab: v[3],
        output_vocab: v[4],
        topic_dim: v[5],
        topic_capacity: v[6],
        variant,
        score_activation,
    })
}

fn write_params(w: &mut Writer, store: &ParamStore) {
    w.usize(store.len());
    for (_, p) in store.iter() {
        w.str(&p.name);
        w.usize(p.value.shape().len());
        p.value.shape().iter().for_each(|&d| w.usize(d));
        w.f64s(p.value.data());
    }
}

fn read_params(r: &mut Reader<'_>) -> Result<ParamStore> {
    let n = r.len(8)?;
    let mut store = ParamStore::new();
    for _ in 0..n {
        let name = r.str()?;
        let rank = r.len(8)?;
        let shape = (0..rank).map(|_| r.usize()).collect::<Result<Vec<_>>>()?;
        let data = r.f64s()?;
        let t = Tensor::new(shape, data).map_err(|e| CheckpointError::Malformed(format!("{name}: {e}")))?;
        store
            .add(name, t)
            .map_err(|e| CheckpointError::Malformed(e.to_string()))?;
    }
    Ok(store)
}

fn write_state(w: &mut Writer, s: &TrainState) {
    w.usize(s.epoch);
    w.usize(s.batch_in_epoch);
    w.usize(s.step);
    w.f64(s.learning_rate);
    w.f64(s.optimizer.config.rho);
    w.f64(s.optimizer.config.epsilon);
    w.usize(s.optimizer.states.len());
    for st in &s.optimizer.states {
        w.f64s(&st.sq_grad);
        w.f64s(&st.sq_update);
    }
    w.usize(s.history.len());
    for h in &s.history {
        w.usize(h.epoch);
        w.usize(h.step);
        w.f64(h.learning_rate);
        w.f64(h.train_loss);
        w.f64(h.ppl.per_response);
        w.f64(h.ppl.per_token);
        w.bool(h.best);
    }
    w.usize(s.stop.window);
    w.f64(s.stop.threshold);
    w.usize(s.stop.small_improvements);
    w.bool(s.halted);
    w.bool(s.best.is_some());
    w.usize(s.best.unwrap_or(0));
    w.f64s(&s.loss_trace);
    w.f64(s.pending_loss);
    w.usize(s.pending_examples);
}

fn read_state(r: &mut Reader<'_>) -> Result<TrainState> {
    let epoch = r.usize()?;
    let batch_in_epoch = r.usize()?;
    let step = r.usize()?;
    let learning_rate = r.f64()?;
    let config = AdaDeltaConfig {
        rho: r.f64()?,
        epsilon: r.f64()?,
    };
    let n = r.len(16)?;
    let states = (0..n)
        .map(|_| {
            Ok(AdaDeltaState {
                sq_grad: r.f64s()?,
                sq_update: r.f64s()?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let n = r.len(49)?;
    let history = (0..n)
        .map(|_| {
            Ok(ValidationRecord {
                epoch: r.usize()?,
                step: r.usize()?,
                learning_rate: r.f64()?,
                train_loss: r.f64()?,
                ppl: Perplexity {
                    per_response: r.f64()?,
                    per_token: r.f64()?,
                },
                best: r.bool()?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let stop = StopRule {
        window: r.usize()?,
        threshold: r.f64()?,
        small_improvements: r.usize()?,
    };
    let halted = r.bool()?;
    let has_best = r.bool()?;
    let best_idx = r.usize()?;
    let best = has_best.then_some(best_idx);
    if best.is_some_and(|b| b >= history.len()) {
        return malformed("best index outside the validation history");
    }
    Ok(TrainState {
        epoch,
        batch_in_epoch,
        step,
        learning_rate,
        optimizer: AdaDelta { config, states },
        history,
        stop,
        halted,
        best,
        loss_trace: r.f64s()?,
        pending_loss: r.f64()?,
        pending_examples: r.usize()?,
    })
}

impl Checkpoint {
    fn payload(&self) -> Vec<u8> {
        let mut w = Writer::default();
        write_model_config(&mut w, &self.model.config);
        w.strs(self.message_vocab.tokens());
        w.strs(self.output_vocab.tokens());
        match &self.topics {
            Some(t) => {
                w.bool(true);
                w.usize(t.topic_words);
                w.usize(t.stoplist_size);
                w.str(&t.lda.to_text());
            }
            None => w.bool(false),
        }
        write_params(&mut w, &self.model.store);
        match &self.train_state {
            Some(s) => {
                w.bool(true);
                write_state(&mut w, s);
            }
            None => w.bool(false),
        }
        w.str(&self.run_config);
        w.0
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let payload = self.payload();
        let mut out = Vec::with_capacity(payload.len() + 52);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
        out.extend_from_slice(&payload);
        out.extend_from_slice(&Sha256::digest(&payload));
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(CheckpointError::Magic);
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(CheckpointError::Version(version));
        }
        let len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes"));
        let len = usize::try_from(len).or_else(|_| malformed("payload length overflow"))?;
        if bytes.len() != 20 + len + 32 {
            return malformed(format!("expected {} bytes, found {}", 20 + len + 32, bytes.len()));
        }
        let payload = &bytes[20..20 + len];
        if Sha256::digest(payload).as_slice() != &bytes[20 + len..] {
            return Err(CheckpointError::Digest);
        }
        let mut r = Reader { buf: payload, pos: 0 };
        let config = read_model_config(&mut r)?;
        let message_vocab = Vocabulary::with_tokens(r.strs()?);
        let output_vocab = Vocabulary::with_tokens(r.strs()?);
        let topics = if r.bool()? {
            let topic_words = r.usize()?;
            let stoplist_size = r.usize()?;
            let lda = LdaModel::from_text(&r.str()?).map_err(|e| CheckpointError::Malformed(e.to_string()))?;
            Some(TopicSource {
                lda,
                topic_words,
                stoplist_size,
            })
        } else {
            None
        };
        let store = read_params(&mut r)?;
        let model = ModelParams::from_store(config, store).map_err(|e| CheckpointError::Malformed(e.to_string()))?;
        let train_state = if r.bool()? { Some(read_state(&mut r)?) } else { None };
        let run_config = r.str()?;
        if r.pos != payload.len() {
            return malformed("trailing bytes in payload");
        }
        if message_vocab.len() != model.config.message_vocab || output_vocab.len() != model.config.output_vocab {
            return malformed("vocabulary sizes disagree with the model configuration");
        }
        Ok(Self {
            model,
            message_vocab,
            output_vocab,
            topics,
            train_state,
            run_config,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_bytes(&bytes)
    }

    /// Human-readable dump of every tensor, for debugging.
    pub fn export_text(&self) -> String {
        let mut s = String::new();
        let c = &self.model.config;
        let _ = writeln!(s, "# variant {} hidden {} embed {}", c.variant, c.hidden, c.embed);
        for (_, p) in self.model.store.iter() {
            let _ = writeln!(s, "{} {:?}", p.name, p.value.shape());
            let vals: Vec<String> = p.value.data().iter().map(|v| format!("{v:e}")).collect();
            let _ = writeln!(s, "{}", vals.join(" "));
        }
        s
    }
}
