use std::cmp::Ordering;

use super::model::{step, step_log_probs, Conditioning};
use super::{contract, ModelParams, Seq2SeqError, TopicContext};
use crate::corpus::{BOS, EOS, PAD};
use crate::numeric::Graph;

#[derive(Clone, Debug, PartialEq)]
pub struct DecoderState {
    pub s: Vec<f64>,
    pub step: usize,
}

/// A partial or finished decoded sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct Hypothesis {
    /// Emitted ids, including the final EOS when `finished`.
    pub tokens: Vec<usize>,
    pub log_prob: f64,
    pub state: DecoderState,
    pub finished: bool,
}

impl Hypothesis {
    /// Tokens without the trailing EOS.
    pub fn response(&self) -> &[usize] {
        match self.tokens.split_last() {
            Some((&EOS, rest)) if self.finished => rest,
            _ => &self.tokens,
        }
    }

    fn score(&self, length_norm: bool) -> f64 {
        if length_norm && !self.tokens.is_empty() {
            self.log_prob / self.tokens.len() as f64
        } else {
            self.log_prob
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BeamConfig {
    pub width: usize,
    pub max_len: usize,
    pub length_norm: bool,
    /// Ids never emitted. Defaults to BOS and PAD.
    pub banned: Vec<usize>,
}

impl BeamConfig {
    pub fn new(width: usize, max_len: usize) -> Self {
        Self {
            width,
            max_len,
            length_norm: false,
            banned: vec![BOS, PAD],
        }
    }
}

/// Best-first order: higher score, then fewer tokens, then smaller ids.
fn rank(a: &Hypothesis, b: &Hypothesis, length_norm: bool) -> Ordering {
    b.score(length_norm)
        .total_cmp(&a.score(length_norm))
        .then_with(|| a.tokens.len().cmp(&b.tokens.len()))
        .then_with(|| a.tokens.cmp(&b.tokens))
}

/// Decoding session: a graph holding the message conditioning, extended one
/// step at a time from plain state vectors.
struct Session<'a> {
    m: &'a ModelParams,
    g: Graph<'a>,
    cond: Conditioning,
}

impl<'a> Session<'a> {
    fn new(m: &'a ModelParams, message: &[usize], topics: &TopicContext) -> Result<Self, Seq2SeqError> {
        let mut g = Graph::new(&m.store);
        let cond = Conditioning::build(&mut g, m, message, topics)?;
        Ok(Self { m, g, cond })
    }

    fn initial_state(&self) -> DecoderState {
        DecoderState {
            s: self.g.value(self.cond.initial_state).to_vec(),
            step: 0,
        }
    }

    /// Feeds `y_prev` with state `s_prev`; returns `s_i` and `log p(·)` over U.
    fn advance(&mut self, y_prev: usize, s_prev: &DecoderState) -> Result<(DecoderState, Vec<f64>), Seq2SeqError> {
        let s = self.g.input(s_prev.s.clone())?;
        let out = step(&mut self.g, self.m, &self.cond, y_prev, s)?;
        let lp = step_log_probs(&self.g, &out, &self.cond.topics);
        let state = DecoderState {
            s: self.g.value(out.state).to_vec(),
            step: s_prev.step + 1,
        };
        Ok((state, lp))
    }
}

/// Argmax token per step until EOS or `max_len` tokens. Returns the response
/// without EOS. Ties go to the lowest id.
pub fn greedy_decode(
    m: &ModelParams,
    message: &[usize],
    topics: &TopicContext,
    max_len: usize,
) -> Result<Vec<usize>, Seq2SeqError> {
    let banned = BeamConfig::new(1, max_len).banned;
    let mut session = Session::new(m, message, topics)?;
    let mut state = session.initial_state();
    let mut prev = BOS;
    let mut out = Vec::new();
    for _ in 0..max_len {
        let (next, lp) = session.advance(prev, &state)?;
        let mut best = None::<(usize, f64)>;
        for (w, &l) in lp.iter().enumerate() {
            if banned.contains(&w) {
                continue;
            }
            if best.is_none_or(|(_, b)| l > b) {
                best = Some((w, l));
            }
        }
        let (w, _) = best.expect("output vocabulary has allowed tokens");
        if w == EOS {
            break;
        }
        out.push(w);
        prev = w;
        state = next;
    }
    Ok(out)
}

/// Beam search over the combined distribution. Hypotheses that emit EOS are
/// retired to the result pool; hypotheses still open after `max_len` steps
/// join the pool unfinished. Results are sorted best first.
pub fn beam_search(
    m: &ModelParams,
    message: &[usize],
    topics: &TopicContext,
    cfg: &BeamConfig,
) -> Result<Vec<Hypothesis>, Seq2SeqError> {
    if cfg.width == 0 || cfg.max_len == 0 {
        return contract("beam width and max length must be at least 1");
    }
    let mut session = Session::new(m, message, topics)?;
    let mut live = vec![Hypothesis {
        tokens: Vec::new(),
        log_prob: 0.0,
        state: session.initial_state(),
        finished: false,
    }];
    let mut pool = Vec::new();
    for _ in 0..cfg.max_len {
        let mut candidates = Vec::new();
        for h in &live {
            let prev = h.tokens.last().copied().unwrap_or(BOS);
            let (next, lp) = session.advance(prev, &h.state)?;
            for (w, &l) in lp.iter().enumerate() {
                if cfg.banned.contains(&w) {
                    continue;
                }
                let mut tokens = h.tokens.clone();
                tokens.push(w);
                candidates.push(Hypothesis {
                    tokens,
                    log_prob: h.log_prob + l,
                    state: next.clone(),
                    finished: w == EOS,
                });
            }
        }
        candidates.sort_by(|a, b| rank(a, b, cfg.length_norm));
        candidates.truncate(cfg.width);
        live.clear();
        for c in candidates {
            if c.finished {
                pool.push(c);
            } else {
                live.push(c);
            }
        }
        if live.is_empty() {
            break;
        }
    }
    pool.extend(live);
    pool.sort_by(|a, b| rank(a, b, cfg.length_norm));
    Ok(pool)
}
