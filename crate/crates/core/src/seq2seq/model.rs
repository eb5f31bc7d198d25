//! Forward pass on a [`Graph`].
//!
//! Decoder step `i` takes the previous token `y_{i-1}` and state `s_{i-1}`:
//!
//! ```text
//! c_i = Σ_j softmax_j(η(s_{i-1}, h_j)) h_j
//! o_i = Σ_j softmax_j(η_o(s_{i-1}, k_j, h_T)) k_j
//! s_i = GRU([emb(y_{i-1}); c_i; o_i], s_{i-1})
//! Ψ_V = tanh(W_V^s s_i + W_V^y emb(y_{i-1}) + b_V)             over U
//! Ψ_K = tanh(W_K^s s_i + W_K^y emb(y_{i-1}) + W_K^c c_i + b_K) over K
//! p(w) = (e^{Ψ_V(w)} + [w ∈ K] e^{Ψ_K(w)}) / Z
//! ```
//!
//! `Z` sums `e^{Ψ_V}` over all of `U` and `e^{Ψ_K}` over `K`, so the
//! distribution is normalized even when topic words lie outside the response
//! vocabulary. The ablation variants drop `o_i` and/or the `Ψ_K` term and use
//! an ordinary softmax over unsquashed logits.

use super::params::{GruIds, OutputIds, ScorerIds};
use super::{contract, ModelConfig, ModelParams, ScoreActivation, Seq2SeqError, TopicContext, Variant};
use crate::corpus::{BOS, EOS};
use crate::numeric::{log_sum_exp, Gradients, Graph, Var};

type Result<T> = std::result::Result<T, Seq2SeqError>;

#[derive(Clone, Debug)]
pub struct EncoderOutput {
    /// `h_j = [forward_j; backward_j]`, dimension `2·hidden`.
    pub states: Vec<Var>,
    /// `[forward_T; backward_1]`.
    pub summary: Var,
}

fn gru_step(g: &mut Graph<'_>, w: &GruIds, x: Var, h: Var) -> Result<Var> {
    let wz = g.matvec(w.wz, x)?;
    let uz = g.matvec(w.uz, h)?;
    let z_pre = g.add(wz, uz)?;
    let z = g.sigmoid(z_pre)?;
    let wr = g.matvec(w.wr, x)?;
    let ur = g.matvec(w.ur, h)?;
    let r_pre = g.add(wr, ur)?;
    let r = g.sigmoid(r_pre)?;
    let hr = g.mul(h, r)?;
    let ws = g.matvec(w.ws, x)?;
    let us = g.matvec(w.us, hr)?;
    let s_pre = g.add(ws, us)?;
    let s = g.tanh(s_pre)?;
    let keep = g.one_minus(z)?;
    let fresh = g.mul(keep, s)?;
    let carried = g.mul(z, h)?;
    Ok(g.add(fresh, carried)?)
}

/// Bidirectional GRU over the message.
pub fn encode(g: &mut Graph<'_>, m: &ModelParams, message: &[usize]) -> Result<EncoderOutput> {
    if message.is_empty() {
        return contract("cannot encode an empty message");
    }
    if let Some(&bad) = message.iter().find(|&&t| t >= m.config.message_vocab) {
        return contract(format!("message id {bad} outside the message vocabulary"));
    }
    let ids = &m.ids;
    let embedded = message
        .iter()
        .map(|&t| g.row(ids.emb_message, t))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let zero = g.input(vec![0.0; m.config.hidden])?;
    let mut forward = Vec::with_capacity(message.len());
    let mut h = zero;
    for &x in &embedded {
        h = gru_step(g, &ids.enc_fwd, x, h)?;
        forward.push(h);
    }
    let mut backward = vec![zero; message.len()];
    let mut h = zero;
    for (j, &x) in embedded.iter().enumerate().rev() {
        h = gru_step(g, &ids.enc_bwd, x, h)?;
        backward[j] = h;
    }
    let states = forward
        .iter()
        .zip(&backward)
        .map(|(&f, &b)| g.concat(&[f, b]))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let summary = g.concat(&[*forward.last().expect("non-empty"), backward[0]])?;
    Ok(EncoderOutput { states, summary })
}

/// Per-item part of an attention scorer: `Σ_k W_k x_k + b`.
fn scorer_key(g: &mut Graph<'_>, s: &ScorerIds, skip: usize, inputs: &[Var]) -> Result<Var> {
    let mut acc = g.param(s.bias)?;
    for (&w, &x) in s.inputs[skip..].iter().zip(inputs) {
        let t = g.matvec(w, x)?;
        acc = g.add(acc, t)?;
    }
    Ok(acc)
}

/// `softmax_j(v · tanh(W_s s_prev + key_j))` and the weighted sum of `items`.
pub(super) fn attend(g: &mut Graph<'_>, s: &ScorerIds, s_prev: Var, keys: &[Var], items: &[Var]) -> Result<(Var, Vec<f64>)> {
    let query = g.matvec(s.inputs[0], s_prev)?;
    let v = g.param(s.v)?;
    let mut scores = Vec::with_capacity(keys.len());
    for &k in keys {
        let pre = g.add(query, k)?;
        let act = g.tanh(pre)?;
        scores.push(g.dot(v, act)?);
    }
    let stacked = g.concat(&scores)?;
    let weights = g.softmax(stacked)?;
    let out = g.weighted_sum(weights, items)?;
    Ok((out, g.value(weights).to_vec()))
}

#[derive(Clone, Debug)]
enum TopicMemory {
    None,
    Attention { embeddings: Vec<Var>, keys: Vec<Var> },
    Concat(Var),
}

/// Everything the decoder reads that is fixed for one message: encoder
/// states, precomputed attention keys, topic memory and `s_{-1}`.
#[derive(Clone, Debug)]
pub struct Conditioning {
    pub encoder: EncoderOutput,
    pub topics: TopicContext,
    pub initial_state: Var,
    message_keys: Vec<Var>,
    topic: TopicMemory,
}

impl Conditioning {
    pub fn build(g: &mut Graph<'_>, m: &ModelParams, message: &[usize], topics: &TopicContext) -> Result<Self> {
        let cfg = &m.config;
        topics.validate(cfg)?;
        let encoder = encode(g, m, message)?;
        let ids = &m.ids;
        let message_keys = encoder
            .states
            .iter()
            .map(|&h| scorer_key(g, &ids.attention, 1, &[h]))
            .collect::<Result<Vec<_>>>()?;
        let topic = match cfg.variant {
            Variant::S2sa => TopicMemory::None,
            Variant::TopicAttention | Variant::TaSeq2Seq => {
                let scorer = ids.topic_attention.as_ref().expect("topic attention params");
                let mut embeddings = Vec::with_capacity(topics.len());
                let mut keys = Vec::with_capacity(topics.len());
                for e in &topics.embeddings {
                    let k = g.input(e.clone())?;
                    keys.push(scorer_key(g, scorer, 1, &[k, encoder.summary])?);
                    embeddings.push(k);
                }
                TopicMemory::Attention { embeddings, keys }
            }
            Variant::TopicConcat => {
                let (w, b) = ids.topic_concat.expect("topic concat params");
                let mut flat = Vec::with_capacity(cfg.topic_capacity * cfg.topic_dim);
                for e in &topics.embeddings {
                    flat.extend_from_slice(e);
                }
                flat.resize(cfg.topic_capacity * cfg.topic_dim, 0.0);
                let x = g.input(flat)?;
                let wx = g.matvec(w, x)?;
                let bias = g.param(b)?;
                let pre = g.add(wx, bias)?;
                TopicMemory::Concat(g.tanh(pre)?)
            }
        };
        let proj = g.matvec(ids.init_w, encoder.summary)?;
        let bias = g.param(ids.init_b)?;
        let pre = g.add(proj, bias)?;
        let initial_state = g.tanh(pre)?;
        Ok(Self {
            encoder,
            topics: topics.clone(),
            initial_state,
            message_keys,
            topic,
        })
    }
}

/// Context vector `c_i` and the message attention weights.
pub fn message_attention(g: &mut Graph<'_>, m: &ModelParams, s_prev: Var, cond: &Conditioning) -> Result<(Var, Vec<f64>)> {
    attend(g, &m.ids.attention, s_prev, &cond.message_keys, &cond.encoder.states)
}

/// Topic vector `o_i` and weights for variants with topic attention; the
/// static topic vector (no weights) for TopicConcat; `None` for S2SA.
pub fn topic_attention(
    g: &mut Graph<'_>,
    m: &ModelParams,
    s_prev: Var,
    cond: &Conditioning,
) -> Result<Option<(Var, Option<Vec<f64>>)>> {
    match &cond.topic {
        TopicMemory::None => Ok(None),
        TopicMemory::Concat(v) => Ok(Some((*v, None))),
        TopicMemory::Attention { embeddings, keys } => {
            let scorer = m.ids.topic_attention.as_ref().expect("topic attention params");
            let (o, w) = attend(g, scorer, s_prev, keys, embeddings)?;
            Ok(Some((o, Some(w))))
        }
    }
}

fn output_scores(
    g: &mut Graph<'_>,
    o: &OutputIds,
    rows: Option<&[usize]>,
    state: Var,
    prev: Var,
    context: Var,
) -> Result<Var> {
    let mut terms = Vec::with_capacity(4);
    match rows {
        None => {
            terms.push(g.matvec(o.state, state)?);
            terms.push(g.matvec(o.prev, prev)?);
            if let Some(c) = o.context {
                terms.push(g.matvec(c, context)?);
            }
            terms.push(g.param(o.bias)?);
        }
        Some(r) => {
            terms.push(g.matvec_rows(o.state, r, state)?);
            terms.push(g.matvec_rows(o.prev, r, prev)?);
            if let Some(c) = o.context {
                terms.push(g.matvec_rows(c, r, context)?);
            }
            let b = g.param(o.bias)?;
            terms.push(g.gather(b, r)?);
        }
    }
    let mut acc = terms[0];
    for &t in &terms[1..] {
        acc = g.add(acc, t)?;
    }
    Ok(acc)
}

/// State update and output scores for one step given `c_i` and `o_i`.
/// Returns `(s_i, Ψ_V over U, Ψ_K over K if the variant has the bias term)`.
pub fn decode_step(
    g: &mut Graph<'_>,
    m: &ModelParams,
    y_prev: usize,
    s_prev: Var,
    context: Var,
    topic_vector: Option<Var>,
    topics: &TopicContext,
) -> Result<(Var, Var, Option<Var>)> {
    let cfg = &m.config;
    if y_prev >= cfg.output_vocab {
        return contract(format!("previous token {y_prev} outside the output vocabulary"));
    }
    let ids = &m.ids;
    let prev = g.row(ids.emb_response, y_prev)?;
    let input = match (cfg.variant, topic_vector) {
        (Variant::S2sa, _) => g.concat(&[prev, context])?,
        (_, Some(o)) => g.concat(&[prev, context, o])?,
        (v, None) => return contract(format!("variant {v} needs a topic vector")),
    };
    let state = gru_step(g, &ids.dec, input, s_prev)?;
    let squash = cfg.variant == Variant::TaSeq2Seq && cfg.score_activation == ScoreActivation::Tanh;
    let mut vocab = output_scores(g, &ids.out_vocab, None, state, prev, context)?;
    if squash {
        vocab = g.tanh(vocab)?;
    }
    let topic = match &ids.out_topic {
        Some(o) => {
            let mut k = output_scores(g, o, Some(&topics.words), state, prev, context)?;
            if squash {
                k = g.tanh(k)?;
            }
            Some(k)
        }
        None => None,
    };
    Ok((state, vocab, topic))
}

#[derive(Clone, Debug)]
pub struct StepOutput {
    pub state: Var,
    pub context: Var,
    pub topic_vector: Option<Var>,
    pub attention: Vec<f64>,
    pub topic_attention: Option<Vec<f64>>,
    pub vocab_scores: Var,
    pub topic_scores: Option<Var>,
}

/// Attention, state update and scores for one decoder step.
pub fn step(g: &mut Graph<'_>, m: &ModelParams, cond: &Conditioning, y_prev: usize, s_prev: Var) -> Result<StepOutput> {
    let (context, attention) = message_attention(g, m, s_prev, cond)?;
    let (topic_vector, topic_weights) = match topic_attention(g, m, s_prev, cond)? {
        Some((o, w)) => (Some(o), w),
        None => (None, None),
    };
    let (state, vocab_scores, topic_scores) = decode_step(g, m, y_prev, s_prev, context, topic_vector, &cond.topics)?;
    Ok(StepOutput {
        state,
        context,
        topic_vector,
        attention,
        topic_attention: topic_weights,
        vocab_scores,
        topic_scores,
    })
}

/// `log p(gold)` under the step's combined distribution, on the graph.
pub fn step_log_prob(g: &mut Graph<'_>, out: &StepOutput, topics: &TopicContext, gold: usize) -> Result<Var> {
    let u = g.len(out.vocab_scores);
    if gold >= u {
        return contract(format!("token {gold} outside the output vocabulary of {u}"));
    }
    let (all, idx) = match out.topic_scores {
        Some(k) => {
            let mut idx = vec![gold];
            idx.extend(topics.words.iter().enumerate().filter(|(_, &w)| w == gold).map(|(j, _)| u + j));
            (g.concat(&[out.vocab_scores, k])?, idx)
        }
        None => (out.vocab_scores, vec![gold]),
    };
    let total = g.log_sum_exp(all)?;
    let picked = g.gather(all, &idx)?;
    let num = g.log_sum_exp(picked)?;
    Ok(g.sub(num, total)?)
}

/// The per-step distribution over `U`, read off the graph values.
#[derive(Clone, Debug, PartialEq)]
pub struct GenerationDistribution {
    pub p_vocab: Vec<f64>,
    /// Zero outside `K`.
    pub p_topic: Vec<f64>,
    pub log_z: f64,
    pub p: Vec<f64>,
}

impl GenerationDistribution {
    pub fn from_step(g: &Graph<'_>, out: &StepOutput, topics: &TopicContext) -> Self {
        let v = g.value(out.vocab_scores);
        let k = out.topic_scores.map(|k| g.value(k)).unwrap_or(&[]);
        let log_z = log_sum_exp(&v.iter().chain(k).copied().collect::<Vec<_>>());
        let p_vocab: Vec<f64> = v.iter().map(|s| (s - log_z).exp()).collect();
        let mut p_topic = vec![0.0; v.len()];
        for (&w, s) in topics.words.iter().zip(k) {
            p_topic[w] += (s - log_z).exp();
        }
        let p = p_vocab.iter().zip(&p_topic).map(|(a, b)| a + b).collect();
        Self {
            p_vocab,
            p_topic,
            log_z,
            p,
        }
    }

    /// The normalizer `Z`; may overflow to infinity for unsquashed logits.
    pub fn z(&self) -> f64 {
        self.log_z.exp()
    }

    pub fn log_p(&self, w: usize) -> f64 {
        self.p[w].ln()
    }
}

/// Log-probabilities over `U`, computed stably from the step's scores.
pub fn step_log_probs(g: &Graph<'_>, out: &StepOutput, topics: &TopicContext) -> Vec<f64> {
    let v = g.value(out.vocab_scores);
    let k = out.topic_scores.map(|k| g.value(k)).unwrap_or(&[]);
    let log_z = log_sum_exp(&v.iter().chain(k).copied().collect::<Vec<_>>());
    let mut lp: Vec<f64> = v.iter().map(|s| s - log_z).collect();
    for (&w, s) in topics.words.iter().zip(k) {
        lp[w] = log_sum_exp(&[lp[w], s - log_z]);
    }
    lp
}

fn check_response(cfg: &ModelConfig, response: &[usize]) -> Result<()> {
    if response.last() != Some(&EOS) {
        return contract("response must end with EOS");
    }
    if let Some(&bad) = response.iter().find(|&&t| t >= cfg.output_vocab) {
        return contract(format!("response id {bad} outside the output vocabulary"));
    }
    Ok(())
}

/// Teacher-forced `-Σ_i log p(y_i)` as a graph node.
pub fn sequence_nll_graph(
    g: &mut Graph<'_>,
    m: &ModelParams,
    message: &[usize],
    response: &[usize],
    topics: &TopicContext,
) -> Result<Var> {
    check_response(&m.config, response)?;
    let cond = Conditioning::build(g, m, message, topics)?;
    let mut s = cond.initial_state;
    let mut prev = BOS;
    let mut terms = Vec::with_capacity(response.len());
    for &y in response {
        let out = step(g, m, &cond, prev, s)?;
        terms.push(step_log_prob(g, &out, topics, y)?);
        s = out.state;
        prev = y;
    }
    let stacked = g.concat(&terms)?;
    let total = g.sum(stacked)?;
    Ok(g.scale(total, -1.0)?)
}

pub fn sequence_nll(m: &ModelParams, message: &[usize], response: &[usize], topics: &TopicContext) -> Result<f64> {
    let mut g = Graph::new(&m.store);
    let loss = sequence_nll_graph(&mut g, m, message, response, topics)?;
    Ok(g.scalar(loss))
}

pub fn sequence_nll_with_grads(
    m: &ModelParams,
    message: &[usize],
    response: &[usize],
    topics: &TopicContext,
) -> Result<(f64, Gradients)> {
    let mut g = Graph::new(&m.store);
    let loss = sequence_nll_graph(&mut g, m, message, response, topics)?;
    let grads = g.backward(loss)?;
    Ok((g.scalar(loss), grads))
}
