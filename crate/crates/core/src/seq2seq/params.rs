use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{contract, ModelConfig, Seq2SeqError, Variant};
use crate::numeric::{init_gaussian_with, ParamId, ParamStore, Tensor};

/// Weights of one GRU cell (no biases).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GruIds {
    pub wz: ParamId,
    pub uz: ParamId,
    pub wr: ParamId,
    pub ur: ParamId,
    pub ws: ParamId,
    pub us: ParamId,
}

/// One-hidden-layer tanh scorer: `v · tanh(Σ W_k x_k + b)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ScorerIds {
    /// One matrix per input, in the order the inputs are passed.
    pub inputs: Vec<ParamId>,
    pub bias: ParamId,
    pub v: ParamId,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OutputIds {
    pub state: ParamId,
    pub prev: ParamId,
    pub context: Option<ParamId>,
    pub bias: ParamId,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamIds {
    pub emb_message: ParamId,
    pub emb_response: ParamId,
    pub enc_fwd: GruIds,
    pub enc_bwd: GruIds,
    pub init_w: ParamId,
    pub init_b: ParamId,
    /// Message attention over `(s_{i-1}, h_j)`.
    pub attention: ScorerIds,
    /// Topic attention over `(s_{i-1}, k_j, h_T)`.
    pub topic_attention: Option<ScorerIds>,
    /// TopicConcat projection.
    pub topic_concat: Option<(ParamId, ParamId)>,
    pub dec: GruIds,
    pub out_vocab: OutputIds,
    pub out_topic: Option<OutputIds>,
}

/// All trainable tensors of a model, plus its configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub ids: ParamIds,
}

/// Parameter names and shapes, in registration order.
fn layout(cfg: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let (h, e, a) = (cfg.hidden, cfg.embed, cfg.attn_hidden);
    let u = cfg.output_vocab;
    let mut v: Vec<(String, Vec<usize>)> = vec![
        ("emb.message".into(), vec![cfg.message_vocab, e]),
        ("emb.response".into(), vec![u, e]),
    ];
    let gru = |prefix: &str, input: usize| -> Vec<(String, Vec<usize>)> {
        ["z", "r", "s"]
            .iter()
            .flat_map(|g| {
                [
                    (format!("{prefix}.w{g}"), vec![h, input]),
                    (format!("{prefix}.u{g}"), vec![h, h]),
                ]
            })
            .collect()
    };
    v.extend(gru("enc.fwd", e));
    v.extend(gru("enc.bwd", e));
    v.push(("init.w".into(), vec![h, 2 * h]));
    v.push(("init.b".into(), vec![h]));
    v.push(("att.ws".into(), vec![a, h]));
    v.push(("att.wh".into(), vec![a, 2 * h]));
    v.push(("att.b".into(), vec![a]));
    v.push(("att.v".into(), vec![a]));
    if cfg.variant.has_topic_attention() {
        v.push(("tatt.ws".into(), vec![a, h]));
        v.push(("tatt.wk".into(), vec![a, cfg.topic_dim]));
        v.push(("tatt.wh".into(), vec![a, 2 * h]));
        v.push(("tatt.b".into(), vec![a]));
        v.push(("tatt.v".into(), vec![a]));
    }
    if cfg.variant == Variant::TopicConcat {
        v.push(("tconcat.w".into(), vec![2 * h, cfg.topic_capacity * cfg.topic_dim]));
        v.push(("tconcat.b".into(), vec![2 * h]));
    }
    v.extend(gru("dec", cfg.decoder_input_dim()));
    v.push(("out.v.s".into(), vec![u, h]));
    v.push(("out.v.y".into(), vec![u, e]));
    v.push(("out.v.b".into(), vec![u]));
    if cfg.variant.has_topic_bias() {
        v.push(("out.k.s".into(), vec![u, h]));
        v.push(("out.k.y".into(), vec![u, e]));
        v.push(("out.k.c".into(), vec![u, 2 * h]));
        v.push(("out.k.b".into(), vec![u]));
    }
    v
}

fn resolve(store: &ParamStore, cfg: &ModelConfig) -> Result<ParamIds, Seq2SeqError> {
    let id = |n: &str| {
        store
            .id(n)
            .ok_or_else(|| Seq2SeqError::Contract(format!("missing parameter {n}")))
    };
    let gru = |p: &str| -> Result<GruIds, Seq2SeqError> {
        Ok(GruIds {
            wz: id(&format!("{p}.wz"))?,
            uz: id(&format!("{p}.uz"))?,
            wr: id(&format!("{p}.wr"))?,
            ur: id(&format!("{p}.ur"))?,
            ws: id(&format!("{p}.ws"))?,
            us: id(&format!("{p}.us"))?,
        })
    };
    let topic_attention = if cfg.variant.has_topic_attention() {
        Some(ScorerIds {
            inputs: vec![id("tatt.ws")?, id("tatt.wk")?, id("tatt.wh")?],
            bias: id("tatt.b")?,
            v: id("tatt.v")?,
        })
    } else {
        None
    };
    let topic_concat = if cfg.variant == Variant::TopicConcat {
        Some((id("tconcat.w")?, id("tconcat.b")?))
    } else {
        None
    };
    let out_topic = if cfg.variant.has_topic_bias() {
        Some(OutputIds {
            state: id("out.k.s")?,
            prev: id("out.k.y")?,
            context: Some(id("out.k.c")?),
            bias: id("out.k.b")?,
        })
    } else {
        None
    };
    Ok(ParamIds {
        emb_message: id("emb.message")?,
        emb_response: id("emb.response")?,
        enc_fwd: gru("enc.fwd")?,
        enc_bwd: gru("enc.bwd")?,
        init_w: id("init.w")?,
        init_b: id("init.b")?,
        attention: ScorerIds {
            inputs: vec![id("att.ws")?, id("att.wh")?],
            bias: id("att.b")?,
            v: id("att.v")?,
        },
        topic_attention,
        topic_concat,
        dec: gru("dec")?,
        out_vocab: OutputIds {
            state: id("out.v.s")?,
            prev: id("out.v.y")?,
            context: None,
            bias: id("out.v.b")?,
        },
        out_topic,
    })
}

impl ModelParams {
    /// Every tensor drawn i.i.d. from `N(0, std²)`, in registration order from
    /// one seeded stream.
    pub fn init(config: ModelConfig, std: f64, seed: u64) -> Result<Self, Seq2SeqError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        for (name, shape) in layout(&config) {
            store.add(name, init_gaussian_with(&shape, std, &mut rng)?)?;
        }
        let ids = resolve(&store, &config)?;
        Ok(Self { config, store, ids })
    }

    pub fn zeros(config: ModelConfig) -> Result<Self, Seq2SeqError> {
        config.validate()?;
        let mut store = ParamStore::new();
        for (name, shape) in layout(&config) {
            store.add(name, Tensor::zeros(&shape))?;
        }
        let ids = resolve(&store, &config)?;
        Ok(Self { config, store, ids })
    }

    /// Adopts an existing store after checking names, order and shapes
    /// against the layout for `config`.
    pub fn from_store(config: ModelConfig, store: ParamStore) -> Result<Self, Seq2SeqError> {
        config.validate()?;
        let expected = layout(&config);
        if expected.len() != store.len() {
            return contract(format!(
                "expected {} parameters for this configuration, found {}",
                expected.len(),
                store.len()
            ));
        }
        for ((name, shape), (_, p)) in expected.iter().zip(store.iter()) {
            if &p.name != name || p.value.shape() != shape.as_slice() {
                return contract(format!(
                    "parameter {} {:?} does not match expected {name} {shape:?}",
                    p.name,
                    p.value.shape()
                ));
            }
        }
        let ids = resolve(&store, &config)?;
        Ok(Self { config, store, ids })
    }

    pub fn param_names(config: &ModelConfig) -> Vec<String> {
        layout(config).into_iter().map(|(n, _)| n).collect()
    }

    /// Overwrites one named tensor. Used by tests and hand-built fixtures.
    pub fn set(&mut self, name: &str, data: &[f64]) -> Result<(), Seq2SeqError> {
        let id = self
            .store
            .id(name)
            .ok_or_else(|| Seq2SeqError::Contract(format!("no parameter {name}")))?;
        let p = self.store.get_mut(id);
        if p.value.len() != data.len() {
            return contract(format!("{name} holds {} values, got {}", p.value.len(), data.len()));
        }
        let t = Tensor::new(p.value.shape().to_vec(), data.to_vec())?;
        p.value = t;
        Ok(())
    }
}
