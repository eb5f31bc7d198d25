//! Oracles for the forward pass, the generation distribution and decoding.

use super::model::attend;
use super::*;
use crate::corpus::{BOS, EOS, PAD};
use crate::numeric::{sigmoid, Graph, Tensor};

fn cfg(variant: Variant, hidden: usize, u: usize) -> ModelConfig {
    ModelConfig {
        hidden,
        embed: 3,
        attn_hidden: 4,
        message_vocab: 9,
        output_vocab: u,
        topic_dim: 3,
        topic_capacity: 4,
        variant,
        score_activation: ScoreActivation::Tanh,
    }
}

fn topics(words: &[usize]) -> TopicContext {
    let embeddings = words
        .iter()
        .enumerate()
        .map(|(j, _)| {
            let raw = [1.0 + j as f64, 2.0, 0.5 + 2.0 * j as f64];
            let s: f64 = raw.iter().sum();
            raw.iter().map(|v| v / s).collect()
        })
        .collect();
    TopicContext::new(words.to_vec(), embeddings)
}

fn mv(t: &Tensor, x: &[f64]) -> Vec<f64> {
    (0..t.rows()).map(|i| t.row(i).iter().zip(x).map(|(a, b)| a * b).sum()).collect()
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

/// Eq. 1 evaluated directly on plain vectors.
fn manual_gru(m: &ModelParams, prefix: &str, x: &[f64], h: &[f64]) -> Vec<f64> {
    let w = |n: &str| m.store.value(m.store.id(&format!("{prefix}.{n}")).unwrap()).clone();
    let z: Vec<f64> = add(&mv(&w("wz"), x), &mv(&w("uz"), h)).into_iter().map(sigmoid).collect();
    let r: Vec<f64> = add(&mv(&w("wr"), x), &mv(&w("ur"), h)).into_iter().map(sigmoid).collect();
    let hr: Vec<f64> = h.iter().zip(&r).map(|(a, b)| a * b).collect();
    let s: Vec<f64> = add(&mv(&w("ws"), x), &mv(&w("us"), &hr)).into_iter().map(f64::tanh).collect();
    (0..h.len()).map(|i| (1.0 - z[i]) * s[i] + z[i] * h[i]).collect()
}

fn hand_set(m: &mut ModelParams) {
    let names: Vec<String> = m.store.names().map(String::from).collect();
    for (pi, name) in names.iter().enumerate() {
        let n = m.store.value(m.store.id(name).unwrap()).len();
        let vals: Vec<f64> = (0..n).map(|k| (((k * 37 + pi * 11) % 13) as f64 - 6.0) / 10.0).collect();
        m.set(name, &vals).unwrap();
    }
}

#[test]
fn encoder_single_token() {
    let m = ModelParams::init(cfg(Variant::S2sa, 4, 8), 0.5, 1).unwrap();
    let mut g = Graph::new(&m.store);
    let enc = encode(&mut g, &m, &[5]).unwrap();
    let x = m.store.value(m.ids.emb_message).row(5).to_vec();
    let zero = vec![0.0; 4];
    let mut expect = manual_gru(&m, "enc.fwd", &x, &zero);
    expect.extend(manual_gru(&m, "enc.bwd", &x, &zero));
    assert_eq!(enc.states.len(), 1);
    for (a, b) in g.value(enc.states[0]).iter().zip(&expect) {
        assert!((a - b).abs() < 1e-15);
    }
    assert_eq!(g.value(enc.summary), g.value(enc.states[0]));
}

#[test]
fn encoder_all_zero_parameters() {
    let m = ModelParams::zeros(cfg(Variant::TaSeq2Seq, 3, 8)).unwrap();
    let mut g = Graph::new(&m.store);
    let enc = encode(&mut g, &m, &[1, 4, 7, 2]).unwrap();
    for &h in &enc.states {
        assert!(g.value(h).iter().all(|&v| v == 0.0));
    }
    assert!(matches!(encode(&mut g, &m, &[]), Err(Seq2SeqError::Contract(_))));
    assert!(encode(&mut g, &m, &[9]).is_err());
}

#[test]
fn encoder_three_tokens_hand_evaluation() {
    let mut m = ModelParams::zeros(cfg(Variant::S2sa, 2, 8)).unwrap();
    hand_set(&mut m);
    let msg = [3, 7, 1];
    let mut g = Graph::new(&m.store);
    let enc = encode(&mut g, &m, &msg).unwrap();
    let emb = |t: usize| m.store.value(m.ids.emb_message).row(t).to_vec();
    let mut fwd = vec![vec![0.0; 2]];
    for &t in &msg {
        let h = manual_gru(&m, "enc.fwd", &emb(t), fwd.last().unwrap());
        fwd.push(h);
    }
    let mut bwd = vec![vec![0.0; 2]; 4];
    for j in (0..3).rev() {
        bwd[j] = manual_gru(&m, "enc.bwd", &emb(msg[j]), &bwd[j + 1]);
    }
    for j in 0..3 {
        let mut expect = fwd[j + 1].clone();
        expect.extend(&bwd[j]);
        for (a, b) in g.value(enc.states[j]).iter().zip(&expect) {
            assert!((a - b).abs() < 1e-15, "position {j}");
        }
    }
    let mut summary = fwd[3].clone();
    summary.extend(&bwd[0]);
    assert_eq!(g.value(enc.summary), summary.as_slice());
}

#[test]
fn attention_closed_forms() {
    // T=1: the context is h_1 whatever the scores.
    let m = ModelParams::init(cfg(Variant::S2sa, 3, 8), 0.5, 2).unwrap();
    let mut g = Graph::new(&m.store);
    let cond = Conditioning::build(&mut g, &m, &[4], &TopicContext::default()).unwrap();
    let (c, w) = message_attention(&mut g, &m, cond.initial_state, &cond).unwrap();
    assert_eq!(w, vec![1.0]);
    assert_eq!(g.value(c), g.value(cond.encoder.states[0]));

    // Zero MLP weights: uniform weights, mean of the states.
    let mut m = ModelParams::init(cfg(Variant::TopicAttention, 3, 8), 0.5, 3).unwrap();
    for n in ["att.ws", "att.wh", "att.b", "att.v", "tatt.ws", "tatt.wk", "tatt.wh", "tatt.b", "tatt.v"] {
        let len = m.store.value(m.store.id(n).unwrap()).len();
        m.set(n, &vec![0.0; len]).unwrap();
    }
    let tc = topics(&[4, 5, 6]);
    let mut g = Graph::new(&m.store);
    let cond = Conditioning::build(&mut g, &m, &[1, 2, 3, 4], &tc).unwrap();
    let (c, w) = message_attention(&mut g, &m, cond.initial_state, &cond).unwrap();
    assert!(w.iter().all(|&a| (a - 0.25).abs() < 1e-15));
    for i in 0..6 {
        let mean: f64 = cond.encoder.states.iter().map(|&h| g.value(h)[i]).sum::<f64>() / 4.0;
        assert!((g.value(c)[i] - mean).abs() < 1e-15);
    }
    let (o, tw) = topic_attention(&mut g, &m, cond.initial_state, &cond).unwrap().unwrap();
    assert!(tw.unwrap().iter().all(|&a| (a - 1.0 / 3.0).abs() < 1e-15));
    for i in 0..3 {
        let mean: f64 = tc.embeddings.iter().map(|e| e[i]).sum::<f64>() / 3.0;
        assert!((g.value(o)[i] - mean).abs() < 1e-15);
    }
}

#[test]
fn attention_two_items_hand_scores() {
    // attn_hidden 1, v = 2, W_s = 0: score_j = 2·tanh(key_j). Keys chosen so
    // the scores are (ln 3, 0), giving weights (0.75, 0.25).
    let mut c = cfg(Variant::S2sa, 3, 8);
    c.attn_hidden = 1;
    let mut m = ModelParams::zeros(c).unwrap();
    m.set("att.v", &[2.0]).unwrap();
    let mut g = Graph::new(&m.store);
    let s_prev = g.input(vec![0.3, -0.2, 0.9]).unwrap();
    let k1 = g.input(vec![(3f64.ln() / 2.0).atanh()]).unwrap();
    let k2 = g.input(vec![0.0]).unwrap();
    let h1 = g.input(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
    let h2 = g.input(vec![-1.0, 0.0, 1.0, 0.0, 2.0, 0.0]).unwrap();
    let (ctx, w) = attend(&mut g, &m.ids.attention, s_prev, &[k1, k2], &[h1, h2]).unwrap();
    assert!((w[0] - 0.75).abs() < 1e-12 && (w[1] - 0.25).abs() < 1e-12);
    let expect = [0.5, 1.5, 2.5, 3.0, 4.25, 4.5];
    for (a, b) in g.value(ctx).iter().zip(expect) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn single_topic_word_is_the_topic_vector() {
    let m = ModelParams::init(cfg(Variant::TaSeq2Seq, 3, 8), 0.5, 4).unwrap();
    let tc = topics(&[6]);
    let mut g = Graph::new(&m.store);
    let cond = Conditioning::build(&mut g, &m, &[1, 2], &tc).unwrap();
    let (o, w) = topic_attention(&mut g, &m, cond.initial_state, &cond).unwrap().unwrap();
    assert_eq!(w.unwrap(), vec![1.0]);
    assert_eq!(g.value(o), tc.embeddings[0].as_slice());
}

#[test]
fn empty_topics_rejected_for_topic_variants() {
    for v in [Variant::TopicConcat, Variant::TopicAttention, Variant::TaSeq2Seq] {
        let m = ModelParams::init(cfg(v, 3, 8), 0.1, 1).unwrap();
        let mut g = Graph::new(&m.store);
        assert!(Conditioning::build(&mut g, &m, &[1], &TopicContext::default()).is_err());
    }
    let m = ModelParams::init(cfg(Variant::TaSeq2Seq, 3, 8), 0.1, 1).unwrap();
    let mut g = Graph::new(&m.store);
    assert!(Conditioning::build(&mut g, &m, &[1], &topics(&[4, 4])).is_err());
    assert!(Conditioning::build(&mut g, &m, &[1], &topics(&[4, 5, 6, 7, 1])).is_err());
}

fn first_step(m: &ModelParams, msg: &[usize], tc: &TopicContext) -> GenerationDistribution {
    let mut g = Graph::new(&m.store);
    let cond = Conditioning::build(&mut g, m, msg, tc).unwrap();
    let out = step(&mut g, m, &cond, BOS, cond.initial_state).unwrap();
    GenerationDistribution::from_step(&g, &out, tc)
}

#[test]
fn zero_output_parameters_double_topic_words() {
    let m = ModelParams::zeros(cfg(Variant::TaSeq2Seq, 3, 8)).unwrap();
    let d = first_step(&m, &[1, 2], &topics(&[5, 6]));
    assert!((d.z() - 10.0).abs() < 1e-12);
    for w in 0..8 {
        let expect = if w == 5 || w == 6 { 0.2 } else { 0.1 };
        assert!((d.p[w] - expect).abs() < 1e-15, "word {w}: {}", d.p[w]);
    }
}

#[test]
fn distributions_normalize_and_bias_topic_words() {
    for (i, v) in Variant::ALL.into_iter().enumerate() {
        for seed in 0..10 {
            let m = ModelParams::init(cfg(v, 3, 12), 0.8, seed * 7 + i as u64).unwrap();
            let tc = topics(&[3, 7, 11]);
            let d = first_step(&m, &[1, 5, 2], &tc);
            let sum: f64 = d.p.iter().sum();
            assert!((sum - 1.0).abs() < 1e-9, "{v}: {sum}");
            assert!(d.p.iter().all(|&p| p >= 0.0));
            for &k in &tc.words {
                assert!(d.p[k] >= d.p_vocab[k]);
            }
            if !v.has_topic_bias() {
                assert!(d.p_topic.iter().all(|&p| p == 0.0));
            }
        }
    }
}

#[test]
fn distribution_matches_direct_formula() {
    let mut m = ModelParams::init(cfg(Variant::TaSeq2Seq, 3, 9), 0.4, 8).unwrap();
    // rank-1 output weights
    let (u, h, e) = (9, 3, 3);
    let outer = |r: usize, c: usize, a: f64| -> Vec<f64> {
        (0..r * c).map(|k| a * ((k / c) as f64 - 4.0) * ((k % c) as f64 + 1.0) / 10.0).collect()
    };
    m.set("out.v.s", &outer(u, h, 1.0)).unwrap();
    m.set("out.v.y", &outer(u, e, -0.5)).unwrap();
    m.set("out.k.s", &outer(u, h, 0.7)).unwrap();
    m.set("out.k.c", &outer(u, 2 * h, 0.3)).unwrap();
    let tc = topics(&[2, 6]);
    let mut g = Graph::new(&m.store);
    let cond = Conditioning::build(&mut g, &m, &[4, 1], &tc).unwrap();
    let out = step(&mut g, &m, &cond, BOS, cond.initial_state).unwrap();
    let d = GenerationDistribution::from_step(&g, &out, &tc);

    let v = |n: &str| m.store.value(m.store.id(n).unwrap()).clone();
    let s = g.value(out.state).to_vec();
    let c = g.value(out.context).to_vec();
    let y = v("emb.response").row(BOS).to_vec();
    let psi_v: Vec<f64> = add(&add(&mv(&v("out.v.s"), &s), &mv(&v("out.v.y"), &y)), v("out.v.b").data())
        .into_iter()
        .map(f64::tanh)
        .collect();
    let full_k = add(
        &add(&add(&mv(&v("out.k.s"), &s), &mv(&v("out.k.y"), &y)), &mv(&v("out.k.c"), &c)),
        v("out.k.b").data(),
    );
    let psi_k: Vec<f64> = tc.words.iter().map(|&w| full_k[w].tanh()).collect();
    let z: f64 = psi_v.iter().map(|x| x.exp()).sum::<f64>() + psi_k.iter().map(|x| x.exp()).sum::<f64>();
    assert!((d.z() - z).abs() < 1e-12);
    for (w, pv) in psi_v.iter().enumerate() {
        let mut p = pv.exp() / z;
        if let Some(j) = tc.words.iter().position(|&k| k == w) {
            p += psi_k[j].exp() / z;
        }
        assert!((d.p[w] - p).abs() < 1e-14, "word {w}");
    }
}

#[test]
fn step_zero_depends_on_topic_content() {
    let m = ModelParams::init(cfg(Variant::TaSeq2Seq, 3, 9), 0.5, 9).unwrap();
    let a = topics(&[2, 6]);
    let mut b = a.clone();
    b.embeddings[0] = vec![0.9, 0.05, 0.05];
    assert_ne!(first_step(&m, &[1, 3], &a).p, first_step(&m, &[1, 3], &b).p);
}

#[test]
fn uniform_model_sequence_loss() {
    let m = ModelParams::zeros(cfg(Variant::S2sa, 3, 10)).unwrap();
    let nll = sequence_nll(&m, &[1, 2], &[4, 5, EOS], &TopicContext::default()).unwrap();
    assert!((nll - 3.0 * 10f64.ln()).abs() < 1e-12);
    assert!(sequence_nll(&m, &[1], &[4, 5], &TopicContext::default()).is_err());
    assert!(sequence_nll(&m, &[1], &[10, EOS], &TopicContext::default()).is_err());
}

/// `Σ log p(y_i)` by stepping the decoder one token at a time.
fn stepped_log_prob(m: &ModelParams, msg: &[usize], tc: &TopicContext, tokens: &[usize]) -> f64 {
    let mut g = Graph::new(&m.store);
    let cond = Conditioning::build(&mut g, m, msg, tc).unwrap();
    let (mut s, mut prev, mut total) = (cond.initial_state, BOS, 0.0);
    for &y in tokens {
        let out = step(&mut g, m, &cond, prev, s).unwrap();
        total += step_log_probs(&g, &out, tc)[y];
        s = out.state;
        prev = y;
    }
    total
}

#[test]
fn sequence_loss_composes_step_distributions() {
    for v in Variant::ALL {
        let m = ModelParams::init(cfg(v, 3, 10), 0.6, 12).unwrap();
        let tc = topics(&[4, 8]);
        let resp = [4, 9, 8, EOS];
        let nll = sequence_nll(&m, &[2, 3, 5], &resp, &tc).unwrap();
        let stepped = stepped_log_prob(&m, &[2, 3, 5], &tc, &resp);
        assert!((nll + stepped).abs() < 1e-12, "{v}: {nll} vs {stepped}");
    }
}

#[test]
fn gradients_match_finite_differences() {
    for v in Variant::ALL {
        let mut c = cfg(v, 3, 7);
        c.attn_hidden = 2;
        c.embed = 2;
        c.message_vocab = 5;
        let mut m = ModelParams::init(c, 0.5, 21).unwrap();
        let tc = topics(&[4, 6]);
        let (msg, resp) = ([1, 3, 4], [4, 6, 5, EOS]);
        let (_, grads) = sequence_nll_with_grads(&m, &msg, &resp, &tc).unwrap();
        let h = 1e-5;
        let ids: Vec<_> = m.store.iter().map(|(id, _)| id).collect();
        for id in ids {
            for k in 0..m.store.value(id).len() {
                let orig = m.store.value(id).data()[k];
                m.store.get_mut(id).value.data_mut()[k] = orig + h;
                let up = sequence_nll(&m, &msg, &resp, &tc).unwrap();
                m.store.get_mut(id).value.data_mut()[k] = orig - h;
                let down = sequence_nll(&m, &msg, &resp, &tc).unwrap();
                m.store.get_mut(id).value.data_mut()[k] = orig;
                let numeric = (up - down) / (2.0 * h);
                let analytic = grads.get(id).map_or(0.0, |g| g[k]);
                let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-5);
                let name = &m.store.get(id).name;
                assert!(rel < 1e-4, "{v} {name}[{k}]: {analytic} vs {numeric}");
            }
        }
    }
}

#[test]
fn greedy_stops_on_forced_eos() {
    let mut m = ModelParams::zeros(cfg(Variant::S2sa, 3, 8)).unwrap();
    let mut b = vec![0.0; 8];
    b[EOS] = 5.0;
    m.set("out.v.b", &b).unwrap();
    assert!(greedy_decode(&m, &[1, 2], &TopicContext::default(), 10).unwrap().is_empty());
    let hyps = beam_search(&m, &[1, 2], &TopicContext::default(), &BeamConfig::new(3, 10)).unwrap();
    assert_eq!(hyps[0].tokens, vec![EOS]);
    assert!(hyps[0].finished);
    assert!(hyps[0].response().is_empty());
}

#[test]
fn greedy_matches_manual_stepping() {
    let m = ModelParams::init(cfg(Variant::TaSeq2Seq, 4, 9), 0.8, 33).unwrap();
    let tc = topics(&[5, 8]);
    let out = greedy_decode(&m, &[2, 6], &tc, 6).unwrap();
    let mut g = Graph::new(&m.store);
    let cond = Conditioning::build(&mut g, &m, &[2, 6], &tc).unwrap();
    let (mut s, mut prev, mut manual) = (cond.initial_state, BOS, Vec::new());
    for _ in 0..6 {
        let o = step(&mut g, &m, &cond, prev, s).unwrap();
        let lp = step_log_probs(&g, &o, &tc);
        let w = (0..lp.len())
            .filter(|&w| w != BOS && w != PAD)
            .fold(None::<usize>, |b, w| match b {
                Some(b) if lp[b] >= lp[w] => Some(b),
                _ => Some(w),
            })
            .unwrap();
        if w == EOS {
            break;
        }
        manual.push(w);
        s = o.state;
        prev = w;
    }
    assert_eq!(out, manual);
}

#[test]
fn beam_of_one_is_greedy() {
    for (i, v) in Variant::ALL.into_iter().enumerate() {
        for seed in 0..5 {
            let m = ModelParams::init(cfg(v, 3, 8), 1.0, seed + 100 * i as u64).unwrap();
            let tc = topics(&[4, 7]);
            let greedy = greedy_decode(&m, &[3, 1], &tc, 5).unwrap();
            let beam = beam_search(&m, &[3, 1], &tc, &BeamConfig::new(1, 5)).unwrap();
            assert_eq!(beam[0].response(), greedy.as_slice(), "{v} seed {seed}");
        }
    }
}

#[test]
fn max_len_one_ranks_first_step_tokens() {
    let m = ModelParams::init(cfg(Variant::TaSeq2Seq, 3, 8), 1.0, 5).unwrap();
    let tc = topics(&[4, 7]);
    let hyps = beam_search(&m, &[3, 1], &tc, &BeamConfig::new(8, 1)).unwrap();
    let d = first_step(&m, &[3, 1], &tc);
    let mut expect: Vec<usize> = (0..8).filter(|&w| w != BOS && w != PAD).collect();
    expect.sort_by(|&a, &b| d.p[b].total_cmp(&d.p[a]).then(a.cmp(&b)));
    assert_eq!(hyps.iter().map(|h| h.tokens[0]).collect::<Vec<_>>(), expect);
}

#[test]
fn saturated_beam_equals_enumeration() {
    for v in Variant::ALL {
        let m = ModelParams::init(cfg(v, 3, 6), 1.2, 77).unwrap();
        let tc = topics(&[4, 5]);
        let msg = [2, 7];
        let allowed: Vec<usize> = (0..6).filter(|&w| w != BOS && w != PAD).collect();
        let mut all: Vec<(Vec<usize>, f64)> = Vec::new();
        let mut frontier: Vec<Vec<usize>> = vec![vec![]];
        for len in 1..=3 {
            let mut next = Vec::new();
            for p in &frontier {
                for &w in &allowed {
                    let mut t = p.clone();
                    t.push(w);
                    if w == EOS || len == 3 {
                        let lp = stepped_log_prob(&m, &msg, &tc, &t);
                        all.push((t, lp));
                    } else {
                        next.push(t);
                    }
                }
            }
            frontier = next;
        }
        all.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.len().cmp(&b.0.len())).then(a.0.cmp(&b.0)));
        let hyps = beam_search(&m, &msg, &tc, &BeamConfig::new(64, 3)).unwrap();
        assert_eq!(hyps.len(), all.len());
        for (h, (t, lp)) in hyps.iter().zip(&all) {
            assert_eq!(&h.tokens, t, "{v}");
            assert!((h.log_prob - lp).abs() < 1e-9);
        }
    }
}
