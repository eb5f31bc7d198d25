//! Batched teacher-forced training with AdaDelta, learning-rate halving and
//! the perplexity stopping rule.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::corpus::PAD;
use crate::eval::{EvalError, Perplexity};
use crate::numeric::{AdaDelta, AdaDeltaConfig, Gradients, NumericError};
use crate::parallel::{map_ordered, Exec};
use crate::seq2seq::{sequence_nll_with_grads, Example, ModelParams, Seq2SeqError};

pub const DEFAULT_BATCH: usize = 128;
pub const DEFAULT_LEARNING_RATE: f64 = 1.0;
pub const DEFAULT_STOP_WINDOW: usize = 5;
pub const DEFAULT_STOP_THRESHOLD: f64 = 2.0;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("no training examples")]
    NoExamples,
    #[error("non-finite loss {loss} in epoch {epoch}, batch {batch} (examples {examples:?})")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        loss: f64,
        examples: Vec<usize>,
    },
    #[error("epoch {epoch}, batch {batch}: {source}")]
    Batch {
        epoch: usize,
        batch: usize,
        #[source]
        source: Seq2SeqError,
    },
    #[error("optimizer: {0}")]
    Numeric(#[from] NumericError),
    #[error("validation: {0}")]
    Eval(#[from] EvalError),
    #[error("{0}")]
    Observer(String),
}

impl TrainError {
    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            TrainError::NonFiniteLoss { .. }
                | TrainError::Numeric(_)
                | TrainError::Batch {
                    source: Seq2SeqError::Numeric(_),
                    ..
                }
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Validate every this many optimizer steps; `None` validates once per
    /// epoch.
    pub validate_every: Option<usize>,
    pub stop_window: usize,
    pub stop_threshold: f64,
    pub max_epochs: usize,
    pub seed: u64,
    /// Rescale the batch gradient to at most this L2 norm. Off by default.
    pub clip: Option<f64>,
    pub adadelta: AdaDeltaConfig,
    pub exec: Exec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: DEFAULT_BATCH,
            learning_rate: DEFAULT_LEARNING_RATE,
            validate_every: None,
            stop_window: DEFAULT_STOP_WINDOW,
            stop_threshold: DEFAULT_STOP_THRESHOLD,
            max_epochs: 100,
            seed: 1,
            clip: None,
            adadelta: AdaDeltaConfig::default(),
            exec: Exec::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.into()));
        // `positive` is false for NaN as well.
        let positive = |x: f64| x > 0.0;
        if self.batch_size == 0 {
            return bad("batch size must be at least 1");
        }
        if !positive(self.stop_threshold) {
            return bad("stopping threshold must be positive");
        }
        if self.stop_window == 0 {
            return bad("stopping window must be at least 1");
        }
        if !(positive(self.learning_rate) && self.learning_rate.is_finite()) {
            return bad("learning rate must be positive and finite");
        }
        if self.validate_every == Some(0) {
            return bad("validation cadence must be at least 1 step");
        }
        if self.clip.is_some_and(|c| !positive(c)) {
            return bad("clip norm must be positive");
        }
        if !(0.0..1.0).contains(&self.adadelta.rho) || !positive(self.adadelta.epsilon) {
            return bad("AdaDelta needs 0 <= rho < 1 and epsilon > 0");
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Schedule

/// Halving rule: the learning rate halves when validation perplexity rose
/// versus the previous pass.
pub fn should_halve(previous: Option<f64>, current: f64) -> bool {
    previous.is_some_and(|p| current > p)
}

/// Stopping rule: counts consecutive validation passes whose improvement
/// over the previous pass is below `threshold` (a rise counts too); an
/// improvement of at least `threshold` resets the count. Halts once the
/// count reaches `window`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StopRule {
    pub window: usize,
    pub threshold: f64,
    pub small_improvements: usize,
}

impl StopRule {
    pub fn new(window: usize, threshold: f64) -> Self {
        Self {
            window,
            threshold,
            small_improvements: 0,
        }
    }

    /// Records one pass; returns true when training should halt.
    pub fn observe(&mut self, previous: Option<f64>, current: f64) -> bool {
        if let Some(p) = previous {
            if p - current < self.threshold {
                self.small_improvements += 1;
            } else {
                self.small_improvements = 0;
            }
        }
        self.small_improvements >= self.window
    }
}

/// Result of feeding a scripted perplexity sequence through both rules:
/// the learning rate after each pass and the pass (0-based) that halted.
pub fn replay_schedule(ppl: &[f64], lr: f64, window: usize, threshold: f64) -> (Vec<f64>, Option<usize>) {
    let mut rule = StopRule::new(window, threshold);
    let mut rates = Vec::with_capacity(ppl.len());
    let mut lr = lr;
    let mut prev = None;
    for (i, &p) in ppl.iter().enumerate() {
        if should_halve(prev, p) {
            lr *= 0.5;
        }
        rates.push(lr);
        if rule.observe(prev, p) {
            return (rates, Some(i));
        }
        prev = Some(p);
    }
    (rates, None)
}

// ---------------------------------------------------------------------------
// Batches

/// A padded minibatch. Row `r` holds example `indices[r]`; masks are 1.0 on
/// real tokens and 0.0 on PAD.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub indices: Vec<usize>,
    pub messages: Vec<Vec<usize>>,
    pub message_mask: Vec<Vec<f64>>,
    pub responses: Vec<Vec<usize>>,
    pub response_mask: Vec<Vec<f64>>,
}

fn pad(rows: &[&[usize]]) -> (Vec<Vec<usize>>, Vec<Vec<f64>>) {
    let width = rows.iter().map(|r| r.len()).max().unwrap_or(0);
    rows.iter()
        .map(|r| {
            let mut ids = r.to_vec();
            let mut mask = vec![1.0; r.len()];
            ids.resize(width, PAD);
            mask.resize(width, 0.0);
            (ids, mask)
        })
        .unzip()
}

fn unpad(ids: &[usize], mask: &[f64]) -> Vec<usize> {
    ids.iter().zip(mask).filter(|(_, &m)| m > 0.0).map(|(&t, _)| t).collect()
}

impl Batch {
    pub fn new(examples: &[Example], indices: Vec<usize>) -> Self {
        let msgs: Vec<&[usize]> = indices.iter().map(|&i| examples[i].message.as_slice()).collect();
        let resps: Vec<&[usize]> = indices.iter().map(|&i| examples[i].response.as_slice()).collect();
        let (messages, message_mask) = pad(&msgs);
        let (responses, response_mask) = pad(&resps);
        Self {
            indices,
            messages,
            message_mask,
            responses,
            response_mask,
        }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Row `r` with padding removed: `(message, response)`.
    pub fn row(&self, r: usize) -> (Vec<usize>, Vec<usize>) {
        (
            unpad(&self.messages[r], &self.message_mask[r]),
            unpad(&self.responses[r], &self.response_mask[r]),
        )
    }

    /// Number of unmasked response tokens.
    pub fn tokens(&self) -> usize {
        self.response_mask.iter().flatten().filter(|&&m| m > 0.0).count()
    }
}

/// Per-epoch shuffle seed, so any epoch's batch order can be rebuilt from
/// the run seed alone.
fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    seed ^ (epoch as u64).wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Shuffled, padded batches for one epoch.
pub fn batch_iterator(examples: &[Example], batch_size: usize, seed: u64, epoch: usize) -> Vec<Batch> {
    let mut order: Vec<usize> = (0..examples.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(epoch_seed(seed, epoch)));
    order
        .chunks(batch_size.max(1))
        .map(|c| Batch::new(examples, c.to_vec()))
        .collect()
}

/// Masked loss of a batch: the sum over rows of the teacher-forced NLL of
/// the unpadded tokens, with the summed gradient. Rows run through
/// `map_ordered` and are reduced in row order.
pub fn batch_loss(
    model: &ModelParams,
    examples: &[Example],
    batch: &Batch,
    exec: Exec,
) -> Result<(f64, Gradients), Seq2SeqError> {
    let rows: Vec<usize> = (0..batch.len()).collect();
    let results = map_ordered(exec, &rows, |&r| {
        let (message, response) = batch.row(r);
        sequence_nll_with_grads(model, &message, &response, &examples[batch.indices[r]].topics)
    });
    let mut loss = 0.0;
    let mut grads = Gradients::empty(model.store.len());
    for res in results {
        let (l, g) = res?;
        loss += l;
        grads.merge(&g);
    }
    Ok((loss, grads))
}

// ---------------------------------------------------------------------------
// Training state and loop

/// One validation pass.
#[derive(Clone, Debug, PartialEq)]
pub struct ValidationRecord {
    pub epoch: usize,
    pub step: usize,
    pub learning_rate: f64,
    /// Mean per-example training loss since the previous pass.
    pub train_loss: f64,
    pub ppl: Perplexity,
    pub best: bool,
}

impl ValidationRecord {
    pub const LOG_HEADER: &'static str = "step\tepoch\tlr\ttrain_loss\tvalid_ppl\tvalid_ppl_token\tbest";

    pub fn log_line(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}",
            self.step,
            self.epoch,
            self.learning_rate,
            self.train_loss,
            self.ppl.per_response,
            self.ppl.per_token,
            u8::from(self.best)
        )
    }
}

/// Everything needed to continue a run exactly where it stopped.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub epoch: usize,
    /// Batches of `epoch` already applied.
    pub batch_in_epoch: usize,
    pub step: usize,
    pub learning_rate: f64,
    pub optimizer: AdaDelta,
    pub history: Vec<ValidationRecord>,
    pub stop: StopRule,
    pub halted: bool,
    /// Index into `history` of the best per-response perplexity.
    pub best: Option<usize>,
    /// Mean per-example loss of every applied batch.
    pub loss_trace: Vec<f64>,
    /// Loss sum and example count since the last validation pass.
    pub pending_loss: f64,
    pub pending_examples: usize,
}

impl TrainState {
    pub fn new(model: &ModelParams, cfg: &TrainConfig) -> Self {
        Self {
            epoch: 0,
            batch_in_epoch: 0,
            step: 0,
            learning_rate: cfg.learning_rate,
            optimizer: AdaDelta::new(&model.store, cfg.adadelta),
            history: Vec::new(),
            stop: StopRule::new(cfg.stop_window, cfg.stop_threshold),
            halted: false,
            best: None,
            loss_trace: Vec::new(),
            pending_loss: 0.0,
            pending_examples: 0,
        }
    }

    pub fn best_record(&self) -> Option<&ValidationRecord> {
        self.best.map(|i| &self.history[i])
    }
}

/// Hooks called by [`train`].
pub trait TrainObserver {
    /// After every optimizer step.
    fn on_step(&mut self, _state: &TrainState, _batch_loss: f64) -> Result<(), TrainError> {
        Ok(())
    }

    /// After every validation pass, with the record already pushed to
    /// `state.history`. Checkpoints are written here.
    fn on_validation(&mut self, _model: &ModelParams, _state: &TrainState) -> Result<(), TrainError> {
        Ok(())
    }

    /// Return true to stop after the current step (e.g. simulated
    /// interruption).
    fn should_interrupt(&mut self, _state: &TrainState) -> bool {
        false
    }
}

/// Observer that does nothing.
pub struct NoObserver;

impl TrainObserver for NoObserver {}

fn validate(
    model: &ModelParams,
    state: &mut TrainState,
    valid: &[Example],
    cfg: &TrainConfig,
) -> Result<(), TrainError> {
    let ppl = Perplexity::compute(model, valid, cfg.exec)?;
    let current = ppl.per_response;
    let previous = state.history.last().map(|r| r.ppl.per_response);
    let train_loss = if state.pending_examples > 0 {
        state.pending_loss / state.pending_examples as f64
    } else {
        f64::NAN
    };
    let best = state
        .best_record()
        .is_none_or(|b| current < b.ppl.per_response);
    state.history.push(ValidationRecord {
        epoch: state.epoch,
        step: state.step,
        learning_rate: state.learning_rate,
        train_loss,
        ppl,
        best,
    });
    if best {
        state.best = Some(state.history.len() - 1);
    }
    if should_halve(previous, current) {
        state.learning_rate *= 0.5;
        log::info!("validation perplexity rose to {current}; learning rate now {}", state.learning_rate);
    }
    if state.stop.observe(previous, current) {
        state.halted = true;
        log::info!("stopping rule fired at step {}", state.step);
    }
    state.pending_loss = 0.0;
    state.pending_examples = 0;
    Ok(())
}

/// Runs (or resumes) training until `max_epochs`, the stopping rule, or an
/// observer interruption. With an empty validation set no validation passes
/// run and only `max_epochs` bounds the run.
pub fn train(
    model: &mut ModelParams,
    state: &mut TrainState,
    cfg: &TrainConfig,
    train_set: &[Example],
    valid: &[Example],
    observer: &mut dyn TrainObserver,
) -> Result<(), TrainError> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(TrainError::NoExamples);
    }
    while !state.halted && state.epoch < cfg.max_epochs {
        let batches = batch_iterator(train_set, cfg.batch_size, cfg.seed, state.epoch);
        while state.batch_in_epoch < batches.len() {
            let b = state.batch_in_epoch;
            let batch = &batches[b];
            let (loss, mut grads) = batch_loss(model, train_set, batch, cfg.exec).map_err(|source| {
                TrainError::Batch {
                    epoch: state.epoch,
                    batch: b,
                    source,
                }
            })?;
            if !loss.is_finite() {
                return Err(TrainError::NonFiniteLoss {
                    epoch: state.epoch,
                    batch: b,
                    loss,
                    examples: batch.indices.clone(),
                });
            }
            grads.scale(1.0 / batch.len() as f64);
            if let Some(max) = cfg.clip {
                let norm = grads.squared_norm().sqrt();
                if norm > max {
                    grads.scale(max / norm);
                }
            }
            model.store.zero_grads();
            model.store.accumulate(&grads);
            state.optimizer.step(&mut model.store, state.learning_rate)?;
            state.step += 1;
            state.batch_in_epoch += 1;
            let mean = loss / batch.len() as f64;
            state.loss_trace.push(mean);
            state.pending_loss += loss;
            state.pending_examples += batch.len();
            observer.on_step(state, mean)?;
            if state.batch_in_epoch == batches.len() {
                state.epoch += 1;
                state.batch_in_epoch = 0;
            }
            let due = match cfg.validate_every {
                Some(n) => state.step.is_multiple_of(n),
                None => state.batch_in_epoch == 0,
            };
            if due && !valid.is_empty() {
                validate(model, state, valid, cfg)?;
                observer.on_validation(model, state)?;
                if state.halted {
                    return Ok(());
                }
            }
            if observer.should_interrupt(state) {
                return Ok(());
            }
            if state.batch_in_epoch == 0 {
                break;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::EOS;
    use crate::seq2seq::{sequence_nll, ModelConfig, ScoreActivation, TopicContext, Variant};

    fn examples(n: usize) -> Vec<Example> {
        (0..n)
            .map(|i| Example {
                message: (0..1 + i % 3).map(|j| 4 + (i + j) % 5).collect(),
                response: {
                    let mut r: Vec<usize> = (0..i % 4).map(|j| 4 + (i * 3 + j) % 6).collect();
                    r.push(EOS);
                    r
                },
                topics: TopicContext::new(vec![8, 9], vec![vec![0.5, 0.5], vec![0.9, 0.1]]),
            })
            .collect()
    }

    fn model(variant: Variant) -> ModelParams {
        let cfg = ModelConfig {
            hidden: 4,
            embed: 3,
            attn_hidden: 4,
            message_vocab: 10,
            output_vocab: 10,
            topic_dim: 2,
            topic_capacity: 2,
            variant,
            score_activation: ScoreActivation::Tanh,
        };
        ModelParams::init(cfg, 0.3, 11).unwrap()
    }

    #[test]
    fn batch_sizes_and_order() {
        let ex = examples(5);
        let b = batch_iterator(&ex, 2, 3, 0);
        assert_eq!(b.iter().map(Batch::len).collect::<Vec<_>>(), vec![2, 2, 1]);
        assert_eq!(b, batch_iterator(&ex, 2, 3, 0));
        let mut seen: Vec<usize> = b.iter().flat_map(|b| b.indices.clone()).collect();
        seen.sort();
        assert_eq!(seen, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn padding_and_masks() {
        let ex = examples(4);
        let b = Batch::new(&ex, vec![0, 2]);
        assert_eq!(b.messages[0], vec![4, PAD, PAD]);
        assert_eq!(b.message_mask[0], vec![1.0, 0.0, 0.0]);
        assert_eq!(b.row(0), (ex[0].message.clone(), ex[0].response.clone()));
        assert_eq!(b.tokens(), ex[0].response.len() + ex[2].response.len());
    }

    #[test]
    fn masked_batch_loss_equals_sum_of_pair_losses() {
        for variant in Variant::ALL {
            let m = model(variant);
            let ex = examples(7);
            let b = Batch::new(&ex, (0..7).collect());
            let (loss, _) = batch_loss(&m, &ex, &b, Exec::Sequential).unwrap();
            let direct: f64 = ex
                .iter()
                .map(|e| sequence_nll(&m, &e.message, &e.response, &e.topics).unwrap())
                .sum();
            assert!((loss - direct).abs() < 1e-9, "{variant}: {loss} vs {direct}");
            let (par, _) = batch_loss(&m, &ex, &b, Exec::Parallel).unwrap();
            assert_eq!(par.to_bits(), loss.to_bits());
        }
    }

    #[test]
    fn halving_rule() {
        let (rates, halt) = replay_schedule(&[150.0, 151.0], 1.0, 5, 2.0);
        assert_eq!(rates, vec![1.0, 0.5]);
        assert_eq!(halt, None);
    }

    #[test]
    fn stopping_rule() {
        let seq = [150.0, 149.5, 149.2, 149.0, 148.9, 148.8];
        let (_, halt) = replay_schedule(&seq, 1.0, 5, 2.0);
        assert_eq!(halt, Some(5));
        let (_, halt) = replay_schedule(&seq[..5], 1.0, 5, 2.0);
        assert_eq!(halt, None);
        // A large improvement resets the count.
        let (_, halt) = replay_schedule(&[150.0, 149.0, 140.0, 139.0, 138.0, 137.0, 136.0], 1.0, 5, 2.0);
        assert_eq!(halt, None);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = [
            TrainConfig {
                batch_size: 0,
                ..TrainConfig::default()
            },
            TrainConfig {
                stop_threshold: 0.0,
                ..TrainConfig::default()
            },
            TrainConfig {
                validate_every: Some(0),
                ..TrainConfig::default()
            },
        ];
        for c in bad {
            assert!(c.validate().is_err());
        }
    }

    fn run(cfg: &TrainConfig) -> (ModelParams, TrainState) {
        let ex = examples(9);
        let mut m = model(Variant::TaSeq2Seq);
        let mut st = TrainState::new(&m, cfg);
        train(&mut m, &mut st, cfg, &ex, &ex[..3], &mut NoObserver).unwrap();
        (m, st)
    }

    #[test]
    fn training_is_reproducible_and_reduces_loss() {
        let cfg = TrainConfig {
            batch_size: 3,
            max_epochs: 6,
            seed: 4,
            ..TrainConfig::default()
        };
        let (m1, s1) = run(&cfg);
        let (m2, s2) = run(&TrainConfig {
            exec: Exec::Sequential,
            ..cfg.clone()
        });
        assert_eq!(s1.loss_trace.len(), 18);
        assert_eq!(
            s1.loss_trace.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            s2.loss_trace.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
        assert_eq!(m1, m2);
        assert_eq!(s1.history.len(), 6);
        assert!(s1.best.is_some());
    }

    struct StopAfter(usize);

    impl TrainObserver for StopAfter {
        fn should_interrupt(&mut self, state: &TrainState) -> bool {
            state.step == self.0
        }
    }

    #[test]
    fn resume_continues_the_same_trace() {
        let cfg = TrainConfig {
            batch_size: 2,
            max_epochs: 3,
            seed: 9,
            ..TrainConfig::default()
        };
        let ex = examples(7);
        let (reference, ref_state) = {
            let mut m = model(Variant::TopicAttention);
            let mut st = TrainState::new(&m, &cfg);
            train(&mut m, &mut st, &cfg, &ex, &ex[..2], &mut NoObserver).unwrap();
            (m, st)
        };
        let mut m = model(Variant::TopicAttention);
        let mut st = TrainState::new(&m, &cfg);
        train(&mut m, &mut st, &cfg, &ex, &ex[..2], &mut StopAfter(5)).unwrap();
        assert_eq!(st.step, 5);
        let (mut m, mut st) = (m.clone(), st.clone());
        train(&mut m, &mut st, &cfg, &ex, &ex[..2], &mut NoObserver).unwrap();
        assert_eq!(st, ref_state);
        assert_eq!(m, reference);
    }

    #[test]
    fn non_finite_loss_names_the_batch() {
        let mut m = model(Variant::S2sa);
        let n = m.store.value(m.ids.out_vocab.bias).len();
        let mut bias = vec![0.0; n];
        bias[5] = 1e308;
        bias[6] = -1e308;
        m.set("out.v.b", &bias).unwrap();
        let cfg = TrainConfig {
            batch_size: 4,
            max_epochs: 1,
            ..TrainConfig::default()
        };
        let ex = examples(4);
        let mut st = TrainState::new(&m, &cfg);
        let err = train(&mut m, &mut st, &cfg, &ex, &[], &mut NoObserver).unwrap_err();
        assert!(err.is_numeric(), "{err}");
        assert!(err.to_string().contains("batch 0"), "{err}");
    }
}
