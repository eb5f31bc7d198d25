//! AdaDelta with a global learning-rate multiplier.
//!
//! Per element, with gradient `g`:
//!
//! ```text
//! E[g²]  ← ρ E[g²] + (1 − ρ) g²
//! Δx     = −(√(E[Δx²] + ε) / √(E[g²] + ε)) g
//! E[Δx²] ← ρ E[Δx²] + (1 − ρ) Δx²
//! x      ← x + lr · Δx
//! ```

use super::tensor::check_finite;
use super::{NumericError, ParamStore, Parameter};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdaDeltaConfig {
    pub rho: f64,
    pub epsilon: f64,
}

impl Default for AdaDeltaConfig {
    fn default() -> Self {
        Self {
            rho: 0.95,
            epsilon: 1e-6,
        }
    }
}

/// Running averages for one parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdaDeltaState {
    pub sq_grad: Vec<f64>,
    pub sq_update: Vec<f64>,
}

impl AdaDeltaState {
    pub fn zeros(len: usize) -> Self {
        Self {
            sq_grad: vec![0.0; len],
            sq_update: vec![0.0; len],
        }
    }
}

/// Applies one AdaDelta step to `param` using its accumulated gradient.
pub fn adadelta_update(
    param: &mut Parameter,
    state: &mut AdaDeltaState,
    cfg: AdaDeltaConfig,
    lr: f64,
) -> Result<(), NumericError> {
    let n = param.value.len();
    if state.sq_grad.len() != n || state.sq_update.len() != n {
        return Err(NumericError::Shape {
            op: "adadelta_update",
            detail: format!("state of {} for parameter of {n}", state.sq_grad.len()),
        });
    }
    let AdaDeltaConfig { rho, epsilon } = cfg;
    let grad = param.grad.data();
    let mut updated = param.value.data().to_vec();
    for i in 0..n {
        let g = grad[i];
        let eg = rho * state.sq_grad[i] + (1.0 - rho) * g * g;
        let dx = -((state.sq_update[i] + epsilon).sqrt() / (eg + epsilon).sqrt()) * g;
        state.sq_grad[i] = eg;
        state.sq_update[i] = rho * state.sq_update[i] + (1.0 - rho) * dx * dx;
        updated[i] += lr * dx;
    }
    check_finite("adadelta_update", &updated)?;
    param.value.data_mut().copy_from_slice(&updated);
    Ok(())
}

/// Optimizer state for a whole [`ParamStore`], in registration order.
#[derive(Clone, Debug, PartialEq)]
pub struct AdaDelta {
    pub config: AdaDeltaConfig,
    pub states: Vec<AdaDeltaState>,
}

impl AdaDelta {
    pub fn new(store: &ParamStore, config: AdaDeltaConfig) -> Self {
        let states = store
            .iter()
            .map(|(_, p)| AdaDeltaState::zeros(p.value.len()))
            .collect();
        Self { config, states }
    }

    pub fn step(&mut self, store: &mut ParamStore, lr: f64) -> Result<(), NumericError> {
        if self.states.len() != store.len() {
            return Err(NumericError::Contract(format!(
                "optimizer tracks {} parameters, store has {}",
                self.states.len(),
                store.len()
            )));
        }
        for (p, s) in store.iter_mut().zip(self.states.iter_mut()) {
            adadelta_update(p, s, self.config, lr)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::Tensor;

    fn scalar_param(x: f64, g: f64) -> Parameter {
        let mut p = Parameter::new("x", Tensor::vector(vec![x]).unwrap());
        p.grad.data_mut()[0] = g;
        p
    }

    #[test]
    fn first_step_closed_form() {
        let cfg = AdaDeltaConfig::default();
        for &g in &[0.3, -2.0, 1e-4] {
            let mut p = scalar_param(1.0, g);
            let mut s = AdaDeltaState::zeros(1);
            adadelta_update(&mut p, &mut s, cfg, 1.0).unwrap();
            let eps: f64 = 1e-6;
            let expected = -(eps.sqrt() / (0.05 * g * g + eps).sqrt()) * g;
            assert!((p.value.data()[0] - (1.0 + expected)).abs() < 1e-15);
            assert!((s.sq_grad[0] - 0.05 * g * g).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_gradient_leaves_value_and_decays_average() {
        let cfg = AdaDeltaConfig::default();
        let mut p = scalar_param(2.0, 0.0);
        let mut s = AdaDeltaState {
            sq_grad: vec![0.4],
            sq_update: vec![0.1],
        };
        adadelta_update(&mut p, &mut s, cfg, 1.0).unwrap();
        assert_eq!(p.value.data()[0], 2.0);
        assert!((s.sq_grad[0] - 0.95 * 0.4).abs() < 1e-15);
    }

    #[test]
    fn minimizes_a_parabola() {
        let cfg = AdaDeltaConfig::default();
        let mut p = scalar_param(5.0, 0.0);
        let mut s = AdaDeltaState::zeros(1);
        let mut trace = vec![5.0f64];
        for _ in 0..200 {
            let x = p.value.data()[0];
            p.grad.data_mut()[0] = 2.0 * x;
            adadelta_update(&mut p, &mut s, cfg, 1.0).unwrap();
            trace.push(p.value.data()[0]);
        }
        // |x| shrinks over every 20-step window
        for w in trace.chunks(20).collect::<Vec<_>>().windows(2) {
            assert!(w[1][0].abs() < w[0][0].abs());
        }
        assert!(trace.last().unwrap().abs() < 5.0);
    }
}
