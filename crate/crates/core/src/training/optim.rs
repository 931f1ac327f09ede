use serde::{Deserialize, Serialize};

use super::config::OptimizerKind;
use crate::error::{Error, Result};
use crate::nn::{Network, Scalar};

/// Schedule formula recorded with every run.
pub const LR_SCHEDULE: &str = "lr_t = lr0 / (1 + decay * t), t = optimizer updates so far";

/// `lr0 / (1 + decay * t)`.
pub fn lr_schedule(lr0: f64, decay: f64, t: u64) -> f64 {
    lr0 / (1.0 + decay * t as f64)
}

fn same_len(what: &str, a: usize, b: usize) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(Error::shape(format!("{what}: {a} values vs {b}")))
    }
}

/// `params -= lr * grads`, in the parameter precision.
pub fn sgd_step<T: Scalar>(params: &mut [T], grads: &[T], lr: f64) -> Result<()> {
    same_len("sgd params vs grads", params.len(), grads.len())?;
    let lr = T::from_f64_lossy(lr);
    for (p, &g) in params.iter_mut().zip(grads) {
        *p -= lr * g;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment estimates for one parameter buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
    /// Updates applied so far.
    pub t: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn zeros(len: usize) -> Self {
        Self {
            m: vec![T::zero(); len],
            v: vec![T::zero(); len],
            t: 0,
        }
    }
}

/// Bias-corrected Adam update; increments `state.t`.
pub fn adam_step<T: Scalar>(
    params: &mut [T],
    grads: &[T],
    state: &mut AdamState<T>,
    lr: f64,
    hp: &AdamParams,
) -> Result<()> {
    same_len("adam params vs grads", params.len(), grads.len())?;
    same_len("adam params vs first moment", params.len(), state.m.len())?;
    same_len("adam params vs second moment", params.len(), state.v.len())?;
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - hp.beta1.powi(t);
    let c2 = 1.0 - hp.beta2.powi(t);
    for i in 0..params.len() {
        let g = grads[i].to_f64_lossy();
        let m = hp.beta1 * state.m[i].to_f64_lossy() + (1.0 - hp.beta1) * g;
        let v = hp.beta2 * state.v[i].to_f64_lossy() + (1.0 - hp.beta2) * g * g;
        state.m[i] = T::from_f64_lossy(m);
        state.v[i] = T::from_f64_lossy(v);
        let update = lr * (m / c1) / ((v / c2).sqrt() + hp.eps);
        params[i] = T::from_f64_lossy(params[i].to_f64_lossy() - update);
    }
    Ok(())
}

/// Per-buffer optimizer memory.
#[derive(Debug, Clone, PartialEq)]
pub enum OptimizerState<T> {
    Sgd,
    /// One entry per trainable buffer, created on the first update.
    Adam(Vec<AdamState<T>>),
}

/// Applies the configured update rule to every trainable buffer of a network.
#[derive(Debug, Clone)]
pub struct Optimizer<T> {
    pub kind: OptimizerKind,
    pub lr0: f64,
    pub decay: f64,
    pub adam: AdamParams,
    pub state: OptimizerState<T>,
    steps: u64,
}

impl<T: Scalar> Optimizer<T> {
    pub fn new(kind: OptimizerKind, lr0: f64, decay: f64, adam: AdamParams) -> Self {
        let state = match kind {
            OptimizerKind::Sgd => OptimizerState::Sgd,
            OptimizerKind::Adam => OptimizerState::Adam(Vec::new()),
        };
        Self {
            kind,
            lr0,
            decay,
            adam,
            state,
            steps: 0,
        }
    }

    /// Updates applied so far.
    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Rate the next update will use.
    pub fn current_lr(&self) -> f64 {
        lr_schedule(self.lr0, self.decay, self.steps)
    }

    /// One update from the accumulated gradients; returns the rate used.
    pub fn step(&mut self, net: &mut Network<T>) -> Result<f64> {
        let lr = self.current_lr();
        let mut params = net.params_mut();
        params.retain(|p| p.kind.trainable());
        if let OptimizerState::Adam(states) = &mut self.state {
            if states.is_empty() {
                *states = params.iter().map(|p| AdamState::zeros(p.values.len())).collect();
            }
            same_len("adam buffers vs network", states.len(), params.len())?;
        }
        for (i, p) in params.into_iter().enumerate() {
            let grad = p.grad.expect("trainable buffers carry gradients");
            match &mut self.state {
                OptimizerState::Sgd => sgd_step(p.values, grad, lr)?,
                OptimizerState::Adam(states) => adam_step(p.values, grad, &mut states[i], lr, &self.adam)?,
            }
        }
        self.steps += 1;
        Ok(lr)
    }
}
