use serde::{Deserialize, Serialize};

use super::{log_softmax, softmax, Logits, LossOutput, ScoreMap};
use crate::error::{Error, Result};

/// Bounds applied to frequency-derived class weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightClip {
    pub min: f64,
    pub max: f64,
}

impl Default for WeightClip {
    fn default() -> Self {
        Self { min: 0.1, max: 100.0 }
    }
}

/// Per-class loss weights, all strictly positive.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassWeights {
    weights: Vec<f64>,
}

impl ClassWeights {
    pub fn uniform(num_classes: usize) -> Self {
        Self {
            weights: vec![1.0; num_classes],
        }
    }

    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if let Some(bad) = weights.iter().find(|w| !(w.is_finite() && **w > 0.0)) {
            return Err(Error::config(format!("class weight {bad} is not positive")));
        }
        Ok(Self { weights })
    }

    /// `w_c = (1 - f_c) / f_c` from per-class pixel fractions, clipped.
    ///
    /// A class that never occurs (`f_c = 0`) gets the upper bound.
    pub fn from_frequencies(freqs: &[f64], clip: WeightClip) -> Self {
        let weights = freqs
            .iter()
            .map(|&f| {
                if f <= 0.0 {
                    clip.max
                } else {
                    ((1.0 - f) / f).clamp(clip.min, clip.max)
                }
            })
            .collect();
        Self { weights }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.weights).expect("f64 array serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::new(serde_json::from_str(text)?)
    }
}

/// Multiclass weighted cross entropy on logits:
/// `-(1/N) sum_n sum_l w_l r_ln log p_ln`, gradient w.r.t. the logits.
///
/// Log-probabilities below `ln(log_eps)` are floored and contribute no gradient.
pub fn wce_loss(logits: &Logits, target: &ScoreMap, weights: &ClassWeights, log_eps: f64) -> Result<LossOutput> {
    logits.ensure_same_shape(target, "wce")?;
    let c = logits.channels();
    if weights.len() != c {
        return Err(Error::shape(format!(
            "{} class weights for {c} channels",
            weights.len()
        )));
    }
    let floor = log_eps.ln();
    let n = logits.num_pixels() as f64;
    let logp = log_softmax(logits)?;
    let p = softmax(logits)?;
    let w = weights.as_slice();
    let mut grad = ScoreMap::zeros(logits.width(), logits.height(), c);
    let mut total = 0.0;
    for (i, (lp, pp)) in logp.pixels().zip(p.pixels()).enumerate() {
        let r = target.pixel(i);
        let g = grad.pixel_mut(i);
        let mut active_mass = 0.0;
        for l in 0..c {
            if r[l] == 0.0 {
                continue;
            }
            let wr = w[l] * r[l];
            if lp[l] > floor {
                total -= wr * lp[l];
                active_mass += wr;
                g[l] -= wr;
            } else {
                total -= wr * floor;
            }
        }
        for l in 0..c {
            g[l] = (g[l] + active_mass * pp[l]) / n;
        }
    }
    Ok(LossOutput { value: total / n, grad })
}

/// Two-class weighted cross entropy on foreground probabilities:
/// `-(1/N) sum_n [w r_n log p_n + (1 - r_n) log(1 - p_n)]`.
///
/// Returns the value and the gradient w.r.t. each `p_n`.
pub fn wce_binary(p: &[f64], r: &[f64], w: f64, log_eps: f64) -> Result<(f64, Vec<f64>)> {
    if p.len() != r.len() {
        return Err(Error::shape(format!(
            "{} probabilities vs {} targets",
            p.len(),
            r.len()
        )));
    }
    let n = p.len() as f64;
    let mut total = 0.0;
    let mut grad = Vec::with_capacity(p.len());
    for (&pi, &ri) in p.iter().zip(r) {
        let pos = pi.max(log_eps);
        let neg = (1.0 - pi).max(log_eps);
        total -= w * ri * pos.ln() + (1.0 - ri) * neg.ln();
        let dpos = if pi > log_eps { w * ri / pi } else { 0.0 };
        let dneg = if 1.0 - pi > log_eps {
            (1.0 - ri) / (1.0 - pi)
        } else {
            0.0
        };
        grad.push(-(dpos - dneg) / n);
    }
    Ok((total / n, grad))
}
