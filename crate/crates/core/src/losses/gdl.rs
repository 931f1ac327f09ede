//! Generalized Dice loss
//!
//! `GDL = 1 - 2 * (sum_l w_l sum_n r_ln p_ln) / (sum_l w_l sum_n (r_ln + p_ln))`
//! with `w_l = 1 / (sum_n r_ln)^2`. A label absent from the target has no
//! volume; its weight is `1 / smoothing^2` instead.

use serde::{Deserialize, Serialize};

use super::{LossOutput, ProbMap, ScoreMap};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GdlParams {
    /// Volume (in pixels) assumed for labels missing from the target.
    pub smoothing: f64,
}

impl Default for GdlParams {
    fn default() -> Self {
        Self { smoothing: 1.0 }
    }
}

impl GdlParams {
    fn empty_weight(&self) -> f64 {
        1.0 / (self.smoothing * self.smoothing)
    }
}

/// Inverse squared label volumes. The flag is set when any label is empty.
pub fn gdl_weights(target: &ScoreMap, params: &GdlParams) -> (Vec<f64>, bool) {
    let c = target.channels();
    let mut volume = vec![0.0; c];
    for px in target.pixels() {
        for (v, r) in volume.iter_mut().zip(px) {
            *v += r;
        }
    }
    let mut degenerate = false;
    let weights = volume
        .into_iter()
        .map(|v| {
            if v > 0.0 {
                1.0 / (v * v)
            } else {
                degenerate = true;
                params.empty_weight()
            }
        })
        .collect();
    (weights, degenerate)
}

/// Weighted intersection and union sums.
fn overlap_sums(p: &ProbMap, r: &ScoreMap, w: &[f64]) -> (f64, f64) {
    let c = p.channels();
    let mut inter = vec![0.0; c];
    let mut union = vec![0.0; c];
    for (pp, rr) in p.pixels().zip(r.pixels()) {
        for l in 0..c {
            inter[l] += rr[l] * pp[l];
            union[l] += rr[l] + pp[l];
        }
    }
    let i = inter.iter().zip(w).map(|(a, b)| a * b).sum();
    let u = union.iter().zip(w).map(|(a, b)| a * b).sum();
    (i, u)
}

pub fn gdl_value(p: &ProbMap, r: &ScoreMap, params: &GdlParams) -> Result<f64> {
    p.ensure_same_shape(r, "gdl")?;
    let (w, _) = gdl_weights(r, params);
    let (i, u) = overlap_sums(p, r, &w);
    if u == 0.0 {
        return Ok(0.0);
    }
    Ok(1.0 - 2.0 * i / u)
}

/// Quotient-rule gradient w.r.t. every `p_ln`:
/// `-2 w_l (r_ln U - I) / U^2`.
pub fn gdl_grad_multiclass(p: &ProbMap, r: &ScoreMap, params: &GdlParams) -> Result<ScoreMap> {
    Ok(gdl_loss(p, r, params)?.grad)
}

/// Value and gradient w.r.t. the probabilities.
pub fn gdl_loss(p: &ProbMap, r: &ScoreMap, params: &GdlParams) -> Result<LossOutput> {
    p.ensure_same_shape(r, "gdl")?;
    let (w, _) = gdl_weights(r, params);
    let (i, u) = overlap_sums(p, r, &w);
    let c = p.channels();
    let mut grad = ScoreMap::zeros(p.width(), p.height(), c);
    if u == 0.0 {
        return Ok(LossOutput { value: 0.0, grad });
    }
    let scale = -2.0 / (u * u);
    for n in 0..p.num_pixels() {
        let rr = r.pixel(n);
        for (l, g) in grad.pixel_mut(n).iter_mut().enumerate() {
            *g = scale * w[l] * (rr[l] * u - i);
        }
    }
    Ok(LossOutput {
        value: 1.0 - 2.0 * i / u,
        grad,
    })
}

/// Two-class gradient in closed form.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoClassGradient {
    /// `dGDL/dp_i` for each foreground probability `p_i`.
    pub grad: Vec<f64>,
    /// Set when one class is absent and its weight was smoothed.
    pub degenerate: bool,
}

/// Closed-form gradient of the two-class GDL w.r.t. the foreground
/// probability `p_i` (background probability `1 - p_i`), with
/// `w1 = 1/(sum r)^2` and `w2 = 1/(N - sum r)^2`:
///
/// ```text
/// dGDL/dp_i = 2 [ (w1^2 - w2^2) (sum_n p_n r_n - r_i sum_n (p_n + r_n))
///                 + N w2 (w1 + w2) (1 - 2 r_i) ]
///             / [ (w1 - w2) sum_n (p_n + r_n) + 2 N w2 ]^2
/// ```
pub fn gdl_grad_two_class(p: &[f64], r: &[f64], params: &GdlParams) -> Result<TwoClassGradient> {
    if p.len() != r.len() {
        return Err(Error::shape(format!(
            "{} probabilities vs {} targets",
            p.len(),
            r.len()
        )));
    }
    let n = p.len() as f64;
    let fg: f64 = r.iter().sum();
    let bg = n - fg;
    let mut degenerate = false;
    let mut weight = |volume: f64| {
        if volume > 0.0 {
            1.0 / (volume * volume)
        } else {
            degenerate = true;
            params.empty_weight()
        }
    };
    let w1 = weight(fg);
    let w2 = weight(bg);
    let sum_pr: f64 = p.iter().zip(r).map(|(a, b)| a * b).sum();
    let sum_p_plus_r: f64 = p.iter().zip(r).map(|(a, b)| a + b).sum();
    let denom = (w1 - w2) * sum_p_plus_r + 2.0 * n * w2;
    let denom_sq = denom * denom;
    let grad = r
        .iter()
        .map(|&ri| {
            2.0 * ((w1 * w1 - w2 * w2) * (sum_pr - ri * sum_p_plus_r) + n * w2 * (w1 + w2) * (1.0 - 2.0 * ri))
                / denom_sq
        })
        .collect();
    Ok(TwoClassGradient { grad, degenerate })
}

/// Packs foreground probabilities/targets into a 2-channel map
/// (channel 0 foreground, channel 1 background).
pub(crate) fn two_channel(values: &[f64]) -> ScoreMap {
    let data = values.iter().flat_map(|&v| [v, 1.0 - v]).collect();
    ScoreMap::from_vec(values.len(), 1, 2, data).expect("length matches")
}
