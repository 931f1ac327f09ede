use super::{Logits, ProbMap, ScoreMap};
use crate::error::{Error, Result};

fn check_finite(logits: &Logits) -> Result<()> {
    if let Some(pos) = logits.data().iter().position(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!(
            "non-finite logit at pixel {}, channel {}",
            pos / logits.channels(),
            pos % logits.channels()
        )));
    }
    Ok(())
}

/// Per-pixel softmax with max subtraction.
pub fn softmax(logits: &Logits) -> Result<ProbMap> {
    check_finite(logits)?;
    let mut out = logits.clone();
    for px in out.data_mut().chunks_exact_mut(logits.channels()) {
        let max = px.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in px.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in px.iter_mut() {
            *v /= sum;
        }
    }
    Ok(out)
}

/// Per-pixel log-softmax, `z - logsumexp(z)`.
pub fn log_softmax(logits: &Logits) -> Result<ScoreMap> {
    check_finite(logits)?;
    let mut out = logits.clone();
    for px in out.data_mut().chunks_exact_mut(logits.channels()) {
        let max = px.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + px.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        for v in px.iter_mut() {
            *v -= lse;
        }
    }
    Ok(out)
}

/// Pulls a gradient w.r.t. probabilities back to the logits:
/// `dz_l = p_l * (g_l - sum_k g_k p_k)`.
pub fn softmax_backward(p: &ProbMap, grad_p: &ScoreMap) -> Result<ScoreMap> {
    p.ensure_same_shape(grad_p, "softmax backward")?;
    let mut out = grad_p.clone();
    let c = p.channels();
    for (gz, pp) in out.data_mut().chunks_exact_mut(c).zip(p.pixels()) {
        let dot: f64 = gz.iter().zip(pp).map(|(g, q)| g * q).sum();
        for (g, q) in gz.iter_mut().zip(pp) {
            *g = q * (*g - dot);
        }
    }
    Ok(out)
}
