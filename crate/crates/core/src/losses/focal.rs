use serde::{Deserialize, Serialize};

use super::{LossOutput, ProbMap, ScoreMap};
use crate::error::{Error, Result};

/// Focusing parameter of the focal loss, `gamma >= 0`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct FocalGamma(f64);

impl FocalGamma {
    pub fn new(gamma: f64) -> Result<Self> {
        if gamma.is_finite() && gamma >= 0.0 {
            Ok(Self(gamma))
        } else {
            Err(Error::config(format!("focal gamma must be >= 0, got {gamma}")))
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

impl Default for FocalGamma {
    fn default() -> Self {
        Self(2.0)
    }
}

impl TryFrom<f64> for FocalGamma {
    type Error = Error;

    fn try_from(value: f64) -> Result<Self> {
        Self::new(value)
    }
}

impl From<FocalGamma> for f64 {
    fn from(g: FocalGamma) -> f64 {
        g.0
    }
}

/// Mean over pixels of `-(1 - p_t)^gamma * log(p_t)`, where `p_t` is the
/// probability assigned to the true class. The gradient is w.r.t. `p`.
pub fn focal_loss(p: &ProbMap, r: &ScoreMap, gamma: FocalGamma, log_eps: f64) -> Result<LossOutput> {
    p.ensure_same_shape(r, "focal")?;
    let gamma = gamma.get();
    let n = p.num_pixels() as f64;
    let mut grad = ScoreMap::zeros(p.width(), p.height(), p.channels());
    let mut total = 0.0;
    for (i, (pp, rr)) in p.pixels().zip(r.pixels()).enumerate() {
        let pt: f64 = pp.iter().zip(rr).map(|(a, b)| a * b).sum();
        let log_pt = pt.max(log_eps).ln();
        let miss = (1.0 - pt).max(0.0);
        let modulating = if gamma == 0.0 { 1.0 } else { miss.powf(gamma) };
        total -= modulating * log_pt;

        let d_mod = if gamma == 0.0 || miss == 0.0 {
            0.0
        } else {
            gamma * miss.powf(gamma - 1.0) * log_pt
        };
        let d_log = if pt > log_eps { modulating / pt } else { 0.0 };
        let d_pt = (d_mod - d_log) / n;
        for (g, &rl) in grad.pixel_mut(i).iter_mut().zip(rr) {
            *g = rl * d_pt;
        }
    }
    Ok(LossOutput { value: total / n, grad })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::check::{central_difference, max_relative_error};
    use crate::losses::LOG_EPS;

    fn single(pt: f64) -> (ScoreMap, ScoreMap) {
        (
            ScoreMap::from_vec(1, 1, 2, vec![pt, 1.0 - pt]).unwrap(),
            ScoreMap::from_vec(1, 1, 2, vec![1.0, 0.0]).unwrap(),
        )
    }

    fn fl(pt: f64, gamma: f64) -> f64 {
        let (p, r) = single(pt);
        focal_loss(&p, &r, FocalGamma::new(gamma).unwrap(), LOG_EPS)
            .unwrap()
            .value
    }

    #[test]
    fn gamma_zero_is_cross_entropy() {
        let p = ScoreMap::from_vec(3, 1, 3, vec![0.2, 0.5, 0.3, 0.7, 0.2, 0.1, 0.1, 0.1, 0.8]).unwrap();
        let r = ScoreMap::from_vec(3, 1, 3, vec![0.0, 1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
        let v = focal_loss(&p, &r, FocalGamma::new(0.0).unwrap(), LOG_EPS)
            .unwrap()
            .value;
        let ce = -(0.5f64.ln() + 0.7f64.ln() + 0.8f64.ln()) / 3.0;
        assert!((v - ce).abs() < 1e-12);
    }

    #[test]
    fn certain_prediction_is_zero() {
        assert_eq!(fl(1.0, 2.0), 0.0);
        assert_eq!(fl(1.0, 0.0), 0.0);
    }

    #[test]
    fn half_probability_gamma_two() {
        assert!((fl(0.5, 2.0) - 0.25 * 2f64.ln()).abs() < 1e-12);
        assert!((fl(0.5, 2.0) - 0.17329).abs() < 1e-5);
    }

    #[test]
    fn decreasing_in_pt_and_below_ce() {
        let mut last = f64::INFINITY;
        for k in 1..100 {
            let pt = k as f64 / 100.0;
            let v = fl(pt, 2.0);
            assert!(v < last);
            assert!(v < fl(pt, 0.0));
            last = v;
        }
    }

    #[test]
    fn gradient_matches_fd() {
        let p: Vec<f64> = vec![0.1, 0.6, 0.3, 0.25, 0.25, 0.5, 0.9, 0.05, 0.05, 0.3, 0.3, 0.4];
        let r = ScoreMap::from_vec(2, 2, 3, vec![0., 1., 0., 0., 0., 1., 1., 0., 0., 0., 1., 0.]).unwrap();
        for gamma in [0.0, 0.5, 1.0, 2.0, 3.5] {
            let g = FocalGamma::new(gamma).unwrap();
            let analytic = focal_loss(&ScoreMap::from_vec(2, 2, 3, p.clone()).unwrap(), &r, g, LOG_EPS)
                .unwrap()
                .grad;
            let numeric = central_difference(
                |x| {
                    focal_loss(&ScoreMap::from_vec(2, 2, 3, x.to_vec()).unwrap(), &r, g, LOG_EPS)
                        .unwrap()
                        .value
                },
                &p,
                1e-5,
            );
            assert!(max_relative_error(analytic.data(), &numeric) < 1e-6, "gamma {gamma}");
        }
    }

    #[test]
    fn negative_gamma_rejected() {
        assert!(FocalGamma::new(-0.1).is_err());
        assert!(FocalGamma::new(f64::NAN).is_err());
        assert_eq!(FocalGamma::default().get(), 2.0);
    }
}
