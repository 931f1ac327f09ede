//! Finite-difference verification of the analytic loss gradients.
//!
//! The oracles only ever call the loss *values*; analytic gradients are
//! compared against central differences of those values.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::gdl::two_channel;
use super::{
    focal_loss, gdl_grad_multiclass, gdl_grad_two_class, gdl_value, softmax, wce_loss, ClassWeights, FocalGamma,
    GdlParams, ScoreMap, LOG_EPS,
};

/// Default central-difference step.
pub const FD_STEP: f64 = 1e-5;
/// Maximum accepted relative error between analytic and numeric gradients.
pub const FD_TOLERANCE: f64 = 1e-4;
/// Magnitude below which errors are measured absolutely.
const REL_FLOOR: f64 = 1e-6;

/// Central differences `(f(x + h e_i) - f(x - h e_i)) / 2h` for every coordinate.
pub fn central_difference(f: impl Fn(&[f64]) -> f64, x: &[f64], step: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + step;
            let plus = f(&probe);
            probe[i] = x[i] - step;
            let minus = f(&probe);
            probe[i] = x[i];
            (plus - minus) / (2.0 * step)
        })
        .collect()
}

/// `max_i |a_i - b_i| / max(|a_i|, |b_i|, 1e-6)`.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, b)| (a - b).abs() / a.abs().max(b.abs()).max(REL_FLOOR))
        .fold(0.0, f64::max)
}

/// `||a - b|| / max(||a||, ||b||)`; zero when both vectors vanish.
///
/// Suited to network-sized gradients, where many entries cancel to nearly
/// zero and elementwise ratios measure only rounding noise.
pub fn normwise_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: f64 = analytic
        .iter()
        .zip(numeric)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    let scale = norm(analytic).max(norm(numeric));
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// Gradients covered by the suite.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CheckedGradient {
    Wce,
    GdlTwoClass,
    GdlMulticlass,
    Focal,
}

impl CheckedGradient {
    pub const ALL: [CheckedGradient; 4] = [
        CheckedGradient::Wce,
        CheckedGradient::GdlTwoClass,
        CheckedGradient::GdlMulticlass,
        CheckedGradient::Focal,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CheckedGradient::Wce => "wce",
            CheckedGradient::GdlTwoClass => "gdl-two-class",
            CheckedGradient::GdlMulticlass => "gdl-multiclass",
            CheckedGradient::Focal => "focal",
        }
    }
}

impl std::str::FromStr for CheckedGradient {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Self::ALL
            .into_iter()
            .find(|g| g.name() == s)
            .ok_or_else(|| format!("unknown gradient {s:?}"))
    }
}

#[derive(Debug, Clone)]
pub struct GradcheckOptions {
    pub seed: u64,
    pub trials: usize,
    pub step: f64,
    pub tolerance: f64,
    /// Negates one analytic gradient; a negative control for the suite itself.
    pub inject_fault: Option<CheckedGradient>,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            trials: 100,
            step: FD_STEP,
            tolerance: FD_TOLERANCE,
            inject_fault: None,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GradcheckEntry {
    pub gradient: CheckedGradient,
    pub trials: usize,
    pub max_relative_error: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradcheckReport {
    pub tolerance: f64,
    pub entries: Vec<GradcheckEntry>,
}

impl GradcheckReport {
    pub fn all_passed(&self) -> bool {
        self.entries.iter().all(|e| e.passed)
    }

    pub fn entry(&self, gradient: CheckedGradient) -> Option<&GradcheckEntry> {
        self.entries.iter().find(|e| e.gradient == gradient)
    }
}

/// One random problem instance, at most 8x8 pixels and 5 channels.
pub struct RandomCase {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub logits: ScoreMap,
    pub target: ScoreMap,
}

impl RandomCase {
    pub fn generate(rng: &mut impl Rng, channels: Option<usize>) -> Self {
        let width = rng.random_range(1..=8);
        let height = rng.random_range(1..=8);
        let channels = channels.unwrap_or_else(|| rng.random_range(2..=5));
        let n = width * height;
        // bounded logits keep probabilities away from 0, where the O(h^2)
        // truncation error of central differences blows up like 1/p^2
        let z: Vec<f64> = (0..n * channels).map(|_| rng.random_range(-2.0..2.0)).collect();
        let mut t = vec![0.0; n * channels];
        for i in 0..n {
            t[i * channels + rng.random_range(0..channels)] = 1.0;
        }
        Self {
            width,
            height,
            channels,
            logits: ScoreMap::from_vec(width, height, channels, z).unwrap(),
            target: ScoreMap::from_vec(width, height, channels, t).unwrap(),
        }
    }

    fn map(&self, values: &[f64]) -> ScoreMap {
        ScoreMap::from_vec(self.width, self.height, self.channels, values.to_vec()).unwrap()
    }
}

fn check_case(which: CheckedGradient, case: &RandomCase, rng: &mut impl Rng, step: f64) -> (Vec<f64>, Vec<f64>) {
    let gdl = GdlParams::default();
    match which {
        CheckedGradient::Wce => {
            let weights = ClassWeights::new((0..case.channels).map(|_| rng.random_range(0.1..10.0)).collect()).unwrap();
            let analytic = wce_loss(&case.logits, &case.target, &weights, LOG_EPS)
                .unwrap()
                .grad
                .into_vec();
            let numeric = central_difference(
                |x| wce_loss(&case.map(x), &case.target, &weights, LOG_EPS).unwrap().value,
                case.logits.data(),
                step,
            );
            (analytic, numeric)
        }
        CheckedGradient::GdlTwoClass => {
            let p = softmax(&case.logits).unwrap();
            let fg: Vec<f64> = p.pixels().map(|px| px[0]).collect();
            let r: Vec<f64> = case.target.pixels().map(|px| px[0]).collect();
            let analytic = gdl_grad_two_class(&fg, &r, &gdl).unwrap().grad;
            let target = two_channel(&r);
            let numeric = central_difference(|x| gdl_value(&two_channel(x), &target, &gdl).unwrap(), &fg, step);
            (analytic, numeric)
        }
        CheckedGradient::GdlMulticlass => {
            let p = softmax(&case.logits).unwrap();
            let analytic = gdl_grad_multiclass(&p, &case.target, &gdl).unwrap().into_vec();
            let numeric = central_difference(|x| gdl_value(&case.map(x), &case.target, &gdl).unwrap(), p.data(), step);
            (analytic, numeric)
        }
        CheckedGradient::Focal => {
            let gamma = FocalGamma::new(rng.random_range(0.0..4.0)).unwrap();
            let p = softmax(&case.logits).unwrap();
            let analytic = focal_loss(&p, &case.target, gamma, LOG_EPS).unwrap().grad.into_vec();
            let numeric = central_difference(
                |x| focal_loss(&case.map(x), &case.target, gamma, LOG_EPS).unwrap().value,
                p.data(),
                step,
            );
            (analytic, numeric)
        }
    }
}

/// Runs every gradient against central differences on `trials` random cases.
pub fn run_gradcheck(options: &GradcheckOptions) -> GradcheckReport {
    let entries = CheckedGradient::ALL
        .into_iter()
        .enumerate()
        .map(|(k, which)| {
            let mut rng = ChaCha8Rng::seed_from_u64(options.seed.wrapping_add(k as u64 * 7919));
            let channels = (which == CheckedGradient::GdlTwoClass).then_some(2);
            let mut worst = 0.0f64;
            for _ in 0..options.trials {
                let case = RandomCase::generate(&mut rng, channels);
                let (mut analytic, numeric) = check_case(which, &case, &mut rng, options.step);
                if options.inject_fault == Some(which) {
                    analytic.iter_mut().for_each(|g| *g = -*g);
                }
                worst = worst.max(max_relative_error(&analytic, &numeric));
            }
            GradcheckEntry {
                gradient: which,
                trials: options.trials,
                max_relative_error: worst,
                passed: worst <= options.tolerance,
            }
        })
        .collect();
    GradcheckReport {
        tolerance: options.tolerance,
        entries,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fd_of_quadratic() {
        let g = central_difference(|x| x[0] * x[0] + 3.0 * x[1], &[2.0, -1.0], 1e-5);
        assert!((g[0] - 4.0).abs() < 1e-8);
        assert!((g[1] - 3.0).abs() < 1e-8);
    }

    #[test]
    fn normwise_error() {
        assert_eq!(normwise_relative_error(&[0.0, 0.0], &[0.0, 0.0]), 0.0);
        assert!((normwise_relative_error(&[3.0, 4.0], &[3.0, 4.5]) - 0.5 / 4.5f64.hypot(3.0)).abs() < 1e-12);
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(max_relative_error(&[1e-9], &[2e-9]), 1e-9 / 1e-6);
        assert!((max_relative_error(&[1.0], &[1.1]) - 0.1 / 1.1).abs() < 1e-12);
    }

    #[test]
    fn suite_passes_and_is_reproducible() {
        let opts = GradcheckOptions {
            trials: 10,
            ..Default::default()
        };
        let a = run_gradcheck(&opts);
        assert!(a.all_passed(), "{a:?}");
        let b = run_gradcheck(&opts);
        for (x, y) in a.entries.iter().zip(&b.entries) {
            assert_eq!(x.max_relative_error.to_bits(), y.max_relative_error.to_bits());
        }
    }

    #[test]
    fn injected_fault_is_caught() {
        let report = run_gradcheck(&GradcheckOptions {
            trials: 3,
            inject_fault: Some(CheckedGradient::Focal),
            ..Default::default()
        });
        assert!(!report.entry(CheckedGradient::Focal).unwrap().passed);
        assert!(report.entry(CheckedGradient::Wce).unwrap().passed);
    }
}
