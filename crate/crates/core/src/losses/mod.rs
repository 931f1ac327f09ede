//! Class-imbalance-aware segmentation losses with analytic gradients.
//!
//! All maps are stored pixel-major (`data[n * channels + l]`, pixels in
//! row-major order) and every reduction walks pixels in that order in double
//! precision, so results are bit-reproducible.
//!
//! Gradient conventions:
//! - weighted cross entropy differentiates w.r.t. logits (softmax fused in),
//! - generalized Dice and focal loss differentiate w.r.t. probabilities;
//!   [`softmax_backward`] composes the softmax Jacobian on top.

pub mod check;
mod focal;
mod gdl;
mod softmax;
mod wce;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask_codec::ClassMap;

pub use focal::{focal_loss, FocalGamma};
pub use gdl::{gdl_grad_multiclass, gdl_grad_two_class, gdl_loss, gdl_value, gdl_weights, GdlParams, TwoClassGradient};
pub use softmax::{log_softmax, softmax, softmax_backward};
pub use wce::{wce_binary, wce_loss, ClassWeights, WeightClip};

/// Floor applied to log arguments.
pub const LOG_EPS: f64 = 1e-12;

/// Per-pixel score grid over a fixed channel count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreMap {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

/// Pre-activation network output.
pub type Logits = ScoreMap;
/// Softmax output; each pixel sums to one.
pub type ProbMap = ScoreMap;

impl ScoreMap {
    pub fn zeros(width: usize, height: usize, channels: usize) -> Self {
        Self {
            width,
            height,
            channels,
            data: vec![0.0; width * height * channels],
        }
    }

    pub fn from_vec(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height * channels {
            return Err(Error::shape(format!(
                "{} values for {width}x{height}x{channels}",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn num_pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn pixel(&self, n: usize) -> &[f64] {
        &self.data[n * self.channels..(n + 1) * self.channels]
    }

    #[inline]
    pub fn pixel_mut(&mut self, n: usize) -> &mut [f64] {
        &mut self.data[n * self.channels..(n + 1) * self.channels]
    }

    pub fn pixels(&self) -> std::slice::ChunksExact<'_, f64> {
        self.data.chunks_exact(self.channels)
    }

    pub fn same_shape(&self, other: &ScoreMap) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    pub(crate) fn ensure_same_shape(&self, other: &ScoreMap, what: &str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::shape(format!(
                "{what}: {}x{}x{} vs {}x{}x{}",
                self.width, self.height, self.channels, other.width, other.height, other.channels
            )))
        }
    }

    /// Per-pixel argmax; ties go to the lowest class index.
    pub fn argmax(&self) -> ClassMap {
        let labels = self
            .pixels()
            .map(|px| {
                let mut best = 0;
                for (l, &v) in px.iter().enumerate().skip(1) {
                    if v > px[best] {
                        best = l;
                    }
                }
                best as u8
            })
            .collect();
        ClassMap::from_labels(self.width, self.height, labels).expect("argmax over at most 47 channels")
    }
}

/// Loss value together with its gradient.
#[derive(Debug, Clone)]
pub struct LossOutput {
    pub value: f64,
    pub grad: ScoreMap,
}

/// Which loss drives training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    /// Weighted softmax cross entropy; unit weights give plain cross entropy.
    Wce,
    /// Generalized Dice loss with inverse squared volume weights.
    Gdl,
    Focal,
}

impl LossKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LossKind::Wce => "wce",
            LossKind::Gdl => "gdl",
            LossKind::Focal => "focal",
        }
    }
}

impl std::fmt::Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for LossKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "wce" | "ce" => Ok(LossKind::Wce),
            "gdl" => Ok(LossKind::Gdl),
            "focal" => Ok(LossKind::Focal),
            other => Err(format!("unknown loss {other:?} (expected wce, gdl or focal)")),
        }
    }
}

/// Everything needed to evaluate a [`LossKind`] on logits.
#[derive(Debug, Clone)]
pub struct LossFunction {
    pub kind: LossKind,
    pub weights: ClassWeights,
    pub gamma: FocalGamma,
    pub gdl: GdlParams,
    pub log_eps: f64,
}

impl LossFunction {
    pub fn new(kind: LossKind, num_classes: usize) -> Self {
        Self {
            kind,
            weights: ClassWeights::uniform(num_classes),
            gamma: FocalGamma::default(),
            gdl: GdlParams::default(),
            log_eps: LOG_EPS,
        }
    }

    /// Loss value and gradient w.r.t. the logits.
    pub fn evaluate(&self, logits: &Logits, target: &ScoreMap) -> Result<LossOutput> {
        logits.ensure_same_shape(target, "loss input vs target")?;
        match self.kind {
            LossKind::Wce => wce_loss(logits, target, &self.weights, self.log_eps),
            LossKind::Gdl => {
                let p = softmax(logits)?;
                let out = gdl_loss(&p, target, &self.gdl)?;
                Ok(LossOutput {
                    value: out.value,
                    grad: softmax_backward(&p, &out.grad)?,
                })
            }
            LossKind::Focal => {
                let p = softmax(logits)?;
                let out = focal_loss(&p, target, self.gamma, self.log_eps)?;
                Ok(LossOutput {
                    value: out.value,
                    grad: softmax_backward(&p, &out.grad)?,
                })
            }
        }
    }
}
