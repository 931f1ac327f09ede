use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::losses::{ClassWeights, FocalGamma, LossFunction, LossKind, WeightClip};
use crate::mask_codec::{ClassMap, NUM_CLASSES};
use crate::models::{build_by_name, ModelSpec};

use super::optim::AdamParams;

/// Which part of the staged method a run performs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    /// Many epochs on one example, to prove the model can fit at all.
    OverfitOne,
    /// Train/val split of a subset with class proportions close to the full set.
    OverfitSubset,
    /// Train/val split of the whole dataset.
    Full,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::OverfitOne => "overfit-one",
            Stage::OverfitSubset => "overfit-subset",
            Stage::Full => "full",
        }
    }
}

impl FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        [Stage::OverfitOne, Stage::OverfitSubset, Stage::Full]
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| format!("unknown stage {s:?} (expected overfit-one, overfit-subset or full)"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

impl OptimizerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam => "adam",
        }
    }
}

impl FromStr for OptimizerKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::Adam),
            _ => Err(format!("unknown optimizer {s:?} (expected sgd or adam)")),
        }
    }
}

/// Where cross-entropy class weights come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightSource {
    Uniform,
    /// Inverse ground-truth pixel frequencies of the training set, clipped.
    Frequency,
}

impl WeightSource {
    pub fn as_str(self) -> &'static str {
        match self {
            WeightSource::Uniform => "uniform",
            WeightSource::Frequency => "frequency",
        }
    }
}

impl FromStr for WeightSource {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "uniform" => Ok(WeightSource::Uniform),
            "frequency" => Ok(WeightSource::Frequency),
            _ => Err(format!("unknown weight source {s:?} (expected uniform or frequency)")),
        }
    }
}

/// Training run settings, read from a flat `key = value` file whose keys are
/// the field names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// `segnet`, `segnet-w<d>`, `unet` or `unet-d<depth>-c<base>`.
    pub model: String,
    pub stage: Stage,
    /// Toy dataset or annotation directory; the CLI falls back to its environment default.
    pub data_dir: Option<PathBuf>,
    /// Images and label maps are resized to `image_size x image_size`.
    pub image_size: usize,
    pub num_classes: usize,
    pub loss: LossKind,
    pub gamma: f64,
    pub class_weights: WeightSource,
    pub weight_clip_min: f64,
    pub weight_clip_max: f64,
    pub optimizer: OptimizerKind,
    pub lr: f64,
    pub decay: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub split_fraction: f64,
    /// Images drawn for the `overfit-subset` stage.
    pub subset_size: usize,
    /// Largest accepted deviation of a common class's image share in the subset.
    pub subset_tolerance: f64,
    /// Dataset position of the example used by `overfit-one`.
    pub example_index: usize,
    /// Inference-mode pixel accuracy an `overfit-one` run must reach.
    pub success_threshold: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let adam = AdamParams::default();
        let clip = WeightClip::default();
        Self {
            model: "segnet".into(),
            stage: Stage::OverfitOne,
            data_dir: None,
            image_size: 256,
            num_classes: NUM_CLASSES,
            loss: LossKind::Focal,
            gamma: FocalGamma::default().get(),
            class_weights: WeightSource::Uniform,
            weight_clip_min: clip.min,
            weight_clip_max: clip.max,
            optimizer: OptimizerKind::Sgd,
            lr: 0.01,
            decay: 1e-6,
            adam_beta1: adam.beta1,
            adam_beta2: adam.beta2,
            adam_eps: adam.eps,
            batch_size: 1,
            epochs: 300,
            seed: 42,
            split_fraction: 0.9,
            subset_size: 32,
            subset_tolerance: 0.2,
            example_index: 0,
            success_threshold: 0.99,
        }
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value.parse::<T>().map_err(|e| Error::InvalidSetting {
        key: key.to_string(),
        message: format!("{value:?}: {e}"),
    })
}

impl TrainConfig {
    pub const KEYS: [&'static str; 24] = [
        "model",
        "stage",
        "data_dir",
        "image_size",
        "num_classes",
        "loss",
        "gamma",
        "class_weights",
        "weight_clip_min",
        "weight_clip_max",
        "optimizer",
        "lr",
        "decay",
        "adam_beta1",
        "adam_beta2",
        "adam_eps",
        "batch_size",
        "epochs",
        "seed",
        "split_fraction",
        "subset_size",
        "subset_tolerance",
        "example_index",
        "success_threshold",
    ];

    /// Sets one field from its textual form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value;
        match key {
            "model" => self.model = v.to_string(),
            "stage" => self.stage = parse_value(key, v)?,
            "data_dir" => self.data_dir = (!v.is_empty()).then(|| PathBuf::from(v)),
            "image_size" => self.image_size = parse_value(key, v)?,
            "num_classes" => self.num_classes = parse_value(key, v)?,
            "loss" => self.loss = parse_value(key, v)?,
            "gamma" => self.gamma = parse_value(key, v)?,
            "class_weights" => self.class_weights = parse_value(key, v)?,
            "weight_clip_min" => self.weight_clip_min = parse_value(key, v)?,
            "weight_clip_max" => self.weight_clip_max = parse_value(key, v)?,
            "optimizer" => self.optimizer = parse_value(key, v)?,
            "lr" => self.lr = parse_value(key, v)?,
            "decay" => self.decay = parse_value(key, v)?,
            "adam_beta1" => self.adam_beta1 = parse_value(key, v)?,
            "adam_beta2" => self.adam_beta2 = parse_value(key, v)?,
            "adam_eps" => self.adam_eps = parse_value(key, v)?,
            "batch_size" => self.batch_size = parse_value(key, v)?,
            "epochs" => self.epochs = parse_value(key, v)?,
            "seed" => self.seed = parse_value(key, v)?,
            "split_fraction" => self.split_fraction = parse_value(key, v)?,
            "subset_size" => self.subset_size = parse_value(key, v)?,
            "subset_tolerance" => self.subset_tolerance = parse_value(key, v)?,
            "example_index" => self.example_index = parse_value(key, v)?,
            "success_threshold" => self.success_threshold = parse_value(key, v)?,
            _ => {
                return Err(Error::InvalidSetting {
                    key: key.to_string(),
                    message: "unknown key".into(),
                })
            }
        }
        Ok(())
    }

    /// Parses `key = value` lines over the defaults; `#` starts a comment.
    /// Unknown or repeated keys and unparsable values are rejected, then the
    /// result is validated.
    pub fn parse(text: &str) -> Result<Self> {
        let mut config = Self::default();
        let mut seen = std::collections::HashSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::InvalidSetting {
                key: line.to_string(),
                message: format!("line {} is not `key = value`", n + 1),
            })?;
            let key = key.trim();
            if !seen.insert(key.to_string()) {
                return Err(Error::InvalidSetting {
                    key: key.to_string(),
                    message: format!("repeated on line {}", n + 1),
                });
            }
            config.set(key, value.trim())?;
        }
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Semantic checks; the model name is resolved here as well.
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return fail(format!("lr must be > 0, got {}", self.lr));
        }
        if !(self.decay >= 0.0 && self.decay.is_finite()) {
            return fail(format!("decay must be >= 0, got {}", self.decay));
        }
        if self.epochs == 0 {
            return fail("epochs must be at least 1".into());
        }
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1".into());
        }
        if !(self.split_fraction > 0.0 && self.split_fraction < 1.0) {
            return fail(format!(
                "split_fraction must lie in (0, 1), got {}",
                self.split_fraction
            ));
        }
        if !(0.0 < self.weight_clip_min && self.weight_clip_min <= self.weight_clip_max) {
            return fail(format!(
                "weight clip bounds ({}, {}) must satisfy 0 < min <= max",
                self.weight_clip_min, self.weight_clip_max
            ));
        }
        if !((0.0..1.0).contains(&self.adam_beta1) && (0.0..1.0).contains(&self.adam_beta2) && self.adam_eps > 0.0) {
            return fail("adam betas must lie in [0, 1) and adam_eps must be > 0".into());
        }
        if !(0.0..=1.0).contains(&self.success_threshold) {
            return fail(format!("success_threshold {} outside [0, 1]", self.success_threshold));
        }
        if self.subset_size == 0 || self.subset_tolerance < 0.0 {
            return fail("subset_size must be positive and subset_tolerance non-negative".into());
        }
        FocalGamma::new(self.gamma)?;
        self.model_spec()?;
        Ok(())
    }

    /// The architecture at `image_size x image_size`.
    pub fn model_spec(&self) -> Result<ModelSpec> {
        build_by_name(&self.model, self.num_classes)
            .map_err(|e| match e {
                Error::Config(m) if m.starts_with("unknown model") => Error::InvalidSetting {
                    key: "model".into(),
                    message: m,
                },
                other => other,
            })?
            .with_input(self.image_size, self.image_size)
            .map_err(|e| match e {
                Error::Shape(m) => Error::Config(format!("image_size {}: {m}", self.image_size)),
                other => other,
            })
    }

    pub fn adam_params(&self) -> AdamParams {
        AdamParams {
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
        }
    }

    /// Loss for this run; frequency weights come from the training targets.
    pub fn loss_function(&self, train_targets: &[&ClassMap]) -> Result<LossFunction> {
        let mut loss = LossFunction::new(self.loss, self.num_classes);
        loss.gamma = FocalGamma::new(self.gamma)?;
        if self.class_weights == WeightSource::Frequency {
            let mut counts = vec![0u64; self.num_classes];
            let mut total = 0u64;
            for t in train_targets {
                for &l in t.labels() {
                    let slot = counts
                        .get_mut(l as usize)
                        .ok_or_else(|| Error::config(format!("label {l} does not fit {} classes", self.num_classes)))?;
                    *slot += 1;
                }
                total += t.len() as u64;
            }
            let freqs: Vec<f64> = counts.iter().map(|&c| c as f64 / total.max(1) as f64).collect();
            let clip = WeightClip {
                min: self.weight_clip_min,
                max: self.weight_clip_max,
            };
            loss.weights = ClassWeights::from_frequencies(&freqs, clip);
        }
        Ok(loss)
    }

    /// Every key in [`Self::KEYS`] order; parses back to the same config.
    pub fn to_text(&self) -> String {
        let mut out = String::from("# resolved training configuration\n");
        for key in Self::KEYS {
            let value = match key {
                "model" => self.model.clone(),
                "stage" => self.stage.as_str().into(),
                "data_dir" => self
                    .data_dir
                    .as_ref()
                    .map(|p| p.display().to_string())
                    .unwrap_or_default(),
                "image_size" => self.image_size.to_string(),
                "num_classes" => self.num_classes.to_string(),
                "loss" => self.loss.as_str().into(),
                "gamma" => self.gamma.to_string(),
                "class_weights" => self.class_weights.as_str().into(),
                "weight_clip_min" => self.weight_clip_min.to_string(),
                "weight_clip_max" => self.weight_clip_max.to_string(),
                "optimizer" => self.optimizer.as_str().into(),
                "lr" => self.lr.to_string(),
                "decay" => self.decay.to_string(),
                "adam_beta1" => self.adam_beta1.to_string(),
                "adam_beta2" => self.adam_beta2.to_string(),
                "adam_eps" => self.adam_eps.to_string(),
                "batch_size" => self.batch_size.to_string(),
                "epochs" => self.epochs.to_string(),
                "seed" => self.seed.to_string(),
                "split_fraction" => self.split_fraction.to_string(),
                "subset_size" => self.subset_size.to_string(),
                "subset_tolerance" => self.subset_tolerance.to_string(),
                "example_index" => self.example_index.to_string(),
                "success_threshold" => self.success_threshold.to_string(),
                _ => unreachable!("every key is listed"),
            };
            let _ = writeln!(out, "{key} = {value}");
        }
        out
    }

    /// sha256 of the resolved text, hex.
    pub fn fingerprint(&self) -> String {
        crate::models::hex(&Sha256::digest(self.to_text().as_bytes()))
    }
}
