//! Pixel accuracy and binary (background vs foreground) IoU.
//!
//! Accuracy rewards a background-only predictor on background-heavy images;
//! binary IoU does not, so the two are always reported together.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask_codec::{ClassMap, NUM_CLASSES};

/// Aggregation rule recorded in every report.
pub const AGGREGATION: &str = "accuracy=pixel-pooled;binary_iou=per-image-mean;per_class_iou=pixel-pooled";

fn ensure_same_dims(pred: &ClassMap, gt: &ClassMap) -> Result<()> {
    if pred.width() != gt.width() || pred.height() != gt.height() {
        return Err(Error::shape(format!(
            "prediction {}x{} vs ground truth {}x{}",
            pred.width(),
            pred.height(),
            gt.width(),
            gt.height()
        )));
    }
    Ok(())
}

fn matching_pixels(pred: &ClassMap, gt: &ClassMap) -> usize {
    pred.labels().iter().zip(gt.labels()).filter(|(a, b)| a == b).count()
}

/// Fraction of pixels whose predicted label equals the ground truth.
pub fn pixel_accuracy(pred: &ClassMap, gt: &ClassMap) -> Result<f64> {
    ensure_same_dims(pred, gt)?;
    Ok(matching_pixels(pred, gt) as f64 / gt.len() as f64)
}

/// IoU of the foreground sets (label != 0), ignoring which class.
///
/// Two empty foregrounds agree perfectly and score 1.
pub fn binary_iou(pred: &ClassMap, gt: &ClassMap) -> Result<f64> {
    ensure_same_dims(pred, gt)?;
    let (mut inter, mut union) = (0usize, 0usize);
    for (&a, &b) in pred.labels().iter().zip(gt.labels()) {
        let (fa, fb) = (a != 0, b != 0);
        inter += (fa && fb) as usize;
        union += (fa || fb) as usize;
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub pixel_accuracy: f64,
    pub binary_iou: f64,
    /// Pooled IoU per class; `None` when the class is absent from both sides.
    pub per_class_iou: Vec<Option<f64>>,
    pub n_images: usize,
    pub gt_pixels_per_class: Vec<u64>,
    pub pred_pixels_per_class: Vec<u64>,
    pub total_pixels: u64,
    /// Aggregation convention plus any caller-supplied configuration tag.
    pub fingerprint: String,
}

impl MetricsReport {
    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Mean of the defined per-class IoUs, background excluded.
    pub fn mean_foreground_iou(&self) -> Option<f64> {
        let defined: Vec<f64> = self.per_class_iou.iter().skip(1).flatten().copied().collect();
        (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64)
    }

    pub fn write_csv<W: Write>(&self, model: &str, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["model", "n_images", "pixel_accuracy", "binary_iou"])?;
        w.write_record([
            model.to_string(),
            self.n_images.to_string(),
            format!("{:.6}", self.pixel_accuracy),
            format!("{:.6}", self.binary_iou),
        ])?;
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

/// Pixel-pooled accuracy, per-image mean binary IoU and pooled per-class IoU.
pub fn evaluate_pair_set(preds: &[ClassMap], gts: &[ClassMap]) -> Result<MetricsReport> {
    if preds.len() != gts.len() {
        return Err(Error::Pairing(format!(
            "{} predictions vs {} ground truths",
            preds.len(),
            gts.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::EmptyInput("no image pairs to evaluate".into()));
    }
    let mut correct = 0u64;
    let mut total = 0u64;
    let mut iou_sum = 0.0;
    let mut inter = vec![0u64; NUM_CLASSES];
    let mut union = vec![0u64; NUM_CLASSES];
    let mut gt_count = vec![0u64; NUM_CLASSES];
    let mut pred_count = vec![0u64; NUM_CLASSES];
    for (pred, gt) in preds.iter().zip(gts) {
        ensure_same_dims(pred, gt)?;
        correct += matching_pixels(pred, gt) as u64;
        total += gt.len() as u64;
        iou_sum += binary_iou(pred, gt)?;
        for (&a, &b) in pred.labels().iter().zip(gt.labels()) {
            let (a, b) = (a as usize, b as usize);
            pred_count[a] += 1;
            gt_count[b] += 1;
            if a == b {
                inter[a] += 1;
                union[a] += 1;
            } else {
                union[a] += 1;
                union[b] += 1;
            }
        }
    }
    let per_class_iou = inter
        .iter()
        .zip(&union)
        .map(|(&i, &u)| (u > 0).then(|| i as f64 / u as f64))
        .collect();
    Ok(MetricsReport {
        pixel_accuracy: correct as f64 / total as f64,
        binary_iou: iou_sum / preds.len() as f64,
        per_class_iou,
        n_images: preds.len(),
        gt_pixels_per_class: gt_count,
        pred_pixels_per_class: pred_count,
        total_pixels: total,
        fingerprint: AGGREGATION.to_string(),
    })
}
