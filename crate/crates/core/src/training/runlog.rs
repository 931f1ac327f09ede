use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One line of the run log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    /// Mean batch loss over the epoch.
    pub train_loss: f64,
    /// Training-mode predictions made while the epoch ran.
    pub train_acc: f64,
    pub train_biou: f64,
    /// Inference-mode predictions after the epoch.
    pub val_acc: f64,
    pub val_biou: f64,
    /// Rate of the epoch's first update.
    pub lr: f64,
}

/// Per-epoch metrics of a run plus its bookkeeping.
///
/// Only `records` goes into the JSON-lines file, so two runs of the same
/// configuration write identical logs; wall-clock time lives in the summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub config_fingerprint: String,
    pub lr_schedule: String,
    pub records: Vec<EpochRecord>,
    pub steps: u64,
    pub wall_clock_seconds: f64,
}

impl RunLog {
    pub fn to_jsonl(&self) -> String {
        self.records
            .iter()
            .map(|r| serde_json::to_string(r).expect("record serializes") + "\n")
            .collect()
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_jsonl()).map_err(|e| Error::io(path, e))
    }

    pub fn read_jsonl(path: &Path) -> Result<Vec<EpochRecord>> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| Ok(serde_json::from_str(l)?))
            .collect()
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }

    /// Epoch with the highest validation binary IoU, then accuracy; earliest wins ties.
    pub fn best_epoch(&self) -> Option<usize> {
        let mut best: Option<&EpochRecord> = None;
        for r in &self.records {
            if best.is_none_or(|b| (r.val_biou, r.val_acc) > (b.val_biou, b.val_acc)) {
                best = Some(r);
            }
        }
        best.map(|r| r.epoch)
    }

    /// Fingerprint, schedule, step count and timing as pretty JSON.
    pub fn summary_json(&self) -> String {
        serde_json::json!({
            "config_fingerprint": self.config_fingerprint,
            "lr_schedule": self.lr_schedule,
            "epochs": self.records.len(),
            "steps": self.steps,
            "best_epoch": self.best_epoch(),
            "wall_clock_seconds": self.wall_clock_seconds,
        })
        .to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(epoch: usize, val_biou: f64, val_acc: f64) -> EpochRecord {
        EpochRecord {
            epoch,
            train_loss: 1.0 / epoch as f64,
            train_acc: 0.5,
            train_biou: 0.25,
            val_acc,
            val_biou,
            lr: 0.01,
        }
    }

    #[test]
    fn jsonl_has_exact_keys_and_roundtrips() {
        let log = RunLog {
            config_fingerprint: "x".into(),
            lr_schedule: "s".into(),
            records: vec![record(1, 0.1, 0.9), record(2, 0.3, 0.8)],
            steps: 2,
            wall_clock_seconds: 1.5,
        };
        let text = log.to_jsonl();
        let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        let mut keys: Vec<&str> = first.as_object().unwrap().keys().map(String::as_str).collect();
        keys.sort_unstable();
        assert_eq!(
            keys,
            [
                "epoch",
                "lr",
                "train_acc",
                "train_biou",
                "train_loss",
                "val_acc",
                "val_biou"
            ]
        );
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.jsonl");
        log.write_jsonl(&path).unwrap();
        assert_eq!(RunLog::read_jsonl(&path).unwrap(), log.records);
    }

    #[test]
    fn best_epoch_prefers_iou_then_accuracy_then_earliest() {
        let mut log = RunLog {
            config_fingerprint: String::new(),
            lr_schedule: String::new(),
            records: vec![
                record(1, 0.5, 0.7),
                record(2, 0.5, 0.9),
                record(3, 0.2, 1.0),
                record(4, 0.5, 0.9),
            ],
            steps: 0,
            wall_clock_seconds: 0.0,
        };
        assert_eq!(log.best_epoch(), Some(2));
        log.records.clear();
        assert_eq!(log.best_epoch(), None);
    }
}
