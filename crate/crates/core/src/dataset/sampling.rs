use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{DatasetIndex, ImageEntry};
use crate::error::{Error, Result};
use crate::mask_codec::NUM_CLASSES;

/// Classes whose image share in the full index is at least this are held to
/// the subset tolerance; rarer ones are best effort.
const COMMON_SHARE: f64 = 0.01;
const SUBSET_ATTEMPTS: usize = 500;

/// Image-level split into `(train, val)` with `|train| = round(fraction * N)`,
/// clamped so neither side is empty. Both sides keep the original order.
pub fn split(index: &DatasetIndex, train_fraction: f64, seed: u64) -> Result<(DatasetIndex, DatasetIndex)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::config(format!(
            "train fraction {train_fraction} must lie strictly between 0 and 1"
        )));
    }
    let n = index.len();
    if n < 2 {
        return Err(Error::config(format!("cannot split {n} image(s)")));
    }
    let n_train = ((train_fraction * n as f64).round() as usize).clamp(1, n - 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut in_train = vec![false; n];
    for &i in &order[..n_train] {
        in_train[i] = true;
    }
    let pick = |want: bool| {
        DatasetIndex::from_entries(
            index
                .images()
                .iter()
                .zip(&in_train)
                .filter(|(_, &t)| t == want)
                .map(|(e, _)| e.clone())
                .collect(),
        )
    };
    Ok((pick(true), pick(false)))
}

/// Per-class comparison between a subset and its source.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassDeviation {
    pub class_id: usize,
    pub full_share: f64,
    pub subset_share: f64,
    /// `|subset - full| / full`.
    pub relative: f64,
    /// Whether the class is held to the tolerance.
    pub common: bool,
}

#[derive(Debug, Clone)]
pub struct SubsetReport {
    pub index: DatasetIndex,
    pub deviations: Vec<ClassDeviation>,
    /// All common classes are within tolerance.
    pub feasible: bool,
}

impl SubsetReport {
    pub fn worst_common(&self) -> f64 {
        self.deviations
            .iter()
            .filter(|d| d.common)
            .map(|d| d.relative)
            .fold(0.0, f64::max)
    }
}

fn image_shares(images: &[&ImageEntry]) -> Vec<f64> {
    let mut counts = vec![0u64; NUM_CLASSES];
    for e in images {
        for c in e.classes() {
            counts[c as usize] += 1;
        }
    }
    counts
        .into_iter()
        .map(|c| c as f64 / images.len().max(1) as f64)
        .collect()
}

fn deviations(full: &[f64], subset: &[f64]) -> Vec<ClassDeviation> {
    full.iter()
        .zip(subset)
        .enumerate()
        .skip(1)
        .filter(|(_, (&f, &s))| f > 0.0 || s > 0.0)
        .map(|(class_id, (&f, &s))| ClassDeviation {
            class_id,
            full_share: f,
            subset_share: s,
            relative: if f > 0.0 { (s - f).abs() / f } else { f64::INFINITY },
            common: f >= COMMON_SHARE,
        })
        .collect()
}

/// `n` images whose per-class image shares track the full index within a
/// relative `tolerance` for every class present in at least 1% of images.
///
/// Random candidates are drawn until one meets the tolerance or the attempt
/// budget runs out; the best candidate seen is returned either way, with
/// `feasible` reporting whether it met the tolerance.
pub fn diverse_subset(index: &DatasetIndex, n: usize, seed: u64, tolerance: f64) -> Result<SubsetReport> {
    if n == 0 || n > index.len() {
        return Err(Error::config(format!(
            "subset size {n} must be between 1 and {}",
            index.len()
        )));
    }
    let all: Vec<&ImageEntry> = index.images().iter().collect();
    let full = image_shares(&all);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(f64, Vec<usize>)> = None;
    let mut order: Vec<usize> = (0..index.len()).collect();
    for _ in 0..SUBSET_ATTEMPTS {
        order.shuffle(&mut rng);
        let mut chosen = order[..n].to_vec();
        chosen.sort_unstable();
        let picked: Vec<&ImageEntry> = chosen.iter().map(|&i| all[i]).collect();
        let worst = deviations(&full, &image_shares(&picked))
            .iter()
            .filter(|d| d.common)
            .map(|d| d.relative)
            .fold(0.0, f64::max);
        if best.as_ref().is_none_or(|(b, _)| worst < *b) {
            best = Some((worst, chosen));
        }
        if worst <= tolerance {
            break;
        }
    }
    let (worst, chosen) = best.expect("at least one attempt");
    let picked: Vec<&ImageEntry> = chosen.iter().map(|&i| all[i]).collect();
    let devs = deviations(&full, &image_shares(&picked));
    Ok(SubsetReport {
        index: DatasetIndex::from_entries(picked.into_iter().cloned().collect()),
        deviations: devs,
        feasible: worst <= tolerance,
    })
}
