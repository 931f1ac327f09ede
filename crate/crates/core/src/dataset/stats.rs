use std::collections::BTreeMap;

use serde::Serialize;

use super::DatasetIndex;
use crate::error::{Error, Result};
use crate::mask_codec::{PixelOrder, NUM_CLASSES};

/// Per-class occurrence counts, indexed by class id (slot 0 unused).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassHistogram {
    pub n_images: usize,
    /// Images containing the class at least once.
    pub image_counts: Vec<u64>,
    /// Annotation rows (mask instances) of the class.
    pub instance_counts: Vec<u64>,
}

impl ClassHistogram {
    /// Fraction of images that contain `class_id`.
    pub fn image_share(&self, class_id: usize) -> f64 {
        self.image_counts[class_id] as f64 / self.n_images as f64
    }

    /// `class_id`'s share of all image-level occurrences.
    pub fn occurrence_share(&self, class_id: usize) -> f64 {
        let total: u64 = self.image_counts.iter().sum();
        if total == 0 {
            0.0
        } else {
            self.image_counts[class_id] as f64 / total as f64
        }
    }

    /// Present classes sorted by descending image count (ties by id).
    pub fn ranked(&self) -> Vec<(usize, u64)> {
        let mut v: Vec<(usize, u64)> = self
            .image_counts
            .iter()
            .enumerate()
            .skip(1)
            .filter(|(_, &c)| c > 0)
            .map(|(i, &c)| (i, c))
            .collect();
        v.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        v
    }
}

pub fn class_histogram(index: &DatasetIndex) -> Result<ClassHistogram> {
    if index.is_empty() {
        return Err(Error::EmptyInput("empty dataset".into()));
    }
    let mut image_counts = vec![0u64; NUM_CLASSES];
    let mut instance_counts = vec![0u64; NUM_CLASSES];
    for entry in index.images() {
        for c in entry.classes() {
            image_counts[c as usize] += 1;
        }
        for r in &entry.records {
            instance_counts[r.class_id as usize] += 1;
        }
    }
    Ok(ClassHistogram {
        n_images: index.len(),
        image_counts,
        instance_counts,
    })
}

/// Image widths and heights as exact-value histograms.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SizeHistogram {
    pub widths: BTreeMap<usize, u64>,
    pub heights: BTreeMap<usize, u64>,
    pub min_width: usize,
    pub max_width: usize,
    pub min_height: usize,
    pub max_height: usize,
}

impl SizeHistogram {
    /// Largest difference between any two image widths.
    pub fn width_spread(&self) -> usize {
        self.max_width - self.min_width
    }

    pub fn height_spread(&self) -> usize {
        self.max_height - self.min_height
    }
}

pub fn size_histogram(index: &DatasetIndex) -> Result<SizeHistogram> {
    if index.is_empty() {
        return Err(Error::EmptyInput("empty dataset".into()));
    }
    let mut widths = BTreeMap::new();
    let mut heights = BTreeMap::new();
    for e in index.images() {
        *widths.entry(e.width).or_insert(0) += 1;
        *heights.entry(e.height).or_insert(0) += 1;
    }
    Ok(SizeHistogram {
        min_width: *widths.keys().next().unwrap(),
        max_width: *widths.keys().next_back().unwrap(),
        min_height: *heights.keys().next().unwrap(),
        max_height: *heights.keys().next_back().unwrap(),
        widths,
        heights,
    })
}

/// `f_c` = mean over images of the fraction of pixels labelled `c` after
/// condensing, background included.
pub fn class_pixel_frequencies(index: &DatasetIndex, order: PixelOrder) -> Result<Vec<f64>> {
    if index.is_empty() {
        return Err(Error::EmptyInput("empty dataset".into()));
    }
    let mut sums = vec![0.0; NUM_CLASSES];
    for entry in index.images() {
        let map = entry.class_map(order)?;
        let mut counts = [0u64; NUM_CLASSES];
        for &l in map.labels() {
            counts[l as usize] += 1;
        }
        let total = map.len() as f64;
        for (s, c) in sums.iter_mut().zip(counts) {
            *s += c as f64 / total;
        }
    }
    let n = index.len() as f64;
    Ok(sums.into_iter().map(|s| s / n).collect())
}
