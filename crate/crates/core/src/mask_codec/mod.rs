//! Building per-image class maps from run-length annotations.
//!
//! Each annotation row holds one run-length descriptor for one garment
//! instance. Descriptors are decoded into binary masks, the masks of an image
//! are condensed into a single label grid (last annotation wins on overlap)
//! and the grid is resized with nearest-neighbour sampling.

mod png_io;
mod rle;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::ScoreMap;

pub use png_io::{read_class_map_png, write_class_map_png, write_overlay_png, PALETTE, PALETTE_HEX};
pub use rle::{parse_rle, rle_decode, rle_encode, RlePairs, Run};

/// Number of label values including background.
pub const NUM_CLASSES: usize = 47;
/// Largest foreground class id.
pub const MAX_CLASS_ID: u8 = 46;
/// Side length every class map is standardized to.
pub const STANDARD_SIZE: usize = 256;

/// How 1-indexed run positions map onto pixel coordinates.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PixelOrder {
    /// Position 1 is the top-left pixel, positions run down each column first.
    #[default]
    ColumnMajor,
    RowMajor,
}

impl PixelOrder {
    /// Maps a 1-indexed position to `(x, y)`.
    #[inline]
    pub fn coords(self, pos: usize, width: usize, height: usize) -> (usize, usize) {
        let i = pos - 1;
        match self {
            PixelOrder::ColumnMajor => (i / height, i % height),
            PixelOrder::RowMajor => (i % width, i / width),
        }
    }

    /// Maps `(x, y)` to a 1-indexed position.
    #[inline]
    pub fn position(self, x: usize, y: usize, width: usize, height: usize) -> usize {
        match self {
            PixelOrder::ColumnMajor => x * height + y + 1,
            PixelOrder::RowMajor => y * width + x + 1,
        }
    }
}

impl std::str::FromStr for PixelOrder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "column-major" | "col" | "column" => Ok(PixelOrder::ColumnMajor),
            "row-major" | "row" => Ok(PixelOrder::RowMajor),
            other => Err(Error::config(format!("unknown pixel order {other:?}"))),
        }
    }
}

/// One Z-slice of an instance stack: a `width x height` grid of 0/1.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    /// Builds a mask from row-major 0/1 values; anything else is rejected.
    pub fn from_values(width: usize, height: usize, values: &[u8]) -> Result<Self> {
        if values.len() != width * height {
            return Err(Error::shape(format!(
                "{} values for a {width}x{height} mask",
                values.len()
            )));
        }
        let mut bits = Vec::with_capacity(values.len());
        for &v in values {
            match v {
                0 => bits.push(false),
                1 => bits.push(true),
                other => return Err(Error::Numeric(format!("binary mask value {other} is not 0 or 1"))),
            }
        }
        Ok(Self { width, height, bits })
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut mask = Self::zeros(width, height);
        for y in 0..height {
            for x in 0..width {
                mask.bits[y * width + x] = f(x, y);
            }
        }
        mask
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: bool) {
        self.bits[y * self.width + x] = value;
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// Row-major 0/1 values.
    pub fn to_values(&self) -> Vec<u8> {
        self.bits.iter().map(|&b| b as u8).collect()
    }
}

/// Single-channel label grid, labels in `0..=46`, 0 = background.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ClassMap {
    width: usize,
    height: usize,
    labels: Vec<u8>,
}

impl ClassMap {
    pub fn background(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            labels: vec![0; width * height],
        }
    }

    /// Builds a map from row-major labels, validating the label range.
    pub fn from_labels(width: usize, height: usize, labels: Vec<u8>) -> Result<Self> {
        if labels.len() != width * height {
            return Err(Error::shape(format!(
                "{} labels for a {width}x{height} map",
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l > MAX_CLASS_ID) {
            return Err(Error::InvalidClass {
                class_id: bad as i64,
                min: 0,
                max: MAX_CLASS_ID as i64,
            });
        }
        Ok(Self { width, height, labels })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.labels[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, label: u8) {
        debug_assert!(label <= MAX_CLASS_ID);
        self.labels[y * self.width + x] = label;
    }

    /// Row-major labels.
    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    /// Sorted distinct labels present in the map.
    pub fn label_set(&self) -> Vec<u8> {
        let mut seen = [false; 256];
        for &l in &self.labels {
            seen[l as usize] = true;
        }
        (0..=255u8).filter(|&l| seen[l as usize]).collect()
    }

    pub fn background_fraction(&self) -> f64 {
        let bg = self.labels.iter().filter(|&&l| l == 0).count();
        bg as f64 / self.labels.len() as f64
    }
}

/// Condenses per-instance masks into one class map.
///
/// Each pixel takes the class of the last mask (in sequence order) covering
/// it; uncovered pixels stay background.
pub fn condense(masks: &[(BinaryMask, u8)], width: usize, height: usize) -> Result<ClassMap> {
    let mut map = ClassMap::background(width, height);
    for (mask, class_id) in masks {
        if !(1..=MAX_CLASS_ID).contains(class_id) {
            return Err(Error::InvalidClass {
                class_id: *class_id as i64,
                min: 1,
                max: MAX_CLASS_ID as i64,
            });
        }
        if mask.width() != width || mask.height() != height {
            return Err(Error::shape(format!(
                "mask is {}x{}, expected {width}x{height}",
                mask.width(),
                mask.height()
            )));
        }
        for (label, &bit) in map.labels.iter_mut().zip(&mask.bits) {
            if bit {
                *label = *class_id;
            }
        }
    }
    Ok(map)
}

#[inline]
fn nearest_source(dst: usize, src_len: usize, dst_len: usize) -> usize {
    // sample at the centre of the destination cell
    (((2 * dst + 1) * src_len) / (2 * dst_len)).min(src_len - 1)
}

/// Nearest-neighbour resize; labels are never blended.
pub fn resize_classmap(map: &ClassMap, width: usize, height: usize) -> ClassMap {
    assert!(map.width >= 1 && map.height >= 1, "source map must be non-empty");
    if map.width == width && map.height == height {
        return map.clone();
    }
    let xs: Vec<usize> = (0..width).map(|x| nearest_source(x, map.width, width)).collect();
    let mut labels = Vec::with_capacity(width * height);
    for y in 0..height {
        let sy = nearest_source(y, map.height, height);
        let row = &map.labels[sy * map.width..(sy + 1) * map.width];
        labels.extend(xs.iter().map(|&sx| row[sx]));
    }
    ClassMap { width, height, labels }
}

/// Per-class indicator stack `r`: exactly one channel is 1 at every pixel.
pub fn one_hot(map: &ClassMap, num_classes: usize) -> Result<ScoreMap> {
    let mut out = ScoreMap::zeros(map.width, map.height, num_classes);
    for (n, &label) in map.labels.iter().enumerate() {
        let l = label as usize;
        if l >= num_classes {
            return Err(Error::InvalidClass {
                class_id: l as i64,
                min: 0,
                max: num_classes as i64 - 1,
            });
        }
        out.pixel_mut(n)[l] = 1.0;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pixel_order_roundtrip() {
        for order in [PixelOrder::ColumnMajor, PixelOrder::RowMajor] {
            for pos in 1..=12 {
                let (x, y) = order.coords(pos, 4, 3);
                assert!(x < 4 && y < 3);
                assert_eq!(order.position(x, y, 4, 3), pos);
            }
        }
    }

    #[test]
    fn condense_empty_is_background() {
        let m = condense(&[], 4, 5).unwrap();
        assert_eq!(m, ClassMap::background(4, 5));
    }

    #[test]
    fn condense_single_mask() {
        let mask = BinaryMask::from_fn(4, 4, |x, y| x < 2 && y == 1);
        let m = condense(&[(mask.clone(), 7)], 4, 4).unwrap();
        for y in 0..4 {
            for x in 0..4 {
                let expected = if mask.get(x, y) { 7 } else { 0 };
                assert_eq!(m.get(x, y), expected);
            }
        }
    }

    #[test]
    fn condense_last_wins_matches_brute_force() {
        let a = BinaryMask::from_fn(6, 5, |x, _| x < 4);
        let b = BinaryMask::from_fn(6, 5, |x, y| x >= 2 && y >= 2);
        let m = condense(&[(a.clone(), 3), (b.clone(), 5)], 6, 5).unwrap();
        for y in 0..5 {
            for x in 0..6 {
                // scan annotations in order, keep the last hit
                let mut expected = 0;
                for (mask, class) in [(&a, 3u8), (&b, 5u8)] {
                    if mask.get(x, y) {
                        expected = class;
                    }
                }
                assert_eq!(m.get(x, y), expected);
            }
        }
        assert_eq!(m.get(3, 3), 5);
    }

    #[test]
    fn condense_rejects_bad_class_and_shape() {
        let mask = BinaryMask::zeros(2, 2);
        assert!(matches!(
            condense(&[(mask.clone(), 0)], 2, 2),
            Err(Error::InvalidClass { .. })
        ));
        assert!(matches!(
            condense(&[(mask.clone(), 47)], 2, 2),
            Err(Error::InvalidClass { .. })
        ));
        assert!(matches!(condense(&[(mask, 1)], 3, 2), Err(Error::Shape(_))));
    }

    #[test]
    fn resize_identity() {
        let labels: Vec<u8> = (0..256 * 256).map(|i| (i % 47) as u8).collect();
        let m = ClassMap::from_labels(256, 256, labels).unwrap();
        assert_eq!(resize_classmap(&m, 256, 256), m);
    }

    #[test]
    fn resize_constant() {
        let m = ClassMap::from_labels(37, 11, vec![9; 37 * 11]).unwrap();
        let r = resize_classmap(&m, 256, 256);
        assert!(r.labels().iter().all(|&l| l == 9));
    }

    #[test]
    fn resize_halves() {
        let mut m = ClassMap::background(512, 512);
        for y in 0..512 {
            for x in 0..512 {
                m.set(x, y, if x < 256 { 1 } else { 2 });
            }
        }
        let r = resize_classmap(&m, 256, 256);
        for y in 0..256 {
            for x in 0..256 {
                assert_eq!(r.get(x, y), if x < 128 { 1 } else { 2 });
            }
        }
    }

    #[test]
    fn resize_degenerate_source() {
        let m = ClassMap::from_labels(1, 3, vec![1, 2, 3]).unwrap();
        let r = resize_classmap(&m, 4, 6);
        assert_eq!(r.label_set(), vec![1, 2, 3]);
        assert_eq!(r.get(3, 0), 1);
        assert_eq!(r.get(0, 5), 3);
    }

    #[test]
    fn one_hot_background() {
        let m = ClassMap::background(3, 2);
        let r = one_hot(&m, NUM_CLASSES).unwrap();
        for n in 0..6 {
            let px = r.pixel(n);
            assert_eq!(px[0], 1.0);
            assert!(px[1..].iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn one_hot_single_pixel() {
        let mut m = ClassMap::background(2, 2);
        m.set(1, 0, 31);
        let r = one_hot(&m, NUM_CLASSES).unwrap();
        assert_eq!(r.pixel(1)[31], 1.0);
        assert_eq!(r.pixel(1)[0], 0.0);
    }

    #[test]
    fn one_hot_out_of_range() {
        let mut m = ClassMap::background(2, 2);
        m.set(0, 0, 5);
        assert!(matches!(one_hot(&m, 4), Err(Error::InvalidClass { .. })));
    }

    #[test]
    fn class_map_rejects_labels_above_46() {
        assert!(ClassMap::from_labels(1, 1, vec![47]).is_err());
    }

    #[test]
    fn binary_mask_rejects_non_binary() {
        assert!(BinaryMask::from_values(2, 1, &[0, 2]).is_err());
    }
}
