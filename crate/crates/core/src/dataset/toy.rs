use std::path::Path;

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{load_annotations, load_samples, AnnotationRecord, CsvOptions, DatasetIndex, IngestMode, Sample};
use crate::error::{Error, Result};
use crate::mask_codec::{rle_encode, write_class_map_png, BinaryMask, ClassMap, PixelOrder, MAX_CLASS_ID};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const ANNOTATIONS_FILE: &str = "annotations.csv";
pub const IMAGES_DIR: &str = "images";
pub const MASKS_DIR: &str = "masks";
const MANIFEST_FORMAT: u32 = 1;
const MAX_REDRAWS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassSpawn {
    pub class_id: u8,
    /// Independent per-image probability that the class appears.
    pub probability: f64,
}

/// Parameters of the synthetic shape dataset.
///
/// Each class draws one shape family (rectangle, ellipse or triangle, by
/// class id) and its own hue band. Images without any shape are redrawn, so
/// the ratio of two classes' occurrence rates equals the ratio of their spawn
/// probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToySpec {
    pub count: usize,
    pub width: usize,
    pub height: usize,
    pub classes: Vec<ClassSpawn>,
    /// Total shapes per image, inclusive; every present class gets at least one.
    pub shapes_per_image: (usize, usize),
    /// Shape extent as a fraction of the shorter image side, inclusive range.
    pub extent: (f64, f64),
    /// Amplitude of uniform per-channel noise, as a fraction of full scale.
    pub noise: f64,
    pub seed: u64,
}

impl Default for ToySpec {
    fn default() -> Self {
        let probs = [0.9, 0.5, 0.3, 0.1, 0.034];
        Self {
            count: 100,
            width: 256,
            height: 256,
            classes: probs
                .iter()
                .enumerate()
                .map(|(i, &p)| ClassSpawn {
                    class_id: i as u8 + 1,
                    probability: p,
                })
                .collect(),
            shapes_per_image: (1, 3),
            extent: (0.15, 0.4),
            noise: 0.05,
            seed: 42,
        }
    }
}

impl ToySpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::config(m));
        if self.classes.is_empty() {
            return bad("toy spec needs at least one class".into());
        }
        if self.classes.len() > MAX_CLASS_ID as usize {
            return bad(format!("at most {MAX_CLASS_ID} classes"));
        }
        let mut seen = [false; 256];
        for c in &self.classes {
            if !(1..=MAX_CLASS_ID).contains(&c.class_id) {
                return bad(format!("class id {} outside 1..={MAX_CLASS_ID}", c.class_id));
            }
            if std::mem::replace(&mut seen[c.class_id as usize], true) {
                return bad(format!("class id {} listed twice", c.class_id));
            }
            if !(0.0..=1.0).contains(&c.probability) {
                return bad(format!("spawn probability {} outside [0, 1]", c.probability));
            }
        }
        if self.count == 0 {
            return bad("image count must be positive".into());
        }
        if self.width < 4 || self.height < 4 {
            return bad(format!("image size {}x{} is below 4x4", self.width, self.height));
        }
        let (lo, hi) = self.shapes_per_image;
        if lo == 0 || lo > hi {
            return bad(format!("shapes per image range ({lo}, {hi}) is invalid"));
        }
        let (a, b) = self.extent;
        if !(a > 0.0 && a <= b && b <= 1.0) {
            return bad(format!("extent range ({a}, {b}) must satisfy 0 < min <= max <= 1"));
        }
        if !(0.0..=1.0).contains(&self.noise) {
            return bad(format!("noise {} outside [0, 1]", self.noise));
        }
        Ok(())
    }
}

/// Generated images, their exact label maps and the RLE annotations.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyDataset {
    pub spec: ToySpec,
    pub samples: Vec<Sample>,
    pub index: DatasetIndex,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    format: u32,
    spec: ToySpec,
    pixel_order: String,
    images: Vec<String>,
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [u8; 3] {
    let h = h.rem_euclid(360.0) / 60.0;
    let c = v * s;
    let x = c * (1.0 - (h % 2.0 - 1.0).abs());
    let (r, g, b) = match h as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r, g, b].map(|u| ((u + m) * 255.0).round().clamp(0.0, 255.0) as u8)
}

fn shape_mask(kind: u8, rng: &mut ChaCha8Rng, spec: &ToySpec) -> BinaryMask {
    let (w, h) = (spec.width, spec.height);
    let side = w.min(h) as f64;
    let mut size = || ((rng.random_range(spec.extent.0..=spec.extent.1) * side).round() as usize).clamp(1, w.min(h));
    let (sw, sh) = (size(), size());
    let x0 = rng.random_range(0..=w - sw);
    let y0 = rng.random_range(0..=h - sh);
    let (cx, cy) = (x0 as f64 + sw as f64 / 2.0, y0 as f64 + sh as f64 / 2.0);
    let flip = rng.random_bool(0.5);
    let inside = move |x: usize, y: usize| -> bool {
        if x < x0 || x >= x0 + sw || y < y0 || y >= y0 + sh {
            return false;
        }
        let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
        match kind {
            0 => true,
            1 => {
                let (dx, dy) = ((px - cx) / (sw as f64 / 2.0), (py - cy) / (sh as f64 / 2.0));
                dx * dx + dy * dy <= 1.0
            }
            _ => {
                // apex at the top (or bottom) centre, base on the opposite edge
                let t = (py - y0 as f64) / sh as f64;
                let t = if flip { 1.0 - t } else { t };
                (px - cx).abs() <= t * sw as f64 / 2.0
            }
        }
    };
    let mut mask = BinaryMask::from_fn(w, h, inside);
    if mask.count_ones() == 0 {
        mask.set((cx as usize).min(w - 1), (cy as usize).min(h - 1), true);
    }
    mask
}

/// Deterministic in `spec.seed`.
pub fn generate_toy(spec: &ToySpec) -> Result<ToyDataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let k = spec.classes.len() as f64;
    let any_possible = spec.classes.iter().any(|c| c.probability > 0.0);
    let mut samples = Vec::with_capacity(spec.count);
    let mut records = Vec::new();
    for i in 0..spec.count {
        let image_id = format!("toy_{i:05}");
        let mut present: Vec<usize> = Vec::new();
        for _ in 0..MAX_REDRAWS {
            present = (0..spec.classes.len())
                .filter(|&c| rng.random_bool(spec.classes[c].probability))
                .collect();
            if !present.is_empty() || !any_possible {
                break;
            }
        }
        let mut shapes: Vec<usize> = present.clone();
        if !present.is_empty() {
            let total = rng.random_range(spec.shapes_per_image.0..=spec.shapes_per_image.1);
            while shapes.len() < total {
                shapes.push(present[rng.random_range(0..present.len())]);
            }
            shapes.shuffle_with(&mut rng);
        }
        let bg = rng.random_range(0.12..0.3);
        let mut image = RgbImage::from_pixel(spec.width as u32, spec.height as u32, Rgb(hsv_to_rgb(0.0, 0.0, bg)));
        let mut target = ClassMap::background(spec.width, spec.height);
        for &c in &shapes {
            let class = spec.classes[c];
            let kind = (class.class_id - 1) % 3;
            let mask = shape_mask(kind, &mut rng, spec);
            let hue = (c as f64 + rng.random_range(0.25..0.75)) * 360.0 / k;
            let colour = Rgb(hsv_to_rgb(
                hue,
                rng.random_range(0.7..0.95),
                rng.random_range(0.75..0.95),
            ));
            for y in 0..spec.height {
                for x in 0..spec.width {
                    if mask.get(x, y) {
                        target.set(x, y, class.class_id);
                        image.put_pixel(x as u32, y as u32, colour);
                    }
                }
            }
            records.push(AnnotationRecord {
                image_id: image_id.clone(),
                encoded_pixels: rle_encode(&mask, PixelOrder::ColumnMajor).to_string(),
                class_id: class.class_id,
                height: spec.height,
                width: spec.width,
            });
        }
        if spec.noise > 0.0 {
            let amp = spec.noise * 255.0;
            for px in image.pixels_mut() {
                for ch in px.0.iter_mut() {
                    *ch = (*ch as f64 + rng.random_range(-amp..=amp)).round().clamp(0.0, 255.0) as u8;
                }
            }
        }
        samples.push(Sample {
            image_id,
            image,
            target,
        });
    }
    let mut index = DatasetIndex::from_records(records)?;
    // background-only images have no rows but still belong to the dataset
    if samples.len() != index.len() {
        let mut entries = Vec::with_capacity(samples.len());
        for s in &samples {
            entries.push(index.get(&s.image_id).cloned().unwrap_or_else(|| super::ImageEntry {
                image_id: s.image_id.clone(),
                height: spec.height,
                width: spec.width,
                records: vec![],
            }));
        }
        index = DatasetIndex::from_entries(entries);
    }
    Ok(ToyDataset {
        spec: spec.clone(),
        samples,
        index,
    })
}

trait ShuffleWith {
    fn shuffle_with(&mut self, rng: &mut ChaCha8Rng);
}

impl<T> ShuffleWith for Vec<T> {
    fn shuffle_with(&mut self, rng: &mut ChaCha8Rng) {
        use rand::seq::SliceRandom;
        self.shuffle(rng);
    }
}

impl ToyDataset {
    /// Writes `images/*.png`, `masks/*.png`, the annotation CSV and the manifest.
    pub fn save(&self, dir: &Path) -> Result<()> {
        let images = dir.join(IMAGES_DIR);
        let masks = dir.join(MASKS_DIR);
        for d in [&images, &masks] {
            std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
        }
        for s in &self.samples {
            s.image.save(images.join(format!("{}.png", s.image_id)))?;
            write_class_map_png(&s.target, &masks.join(format!("{}.png", s.image_id)))?;
        }
        self.index.write_csv(&dir.join(ANNOTATIONS_FILE))?;
        let manifest = Manifest {
            format: MANIFEST_FORMAT,
            spec: self.spec.clone(),
            pixel_order: "column-major".into(),
            images: self.samples.iter().map(|s| s.image_id.clone()).collect(),
        };
        let path = dir.join(MANIFEST_FILE);
        std::fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n").map_err(|e| Error::io(&path, e))
    }
}

/// Reads a dataset written by [`ToyDataset::save`]; label maps are rebuilt
/// from the annotation CSV.
pub fn load_toy(dir: &Path) -> Result<ToyDataset> {
    let path = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    if manifest.format != MANIFEST_FORMAT {
        return Err(Error::Schema(format!(
            "unsupported toy manifest format {}",
            manifest.format
        )));
    }
    let annotated = load_annotations(
        &dir.join(ANNOTATIONS_FILE),
        CsvOptions {
            mode: IngestMode::Strict,
            class_offset: 0,
        },
    )?
    .index;
    let entries = manifest
        .images
        .iter()
        .map(|id| {
            annotated.get(id).cloned().unwrap_or_else(|| super::ImageEntry {
                image_id: id.clone(),
                height: manifest.spec.height,
                width: manifest.spec.width,
                records: vec![],
            })
        })
        .collect();
    let index = DatasetIndex::from_entries(entries);
    let samples = load_samples(&index, &dir.join(IMAGES_DIR), None, PixelOrder::ColumnMajor)?;
    Ok(ToyDataset {
        spec: manifest.spec,
        samples,
        index,
    })
}
