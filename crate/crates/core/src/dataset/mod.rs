//! Annotation CSV ingestion, exploration statistics, splitting and sampling,
//! and the synthetic shape dataset.

mod sampling;
mod stats;
mod toy;

use std::collections::HashMap;
use std::io::Read;
use std::path::Path;

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask_codec::{condense, parse_rle, resize_classmap, rle_decode, ClassMap, PixelOrder, MAX_CLASS_ID};

pub use sampling::{diverse_subset, split, ClassDeviation, SubsetReport};
pub use stats::{class_histogram, class_pixel_frequencies, size_histogram, ClassHistogram, SizeHistogram};
pub use toy::{
    generate_toy, load_toy, ClassSpawn, ToyDataset, ToySpec, ANNOTATIONS_FILE, IMAGES_DIR, MANIFEST_FILE, MASKS_DIR,
};

/// Column names of the annotation CSV, in canonical order.
pub const CSV_COLUMNS: [&str; 5] = ["ImageId", "EncodedPixels", "ClassId", "Height", "Width"];

/// One mask instance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub image_id: String,
    pub encoded_pixels: String,
    pub class_id: u8,
    pub height: usize,
    pub width: usize,
}

/// All annotations of one image, in file order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageEntry {
    pub image_id: String,
    pub height: usize,
    pub width: usize,
    pub records: Vec<AnnotationRecord>,
}

impl ImageEntry {
    /// Distinct class ids, ascending.
    pub fn classes(&self) -> Vec<u8> {
        let mut c: Vec<u8> = self.records.iter().map(|r| r.class_id).collect();
        c.sort_unstable();
        c.dedup();
        c
    }

    /// Decodes and condenses every record at the image's native size.
    pub fn class_map(&self, order: PixelOrder) -> Result<ClassMap> {
        let masks = self
            .records
            .iter()
            .map(|r| {
                let pairs = parse_rle(&r.encoded_pixels)?;
                Ok((rle_decode(&pairs, self.width, self.height, order)?, r.class_id))
            })
            .collect::<Result<Vec<_>>>()
            .map_err(|e| e.for_image(&self.image_id))?;
        condense(&masks, self.width, self.height).map_err(|e| e.for_image(&self.image_id))
    }
}

/// Records grouped by image, images in order of first appearance.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DatasetIndex {
    images: Vec<ImageEntry>,
}

impl DatasetIndex {
    pub fn from_records(records: impl IntoIterator<Item = AnnotationRecord>) -> Result<Self> {
        let mut images: Vec<ImageEntry> = Vec::new();
        let mut slot: HashMap<String, usize> = HashMap::new();
        for r in records {
            match slot.get(&r.image_id) {
                Some(&i) => {
                    let entry = &mut images[i];
                    if (entry.height, entry.width) != (r.height, r.width) {
                        return Err(Error::shape(format!(
                            "image {} declared as {}x{} and {}x{}",
                            r.image_id, entry.height, entry.width, r.height, r.width
                        )));
                    }
                    entry.records.push(r);
                }
                None => {
                    slot.insert(r.image_id.clone(), images.len());
                    images.push(ImageEntry {
                        image_id: r.image_id.clone(),
                        height: r.height,
                        width: r.width,
                        records: vec![r],
                    });
                }
            }
        }
        Ok(Self { images })
    }

    pub(crate) fn from_entries(images: Vec<ImageEntry>) -> Self {
        Self { images }
    }

    pub fn images(&self) -> &[ImageEntry] {
        &self.images
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn get(&self, image_id: &str) -> Option<&ImageEntry> {
        self.images.iter().find(|e| e.image_id == image_id)
    }

    pub fn records(&self) -> impl Iterator<Item = &AnnotationRecord> {
        self.images.iter().flat_map(|e| e.records.iter())
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(CSV_COLUMNS)?;
        for r in self.records() {
            w.write_record([
                r.image_id.as_str(),
                r.encoded_pixels.as_str(),
                &r.class_id.to_string(),
                &r.height.to_string(),
                &r.width.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Fail on the first bad row, or collect row errors and keep going.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum IngestMode {
    Strict,
    #[default]
    Collect,
}

#[derive(Debug, Clone, Copy)]
pub struct CsvOptions {
    pub mode: IngestMode,
    /// Added to every `ClassId`; 1 for sources that number categories from 0.
    pub class_offset: i64,
}

impl Default for CsvOptions {
    fn default() -> Self {
        Self {
            mode: IngestMode::Collect,
            class_offset: 0,
        }
    }
}

/// Parsed index plus the rows that were skipped.
#[derive(Debug)]
pub struct LoadReport {
    pub index: DatasetIndex,
    /// Always [`Error::Row`].
    pub row_errors: Vec<Error>,
}

pub fn load_annotations(path: &Path, options: CsvOptions) -> Result<LoadReport> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_annotations(file, options)
}

/// Columns are located by name, so extra columns and any order are accepted.
/// A `ClassId` such as `31_4_17` contributes its leading integer.
pub fn read_annotations<R: Read>(reader: R, options: CsvOptions) -> Result<LoadReport> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let mut cols = [0usize; 5];
    for (slot, name) in cols.iter_mut().zip(CSV_COLUMNS) {
        *slot = headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::Schema(format!("missing column {name:?}")))?;
    }
    let mut records = Vec::new();
    let mut row_errors = Vec::new();
    for row in rdr.records() {
        let parsed = row.map_err(Error::from).and_then(|row| {
            let line = row.position().map_or(0, |p| p.line());
            parse_row(&row, &cols, options.class_offset).map_err(|message| Error::Row { line, message })
        });
        match parsed {
            Ok(r) => records.push(r),
            Err(e) if options.mode == IngestMode::Strict => return Err(e),
            Err(e @ Error::Row { .. }) => row_errors.push(e),
            Err(e) => row_errors.push(Error::Row {
                line: 0,
                message: e.to_string(),
            }),
        }
    }
    Ok(LoadReport {
        index: DatasetIndex::from_records(records)?,
        row_errors,
    })
}

fn parse_row(
    row: &csv::StringRecord,
    cols: &[usize; 5],
    class_offset: i64,
) -> std::result::Result<AnnotationRecord, String> {
    let field = |i: usize| {
        row.get(cols[i])
            .map(str::trim)
            .ok_or_else(|| format!("missing {}", CSV_COLUMNS[i]))
    };
    let image_id = field(0)?;
    if image_id.is_empty() {
        return Err("empty ImageId".into());
    }
    let encoded = field(1)?;
    parse_rle(encoded).map_err(|e| e.to_string())?;
    let class_text = field(2)?;
    let lead = class_text.split('_').next().unwrap_or("");
    let raw: i64 = lead
        .parse()
        .map_err(|_| format!("ClassId {class_text:?} is not an integer"))?;
    let class_id = raw + class_offset;
    if !(1..=MAX_CLASS_ID as i64).contains(&class_id) {
        return Err(Error::InvalidClass {
            class_id,
            min: 1,
            max: MAX_CLASS_ID as i64,
        }
        .to_string());
    }
    let dim = |i: usize| -> std::result::Result<usize, String> {
        let text = field(i)?;
        match text.parse::<usize>() {
            Ok(v) if v >= 1 => Ok(v),
            _ => Err(format!("{} {text:?} is not a positive integer", CSV_COLUMNS[i])),
        }
    };
    Ok(AnnotationRecord {
        image_id: image_id.to_string(),
        encoded_pixels: encoded.to_string(),
        class_id: class_id as u8,
        height: dim(3)?,
        width: dim(4)?,
    })
}

/// An RGB image with its label map, both at training resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image_id: String,
    pub image: RgbImage,
    pub target: ClassMap,
}

/// Loads a directory written by [`ToyDataset::save`], or one holding
/// `annotations.csv` and an `images/` folder. Images without annotation rows
/// are only known to toy datasets, through their manifest.
pub fn load_dir(dir: &Path, size: Option<usize>, mode: IngestMode) -> Result<(DatasetIndex, Vec<Sample>)> {
    let index = if dir.join(MANIFEST_FILE).exists() {
        load_toy(dir)?.index
    } else {
        let path = dir.join(ANNOTATIONS_FILE);
        if !path.exists() {
            return Err(Error::config(format!(
                "{} has neither {MANIFEST_FILE} nor {ANNOTATIONS_FILE}",
                dir.display()
            )));
        }
        let report = load_annotations(&path, CsvOptions { mode, class_offset: 0 })?;
        report.index
    };
    let samples = load_samples(&index, &dir.join(IMAGES_DIR), size, PixelOrder::ColumnMajor)?;
    Ok((index, samples))
}

/// Reads `<image_dir>/<image_id>.png` (or `.jpg`) for every indexed image and
/// builds its condensed map; with `size`, both are resized to `size x size`.
pub fn load_samples(
    index: &DatasetIndex,
    image_dir: &Path,
    size: Option<usize>,
    order: PixelOrder,
) -> Result<Vec<Sample>> {
    index
        .images()
        .iter()
        .map(|entry| {
            let path = ["png", "jpg", "jpeg"]
                .iter()
                .map(|ext| image_dir.join(format!("{}.{ext}", entry.image_id)))
                .find(|p| p.exists())
                .ok_or_else(|| {
                    Error::io(
                        image_dir.join(&entry.image_id),
                        std::io::Error::new(std::io::ErrorKind::NotFound, "image file not found"),
                    )
                })?;
            let mut image = image::open(&path)?.to_rgb8();
            if (image.width() as usize, image.height() as usize) != (entry.width, entry.height) {
                return Err(Error::shape(format!(
                    "{} is {}x{}, annotations declare {}x{}",
                    path.display(),
                    image.width(),
                    image.height(),
                    entry.width,
                    entry.height
                ))
                .for_image(&entry.image_id));
            }
            let (w, h) = size.map_or((entry.width, entry.height), |s| (s, s));
            if (entry.width, entry.height) != (w, h) {
                image = image::imageops::resize(&image, w as u32, h as u32, image::imageops::FilterType::Triangle);
            }
            let target = resize_classmap(&entry.class_map(order)?, w, h);
            Ok(Sample {
                image_id: entry.image_id.clone(),
                image,
                target,
            })
        })
        .collect()
}
