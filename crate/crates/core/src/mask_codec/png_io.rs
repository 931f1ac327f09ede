//! Indexed-colour PNG storage for class maps.
//!
//! Palette entry `k` is the colour of class `k`; entry 0 (black) is
//! background. Encoder settings are fixed so identical maps always produce
//! identical bytes.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use image::RgbImage;

use super::{ClassMap, NUM_CLASSES};
use crate::error::{Error, Result};

/// The 47 palette entries as `RRGGBB` hex strings.
pub const PALETTE_HEX: [&str; NUM_CLASSES] = [
    "000000", "e6194b", "3cb44b", "ffe119", "4363d8", "f58231", "911eb4", "46f0f0", "f032e6", "bcf60c", "fabebe",
    "008080", "e6beff", "9a6324", "fffac8", "800000", "aaffc3", "808000", "ffd8b1", "000075", "808080", "ffffff",
    "5f9ea0", "dc143c", "00ced1", "ff8c00", "9400d3", "7fff00", "d2691e", "1e90ff", "b22222", "228b22", "ff1493",
    "ffd700", "adff2f", "4b0082", "f0e68c", "20b2aa", "87cefa", "778899", "b0c4de", "32cd32", "66cdaa", "0000cd",
    "ba55d3", "9370db", "3cb371",
];

/// `PALETTE_HEX` decoded into RGB triples.
pub const PALETTE: [[u8; 3]; NUM_CLASSES] = decode_palette();

const fn hex_digit(c: u8) -> u8 {
    match c {
        b'0'..=b'9' => c - b'0',
        b'a'..=b'f' => c - b'a' + 10,
        _ => panic!("bad hex digit"),
    }
}

const fn decode_palette() -> [[u8; 3]; NUM_CLASSES] {
    let mut out = [[0u8; 3]; NUM_CLASSES];
    let mut i = 0;
    while i < NUM_CLASSES {
        let s = PALETTE_HEX[i].as_bytes();
        let mut c = 0;
        while c < 3 {
            out[i][c] = hex_digit(s[2 * c]) * 16 + hex_digit(s[2 * c + 1]);
            c += 1;
        }
        i += 1;
    }
    out
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

/// Writes an 8-bit indexed PNG with the fixed 47-entry palette.
pub fn write_class_map_png(map: &ClassMap, path: &Path) -> Result<()> {
    let writer = create(path)?;
    let mut encoder = png::Encoder::new(writer, map.width() as u32, map.height() as u32);
    encoder.set_color(png::ColorType::Indexed);
    encoder.set_depth(png::BitDepth::Eight);
    encoder.set_palette(PALETTE.iter().flatten().copied().collect::<Vec<u8>>());
    encoder.set_compression(png::Compression::Balanced);
    encoder.set_filter(png::Filter::NoFilter);
    let mut writer = encoder.write_header()?;
    writer.write_image_data(map.labels())?;
    writer.finish()?;
    Ok(())
}

/// Reads an 8-bit indexed or grayscale PNG back into a class map.
pub fn read_class_map_png(path: &Path) -> Result<ClassMap> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut decoder = png::Decoder::new(BufReader::new(file));
    // keep raw palette indices
    decoder.set_transformations(png::Transformations::IDENTITY);
    let mut reader = decoder.read_info()?;
    let info = reader.info();
    let (width, height) = (info.width as usize, info.height as usize);
    if info.bit_depth != png::BitDepth::Eight
        || !matches!(info.color_type, png::ColorType::Indexed | png::ColorType::Grayscale)
    {
        return Err(Error::shape(format!(
            "{}: expected 8-bit indexed or grayscale PNG",
            path.display()
        )));
    }
    let mut buf = vec![0u8; reader.output_buffer_size().unwrap_or(width * height)];
    let frame = reader.next_frame(&mut buf)?;
    buf.truncate(frame.buffer_size());
    ClassMap::from_labels(width, height, buf)
}

/// Blends palette colours over `image` at 50% on foreground pixels.
pub fn write_overlay_png(image: &RgbImage, map: &ClassMap, path: &Path) -> Result<()> {
    if image.width() as usize != map.width() || image.height() as usize != map.height() {
        return Err(Error::shape(format!(
            "overlay image {}x{} vs map {}x{}",
            image.width(),
            image.height(),
            map.width(),
            map.height()
        )));
    }
    let mut out = image.clone();
    for (x, y, px) in out.enumerate_pixels_mut() {
        let label = map.get(x as usize, y as usize) as usize;
        if label != 0 {
            let c = PALETTE[label];
            for k in 0..3 {
                px.0[k] = ((px.0[k] as u16 + c[k] as u16) / 2) as u8;
            }
        }
    }
    let mut writer = create(path)?;
    out.write_to(&mut writer, image::ImageFormat::Png)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn palette_is_distinct() {
        let mut seen = std::collections::HashSet::new();
        for c in PALETTE {
            assert!(seen.insert(c));
        }
        assert_eq!(PALETTE[0], [0, 0, 0]);
        assert_eq!(PALETTE[1], [0xe6, 0x19, 0x4b]);
    }

    #[test]
    fn png_roundtrip_is_byte_stable() {
        let dir = tempfile::tempdir().unwrap();
        let labels: Vec<u8> = (0..20 * 9).map(|i| (i % 47) as u8).collect();
        let map = ClassMap::from_labels(20, 9, labels).unwrap();
        let a = dir.path().join("a.png");
        let b = dir.path().join("b.png");
        write_class_map_png(&map, &a).unwrap();
        write_class_map_png(&map, &b).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
        assert_eq!(read_class_map_png(&a).unwrap(), map);
    }
}
