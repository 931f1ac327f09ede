//! Run-length descriptors: `start length` pairs over a flattened, 1-indexed
//! pixel sequence.

use std::fmt;

use serde::{Deserialize, Serialize};

use super::{BinaryMask, PixelOrder};
use crate::error::{Error, Result};

/// One run: `length` consecutive pixels starting at the 1-indexed `start`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Run {
    pub start: usize,
    pub length: usize,
}

impl Run {
    /// Last covered position (inclusive, 1-indexed).
    pub fn end(&self) -> usize {
        self.start + self.length - 1
    }
}

/// Canonical run list: sorted by start, non-overlapping and non-adjacent.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RlePairs {
    runs: Vec<Run>,
}

impl RlePairs {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Builds a canonical run list from arbitrary (start, length) pairs.
    ///
    /// Pairs are sorted by start; overlapping or touching runs are merged so
    /// that the result equals `rle_encode(rle_decode(..))`.
    pub fn from_pairs<I>(pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize)>,
    {
        let mut runs = Vec::new();
        for (index, (start, length)) in pairs.into_iter().enumerate() {
            if start < 1 || length < 1 {
                return Err(Error::InvalidRun {
                    index,
                    start: start as i64,
                    length: length as i64,
                });
            }
            runs.push(Run { start, length });
        }
        Ok(Self::canonicalize(runs))
    }

    fn canonicalize(mut runs: Vec<Run>) -> Self {
        runs.sort_unstable();
        let mut merged: Vec<Run> = Vec::with_capacity(runs.len());
        for run in runs {
            match merged.last_mut() {
                Some(last) if run.start <= last.end() + 1 => {
                    let end = last.end().max(run.end());
                    last.length = end - last.start + 1;
                }
                _ => merged.push(run),
            }
        }
        Self { runs: merged }
    }

    pub fn runs(&self) -> &[Run] {
        &self.runs
    }

    pub fn len(&self) -> usize {
        self.runs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.runs.is_empty()
    }

    /// Total number of covered pixels.
    pub fn pixel_count(&self) -> usize {
        self.runs.iter().map(|r| r.length).sum()
    }

    /// Fails if any run reaches past `total` pixels.
    pub fn check_bounds(&self, total: usize) -> Result<()> {
        match self.runs.last() {
            Some(run) if run.end() > total => Err(Error::OutOfBounds {
                start: run.start,
                length: run.length,
                total,
            }),
            _ => Ok(()),
        }
    }

    pub fn as_pairs(&self) -> Vec<(usize, usize)> {
        self.runs.iter().map(|r| (r.start, r.length)).collect()
    }
}

/// Challenge text form: space-separated decimal integers, start/length alternating.
impl fmt::Display for RlePairs {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, run) in self.runs.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            write!(f, "{} {}", run.start, run.length)?;
        }
        Ok(())
    }
}

impl std::str::FromStr for RlePairs {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        parse_rle(s)
    }
}

/// Parses a whitespace-separated descriptor into canonical runs.
pub fn parse_rle(text: &str) -> Result<RlePairs> {
    let mut values = Vec::new();
    for token in text.split_whitespace() {
        let value: i64 = token.parse().map_err(|_| Error::RleParse {
            token: token.to_string(),
        })?;
        values.push(value);
    }
    if values.len() % 2 != 0 {
        return Err(Error::MalformedDescriptor(format!(
            "odd number of tokens ({})",
            values.len()
        )));
    }
    let mut runs = Vec::with_capacity(values.len() / 2);
    for (index, chunk) in values.chunks_exact(2).enumerate() {
        let (start, length) = (chunk[0], chunk[1]);
        if start < 1 || length < 1 {
            return Err(Error::InvalidRun { index, start, length });
        }
        runs.push(Run {
            start: start as usize,
            length: length as usize,
        });
    }
    Ok(RlePairs::canonicalize(runs))
}

/// Expands runs into a `width x height` mask under the given pixel order.
pub fn rle_decode(pairs: &RlePairs, width: usize, height: usize, order: PixelOrder) -> Result<BinaryMask> {
    let total = width * height;
    pairs.check_bounds(total)?;
    let mut mask = BinaryMask::zeros(width, height);
    for run in pairs.runs() {
        for pos in run.start..run.start + run.length {
            let (x, y) = order.coords(pos, width, height);
            mask.set(x, y, true);
        }
    }
    Ok(mask)
}

/// Compresses a mask into canonical runs.
pub fn rle_encode(mask: &BinaryMask, order: PixelOrder) -> RlePairs {
    let (width, height) = (mask.width(), mask.height());
    let total = width * height;
    let mut runs = Vec::new();
    let mut current: Option<Run> = None;
    for pos in 1..=total {
        let (x, y) = order.coords(pos, width, height);
        if mask.get(x, y) {
            match current.as_mut() {
                Some(run) => run.length += 1,
                None => current = Some(Run { start: pos, length: 1 }),
            }
        } else if let Some(run) = current.take() {
            runs.push(run);
        }
    }
    runs.extend(current);
    RlePairs { runs }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_single_pair() {
        let p = parse_rle("1 3").unwrap();
        assert_eq!(p.as_pairs(), vec![(1, 3)]);
    }

    #[test]
    fn empty_descriptor_is_empty() {
        assert!(parse_rle("").unwrap().is_empty());
        assert!(parse_rle("   \n").unwrap().is_empty());
    }

    #[test]
    fn parser_sorts_runs() {
        let p = parse_rle("5 2 1 3").unwrap();
        assert_eq!(p.as_pairs(), vec![(1, 3), (5, 2)]);
        // same result as going through a mask
        let m = rle_decode(&p, 3, 3, PixelOrder::ColumnMajor).unwrap();
        assert_eq!(rle_encode(&m, PixelOrder::ColumnMajor), p);
    }

    #[test]
    fn parser_merges_touching_runs() {
        let p = parse_rle("4 2 1 3 5 4").unwrap();
        assert_eq!(p.as_pairs(), vec![(1, 8)]);
    }

    #[test]
    fn odd_token_count_is_malformed() {
        assert!(matches!(parse_rle("1 3 5"), Err(Error::MalformedDescriptor(_))));
    }

    #[test]
    fn non_integer_token() {
        assert!(matches!(parse_rle("1 x"), Err(Error::RleParse { .. })));
        assert!(matches!(parse_rle("1.5 2"), Err(Error::RleParse { .. })));
    }

    #[test]
    fn zero_or_negative_length() {
        assert!(matches!(parse_rle("1 0"), Err(Error::InvalidRun { .. })));
        assert!(matches!(parse_rle("1 -2"), Err(Error::InvalidRun { .. })));
        assert!(matches!(parse_rle("0 2"), Err(Error::InvalidRun { .. })));
    }

    #[test]
    fn decode_first_column() {
        let p = parse_rle("1 3").unwrap();
        let m = rle_decode(&p, 3, 3, PixelOrder::ColumnMajor).unwrap();
        for y in 0..3 {
            for x in 0..3 {
                assert_eq!(m.get(x, y), x == 0, "pixel ({x},{y})");
            }
        }
    }

    #[test]
    fn decode_row_major_first_row() {
        let p = parse_rle("1 3").unwrap();
        let m = rle_decode(&p, 3, 3, PixelOrder::RowMajor).unwrap();
        for y in 0..3 {
            for x in 0..3 {
                assert_eq!(m.get(x, y), y == 0);
            }
        }
    }

    #[test]
    fn decode_full_and_empty() {
        let full = RlePairs::from_pairs([(1, 12)]).unwrap();
        let m = rle_decode(&full, 4, 3, PixelOrder::ColumnMajor).unwrap();
        assert_eq!(m.count_ones(), 12);
        let m = rle_decode(&RlePairs::empty(), 4, 3, PixelOrder::ColumnMajor).unwrap();
        assert_eq!(m.count_ones(), 0);
    }

    #[test]
    fn decode_out_of_bounds() {
        let p = parse_rle("10 3").unwrap();
        assert!(matches!(
            rle_decode(&p, 3, 3, PixelOrder::ColumnMajor),
            Err(Error::OutOfBounds { total: 9, .. })
        ));
    }

    #[test]
    fn encode_all_zero() {
        let m = BinaryMask::zeros(5, 7);
        assert!(rle_encode(&m, PixelOrder::ColumnMajor).is_empty());
    }

    #[test]
    fn display_matches_challenge_format() {
        let p = parse_rle("5 2 1 3").unwrap();
        assert_eq!(p.to_string(), "1 3 5 2");
        assert_eq!(RlePairs::empty().to_string(), "");
    }
}
