use std::collections::BTreeMap;

use super::{DataError, LabeledCloud};
use crate::geometry::CartesianPoint;

const POINT_BYTES: usize = 16;
const LABEL_BYTES: usize = 4;

/// Decodes little-endian `f32` quadruples `(x, y, z, intensity)`.
pub fn read_velodyne_bin(bytes: &[u8]) -> Result<Vec<CartesianPoint>, DataError> {
    if !bytes.len().is_multiple_of(POINT_BYTES) {
        return Err(DataError::TruncatedFile {
            len: bytes.len(),
            record: POINT_BYTES,
        });
    }
    Ok(bytes
        .chunks_exact(POINT_BYTES)
        .map(|rec| {
            let f = |i: usize| f32::from_le_bytes(rec[i * 4..i * 4 + 4].try_into().unwrap()) as f64;
            CartesianPoint::new(f(0), f(1), f(2), f(3))
        })
        .collect())
}

/// Encodes points as little-endian `f32` quadruples (lossy for `f64` input).
pub fn write_velodyne_bin(points: &[CartesianPoint]) -> Vec<u8> {
    let mut out = Vec::with_capacity(points.len() * POINT_BYTES);
    for p in points {
        for v in [p.x, p.y, p.z, p.intensity] {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

/// Semantic ids (low 16 bits) of a `.label` file; instance ids are dropped.
pub fn read_labels(bytes: &[u8]) -> Result<Vec<u32>, DataError> {
    if !bytes.len().is_multiple_of(LABEL_BYTES) {
        return Err(DataError::TruncatedFile {
            len: bytes.len(),
            record: LABEL_BYTES,
        });
    }
    Ok(bytes
        .chunks_exact(LABEL_BYTES)
        .map(|rec| u32::from_le_bytes(rec.try_into().unwrap()) & 0xFFFF)
        .collect())
}

pub fn write_labels(labels: &[u32]) -> Vec<u8> {
    labels.iter().flat_map(|l| l.to_le_bytes()).collect()
}

/// Maps raw semantic ids to train ids; an id missing from `map` is an error.
pub fn apply_learning_map(raw: &[u32], map: &LearningMap) -> Result<Vec<usize>, DataError> {
    map.apply(raw)
}

/// Joins a scan with its mapped labels.
pub fn pair_scan_labels(
    points: Vec<CartesianPoint>,
    raw_labels: &[u32],
    map: &LearningMap,
) -> Result<LabeledCloud, DataError> {
    if points.len() != raw_labels.len() {
        return Err(DataError::LengthMismatch {
            points: points.len(),
            labels: raw_labels.len(),
        });
    }
    let labels = map.apply(raw_labels)?;
    LabeledCloud::new(points, labels)
}

/// Raw semantic id → train id, with train id 0 meaning "ignore".
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LearningMap {
    map: BTreeMap<u32, usize>,
}

impl LearningMap {
    pub fn identity(classes: usize) -> Self {
        Self {
            map: (0..classes).map(|c| (c as u32, c)).collect(),
        }
    }

    /// Parses `raw_id train_id` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self, DataError> {
        let mut map = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let bad = |reason: &str| DataError::BadMapLine {
                line: i + 1,
                reason: reason.to_string(),
            };
            let mut fields = line.split_whitespace();
            let raw: u32 = fields
                .next()
                .and_then(|f| f.parse().ok())
                .ok_or_else(|| bad("raw id is not an integer"))?;
            let train: usize = fields
                .next()
                .and_then(|f| f.parse().ok())
                .ok_or_else(|| bad("train id is not an integer"))?;
            if fields.next().is_some() {
                return Err(bad("expected exactly two fields"));
            }
            if map.insert(raw, train).is_some() {
                return Err(bad("duplicate raw id"));
            }
        }
        Ok(Self { map })
    }

    pub fn get(&self, raw: u32) -> Option<usize> {
        self.map.get(&raw).copied()
    }

    /// One more than the largest train id.
    pub fn class_count(&self) -> usize {
        self.map.values().max().map_or(0, |m| m + 1)
    }

    pub fn apply(&self, raw: &[u32]) -> Result<Vec<usize>, DataError> {
        raw.iter()
            .map(|&r| self.get(r).ok_or(DataError::UnknownLabel(r)))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_record() {
        let pts = read_velodyne_bin(&[0u8; 16]).unwrap();
        assert_eq!(pts, vec![CartesianPoint::default()]);
        assert_eq!(
            read_velodyne_bin(&[0u8; 17]),
            Err(DataError::TruncatedFile {
                len: 17,
                record: 16
            })
        );
    }

    #[test]
    fn label_bits() {
        let bytes = [0x0001000Au32, 0]
            .iter()
            .flat_map(|v| v.to_le_bytes())
            .collect::<Vec<_>>();
        assert_eq!(read_labels(&bytes).unwrap(), vec![10, 0]);
        assert!(read_labels(&[1, 2, 3]).is_err());
    }

    #[test]
    fn pairing_checks_length() {
        let map = LearningMap::identity(3);
        let err = pair_scan_labels(vec![CartesianPoint::default(); 2], &[1], &map).unwrap_err();
        assert_eq!(
            err,
            DataError::LengthMismatch {
                points: 2,
                labels: 1
            }
        );
    }

    #[test]
    fn map_parsing() {
        let m = LearningMap::parse("# header\n0 0\n10 1 # car\n\n252 1\n").unwrap();
        assert_eq!(m.apply(&[10, 252, 0]).unwrap(), vec![1, 1, 0]);
        assert_eq!(m.apply(&[11]), Err(DataError::UnknownLabel(11)));
        assert_eq!(m.class_count(), 2);
        assert!(LearningMap::parse("1 x\n").is_err());
        assert!(LearningMap::parse("1 1 1\n").is_err());
        assert!(LearningMap::parse("1 1\n1 2\n").is_err());
        let id = LearningMap::identity(4);
        assert_eq!(id.apply(&[0, 3, 2]).unwrap(), vec![0, 3, 2]);
    }
}
