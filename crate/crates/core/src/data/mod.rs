//! SemanticKITTI-format readers and a seeded synthetic scene generator.

mod kitti;
mod synth;

pub use kitti::{
    apply_learning_map, pair_scan_labels, read_labels, read_velodyne_bin, write_labels,
    write_velodyne_bin, LearningMap,
};
pub use synth::{
    synth_scene, SynthObject, SynthScene, SynthSceneSpec, CLASS_BOX, CLASS_GROUND, CLASS_POLE,
    CLASS_WALL, SYNTH_CLASS_NAMES,
};

use thiserror::Error;

use crate::geometry::CartesianPoint;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DataError {
    #[error("file length {len} is not a multiple of {record} bytes")]
    TruncatedFile { len: usize, record: usize },
    #[error("scan has {points} points but label file has {labels}")]
    LengthMismatch { points: usize, labels: usize },
    #[error("raw label {0} is not in the learning map")]
    UnknownLabel(u32),
    #[error("learning map line {line}: {reason}")]
    BadMapLine { line: usize, reason: String },
    #[error("invalid synthetic scene spec: {0}")]
    InvalidSpec(String),
}

/// Points with one train id each.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LabeledCloud {
    pub points: Vec<CartesianPoint>,
    pub labels: Vec<usize>,
}

impl LabeledCloud {
    pub fn new(points: Vec<CartesianPoint>, labels: Vec<usize>) -> Result<Self, DataError> {
        if points.len() != labels.len() {
            return Err(DataError::LengthMismatch {
                points: points.len(),
                labels: labels.len(),
            });
        }
        Ok(Self { points, labels })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Counts per class id for ids below `classes`.
    pub fn histogram(&self, classes: usize) -> Vec<u64> {
        let mut h = vec![0; classes];
        for &l in &self.labels {
            if l < classes {
                h[l] += 1;
            }
        }
        h
    }
}
