//! Hierarchical point-graph network for LiDAR semantic segmentation.

pub mod data;
pub mod geometry;
pub mod graph;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod nncore;
pub mod spatial;
pub mod train;
