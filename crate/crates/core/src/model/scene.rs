use crate::geometry::{
    compute_keypoints_from_positions, cylindrical_of, outlier_survivors, voxel_index,
    CartesianPoint, GeometryError,
};
use crate::graph::{build_level_edges, link_levels, HierarchyLinks, LevelGraph};
use crate::spatial::SpatialIndex;

use super::{HpgnnConfig, ModelError};

/// Everything about one cloud that does not depend on the parameters: the
/// filtered points, every level's keypoints and edges, and the links between
/// consecutive levels.
#[derive(Debug, Clone)]
pub struct SceneGraph {
    /// Positions of the points the network sees.
    pub positions: Vec<[f64; 3]>,
    /// `(intensity, z)` per network point.
    pub attributes: Vec<[f64; 2]>,
    /// Index into the original cloud of each network point.
    pub source_index: Vec<usize>,
    pub source_len: usize,
    /// Points → level 0.
    pub point_links: HierarchyLinks,
    pub levels: Vec<LevelGraph>,
    /// `links[i]` maps level `i` onto level `i + 1`.
    pub links: Vec<HierarchyLinks>,
    /// Original indices outside the grid bounds (or non-finite).
    pub out_of_bounds: Vec<usize>,
    /// Original indices removed by the outlier filter.
    pub outliers: Vec<usize>,
}

impl SceneGraph {
    pub fn build(cloud: &[CartesianPoint], config: &HpgnnConfig) -> Result<Self, ModelError> {
        config.validate()?;
        if cloud.is_empty() {
            return Err(GeometryError::EmptyCloud.into());
        }
        let grid0 = &config.levels[0].grid;
        let (inside, out_of_bounds): (Vec<usize>, Vec<usize>) = (0..cloud.len()).partition(|&i| {
            cloud[i].is_finite()
                && voxel_index(&cylindrical_of(cloud[i].position()), grid0).is_some()
        });
        if inside.is_empty() {
            return Err(GeometryError::EmptyAfterFilter {
                discarded: cloud.len(),
            }
            .into());
        }

        // The filter needs more than k points; smaller clouds pass through.
        let (source_index, outliers) = match config.outlier_filter {
            Some(f) if inside.len() > f.k => {
                let pts: Vec<CartesianPoint> = inside.iter().map(|&i| cloud[i]).collect();
                let keep = outlier_survivors(&pts, f.k, f.ratio)?;
                let mut kept = vec![false; inside.len()];
                keep.iter().for_each(|&i| kept[i] = true);
                let removed = (0..inside.len())
                    .filter(|&i| !kept[i])
                    .map(|i| inside[i])
                    .collect();
                (keep.into_iter().map(|i| inside[i]).collect(), removed)
            }
            _ => (inside, Vec::new()),
        };

        let positions: Vec<[f64; 3]> = source_index.iter().map(|&i| cloud[i].position()).collect();
        let attributes = source_index
            .iter()
            .map(|&i| [cloud[i].intensity, cloud[i].z])
            .collect();

        let mut levels = Vec::with_capacity(config.levels.len());
        let mut point_links = None;
        for (l, lc) in config.levels.iter().enumerate() {
            let vox = compute_keypoints_from_positions(&positions, &lc.grid)?;
            if l == 0 {
                let parent_of = vox
                    .assignment
                    .iter()
                    .map(|a| a.expect("points were filtered to the level-0 grid"))
                    .collect();
                point_links = Some(HierarchyLinks::from_parent_of(
                    parent_of,
                    vox.keypoints.len(),
                ));
            }
            levels.push(build_level_edges(vox.keypoints, lc.radius, lc.k_max, l)?);
        }
        let mut links = Vec::with_capacity(levels.len() - 1);
        for l in 0..levels.len() - 1 {
            let link = link_levels(
                &levels[l].keypoints,
                &config.levels[l].grid,
                &levels[l + 1].keypoints,
                &config.levels[l + 1].grid,
            )?;
            link.ensure_no_childless()?;
            links.push(link);
        }

        Ok(Self {
            positions,
            attributes,
            source_index,
            source_len: cloud.len(),
            point_links: point_links.expect("at least one level"),
            levels,
            links,
            out_of_bounds,
            outliers,
        })
    }

    pub fn point_count(&self) -> usize {
        self.positions.len()
    }

    /// Picks the labels of the network points out of whole-cloud labels.
    pub fn gather_labels(&self, labels: &[usize]) -> Vec<usize> {
        self.source_index.iter().map(|&i| labels[i]).collect()
    }

    /// Expands per-network-point predictions to the whole cloud. Outliers take
    /// the prediction of their nearest kept point; out-of-bounds points get
    /// `fill`.
    pub fn expand_predictions(
        &self,
        preds: &[usize],
        cloud: &[CartesianPoint],
        fill: usize,
    ) -> Vec<usize> {
        let mut out = vec![fill; self.source_len];
        for (&src, &p) in self.source_index.iter().zip(preds) {
            out[src] = p;
        }
        if !self.outliers.is_empty() {
            let index = SpatialIndex::for_knn(&self.positions, 1);
            for &o in &self.outliers {
                if let Some(&(nearest, _)) = index.knn_point(cloud[o].position(), 1, None).first() {
                    out[o] = preds[nearest];
                }
            }
        }
        out
    }
}
