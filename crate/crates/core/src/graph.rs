//! Intra-level radius graphs and inter-level containment links.

use std::collections::HashMap;

use thiserror::Error;

use crate::geometry::{cylindrical_of, voxel_index, Keypoint, VoxelGridSpec, VoxelId};
use crate::spatial::{distance, SpatialIndex};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("edge radius must be positive, got {0}")]
    InvalidRadius(f64),
    #[error("cannot build a graph without nodes")]
    NoNodes,
    #[error("child {child} (voxel {voxel:?}) has no parent keypoint")]
    OrphanChild {
        child: usize,
        voxel: Option<VoxelId>,
    },
    #[error("parent {0} has no children")]
    ChildlessParent(usize),
}

/// Keypoints of one level plus their radius adjacency.
#[derive(Debug, Clone)]
pub struct LevelGraph {
    pub level: usize,
    pub radius: f64,
    pub keypoints: Vec<Keypoint>,
    /// Sorted neighbour lists; symmetric, no self-loops.
    pub neighbors: Vec<Vec<usize>>,
}

impl LevelGraph {
    /// Graph over `keypoints` with no edges.
    pub fn isolated(level: usize, radius: f64, keypoints: Vec<Keypoint>) -> Self {
        let neighbors = vec![Vec::new(); keypoints.len()];
        Self {
            level,
            radius,
            keypoints,
            neighbors,
        }
    }

    pub fn node_count(&self) -> usize {
        self.keypoints.len()
    }

    /// Number of undirected edges.
    pub fn edge_count(&self) -> usize {
        self.neighbors.iter().map(Vec::len).sum::<usize>() / 2
    }

    pub fn positions(&self) -> Vec<[f64; 3]> {
        self.keypoints.iter().map(|k| k.position).collect()
    }

    /// Directed edges `(source, destination)` grouped by destination, i.e.
    /// every undirected edge appears once in each direction.
    pub fn directed_edges(&self) -> Vec<(usize, usize)> {
        self.neighbors
            .iter()
            .enumerate()
            .flat_map(|(u, ns)| ns.iter().map(move |&v| (v, u)))
            .collect()
    }

    pub fn degree_histogram(&self) -> Vec<usize> {
        let max = self.neighbors.iter().map(Vec::len).max().unwrap_or(0);
        let mut h = vec![0; max + 1];
        for n in &self.neighbors {
            h[n.len()] += 1;
        }
        h
    }

    /// Fraction of undirected edges whose endpoints share a label. Edges
    /// touching an unlabelled node (`None`) are skipped.
    pub fn homophily(&self, node_labels: &[Option<usize>]) -> Option<f64> {
        let mut same = 0usize;
        let mut total = 0usize;
        for (u, ns) in self.neighbors.iter().enumerate() {
            for &v in ns.iter().filter(|&&v| v > u) {
                if let (Some(a), Some(b)) = (node_labels[u], node_labels[v]) {
                    total += 1;
                    same += usize::from(a == b);
                }
            }
        }
        (total > 0).then(|| same as f64 / total as f64)
    }
}

/// Radius graph over keypoint positions: `u ~ v` iff `u != v` and
/// `‖x_u − x_v‖ < d`. With `k_max`, each node keeps its nearest `k_max`
/// candidates (lower index first on ties) and an edge survives only when
/// both endpoints keep it.
pub fn build_level_edges(
    keypoints: Vec<Keypoint>,
    d: f64,
    k_max: Option<usize>,
    level: usize,
) -> Result<LevelGraph, GraphError> {
    if !(d > 0.0) || !d.is_finite() {
        return Err(GraphError::InvalidRadius(d));
    }
    if keypoints.is_empty() {
        return Err(GraphError::NoNodes);
    }
    let positions: Vec<[f64; 3]> = keypoints.iter().map(|k| k.position).collect();
    let index = SpatialIndex::new(&positions, d);
    let mut neighbors: Vec<Vec<usize>> = (0..positions.len())
        .map(|u| index.radius_query(u, d))
        .collect();
    if let Some(cap) = k_max {
        let kept: Vec<Vec<usize>> = neighbors
            .iter()
            .enumerate()
            .map(|(u, ns)| {
                let mut by_dist: Vec<(f64, usize)> = ns
                    .iter()
                    .map(|&v| (distance(positions[u], positions[v]), v))
                    .collect();
                by_dist.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                let mut k: Vec<usize> = by_dist.into_iter().take(cap).map(|(_, v)| v).collect();
                k.sort_unstable();
                k
            })
            .collect();
        neighbors = kept
            .iter()
            .enumerate()
            .map(|(u, ns)| {
                ns.iter()
                    .copied()
                    .filter(|&v| kept[v].binary_search(&u).is_ok())
                    .collect()
            })
            .collect();
    }
    Ok(LevelGraph {
        level,
        radius: d,
        keypoints,
        neighbors,
    })
}

/// Containment map from a finer level onto the next coarser one.
#[derive(Debug, Clone, PartialEq)]
pub struct HierarchyLinks {
    pub parent_of: Vec<usize>,
    pub children_of: Vec<Vec<usize>>,
}

impl HierarchyLinks {
    /// Inverts `parent_of`; child lists come out ascending.
    pub fn from_parent_of(parent_of: Vec<usize>, parent_count: usize) -> Self {
        let mut children_of = vec![Vec::new(); parent_count];
        for (c, &p) in parent_of.iter().enumerate() {
            children_of[p].push(c);
        }
        Self {
            parent_of,
            children_of,
        }
    }

    pub fn child_count(&self) -> usize {
        self.parent_of.len()
    }

    pub fn parent_count(&self) -> usize {
        self.children_of.len()
    }

    pub fn ensure_no_childless(&self) -> Result<(), GraphError> {
        match self.children_of.iter().position(Vec::is_empty) {
            Some(p) => Err(GraphError::ChildlessParent(p)),
            None => Ok(()),
        }
    }

    /// `h[k]` = number of parents with exactly `k` children.
    pub fn fanout_histogram(&self) -> Vec<usize> {
        let max = self.children_of.iter().map(Vec::len).max().unwrap_or(0);
        let mut h = vec![0; max + 1];
        for c in &self.children_of {
            h[c.len()] += 1;
        }
        h
    }
}

/// Links each child keypoint to the parent keypoint whose voxel (under
/// `parent_spec`) contains the child's position.
///
/// The mean of points in an annular sector can sit a hair inside the sector's
/// inner arc. If that lands in an empty or out-of-range parent voxel, the
/// child's voxel centre is used instead; with nested grids that centre always
/// lies in the parent voxel holding all of the child's members.
pub fn link_levels(
    children: &[Keypoint],
    child_spec: &VoxelGridSpec,
    parents: &[Keypoint],
    parent_spec: &VoxelGridSpec,
) -> Result<HierarchyLinks, GraphError> {
    let by_voxel: HashMap<VoxelId, usize> = parents
        .iter()
        .enumerate()
        .map(|(i, p)| (p.voxel, i))
        .collect();
    let mut parent_of = Vec::with_capacity(children.len());
    for (ci, child) in children.iter().enumerate() {
        let direct = voxel_index(&cylindrical_of(child.position), parent_spec);
        let parent = direct.and_then(|v| by_voxel.get(&v).copied()).or_else(|| {
            let centre = child_spec.voxel_center(child.voxel);
            voxel_index(&centre, parent_spec).and_then(|v| by_voxel.get(&v).copied())
        });
        match parent {
            Some(p) => parent_of.push(p),
            None => {
                return Err(GraphError::OrphanChild {
                    child: ci,
                    voxel: direct,
                })
            }
        }
    }
    Ok(HierarchyLinks::from_parent_of(parent_of, parents.len()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kp(p: [f64; 3]) -> Keypoint {
        Keypoint {
            position: p,
            voxel: VoxelId {
                i_r: 0,
                i_theta: 0,
                i_z: 0,
            },
            member_indices: vec![0],
        }
    }

    #[test]
    fn close_pair_forms_edge() {
        let g = build_level_edges(vec![kp([0.0; 3]), kp([0.5, 0.0, 0.0])], 1.0, None, 0).unwrap();
        assert_eq!(g.edge_count(), 1);
        assert_eq!(g.neighbors, vec![vec![1], vec![0]]);
    }

    #[test]
    fn boundary_distance_is_excluded() {
        let g = build_level_edges(vec![kp([0.0; 3]), kp([1.0, 0.0, 0.0])], 1.0, None, 0).unwrap();
        assert_eq!(g.edge_count(), 0);
    }

    #[test]
    fn invalid_inputs() {
        assert_eq!(
            build_level_edges(vec![kp([0.0; 3])], 0.0, None, 0).unwrap_err(),
            GraphError::InvalidRadius(0.0)
        );
        assert_eq!(
            build_level_edges(vec![], 1.0, None, 0).unwrap_err(),
            GraphError::NoNodes
        );
    }

    #[test]
    fn cap_keeps_nearest_and_stays_symmetric() {
        // Star: centre 0 with four leaves at growing distance.
        let nodes = vec![
            kp([0.0; 3]),
            kp([0.1, 0.0, 0.0]),
            kp([0.0, 0.2, 0.0]),
            kp([-0.3, 0.0, 0.0]),
            kp([0.0, -0.4, 0.0]),
        ];
        let g = build_level_edges(nodes, 0.45, Some(2), 0).unwrap();
        assert_eq!(g.neighbors[0], vec![1, 2]);
        for (u, ns) in g.neighbors.iter().enumerate() {
            assert!(ns.len() <= 2);
            for &v in ns {
                assert!(g.neighbors[v].contains(&u));
            }
        }
    }

    #[test]
    fn homophily_and_histograms() {
        let g = build_level_edges(
            vec![kp([0.0; 3]), kp([0.5, 0.0, 0.0]), kp([1.0, 0.0, 0.0])],
            0.6,
            None,
            0,
        )
        .unwrap();
        assert_eq!(g.degree_histogram(), vec![0, 2, 1]);
        assert_eq!(g.homophily(&[Some(1), Some(1), Some(1)]), Some(1.0));
        assert_eq!(g.homophily(&[Some(1), Some(1), Some(2)]), Some(0.5));
        assert_eq!(g.homophily(&[None, Some(1), None]), None);
        assert_eq!(g.directed_edges(), vec![(1, 0), (0, 1), (2, 1), (1, 2)]);
    }

    #[test]
    fn links_invert() {
        let l = HierarchyLinks::from_parent_of(vec![1, 0, 1], 2);
        assert_eq!(l.children_of, vec![vec![1], vec![0, 2]]);
        assert_eq!(l.fanout_histogram(), vec![0, 1, 1]);
        assert!(l.ensure_no_childless().is_ok());
        let l = HierarchyLinks::from_parent_of(vec![1], 2);
        assert_eq!(l.ensure_no_childless(), Err(GraphError::ChildlessParent(0)));
    }
}
