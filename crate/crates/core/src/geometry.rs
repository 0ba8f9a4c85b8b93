//! Cylindrical partitioning of LiDAR clouds.
//!
//! Points are binned by linear intervals of radius, azimuth and height; every
//! non-empty bin yields one keypoint at the mean position of its members.

use std::collections::BTreeMap;
use std::f64::consts::TAU;

use thiserror::Error;

use crate::spatial::SpatialIndex;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("invalid voxel grid: {0}")]
    InvalidGrid(String),
    #[error("point cloud is empty")]
    EmptyCloud,
    #[error("every point fell outside the voxel grid ({discarded} discarded)")]
    EmptyAfterFilter { discarded: usize },
    #[error("outlier filter needs more than k={k} points, got {count}")]
    TooFewPoints { count: usize, k: usize },
    #[error("invalid outlier filter parameters: {0}")]
    InvalidFilter(String),
}

/// Raw LiDAR return.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CartesianPoint {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub intensity: f64,
}

impl CartesianPoint {
    pub fn new(x: f64, y: f64, z: f64, intensity: f64) -> Self {
        Self { x, y, z, intensity }
    }

    pub fn position(&self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite() && self.intensity.is_finite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CylCoord {
    pub r: f64,
    /// Azimuth in `[0, 2π)`.
    pub theta: f64,
    pub z: f64,
}

impl CylCoord {
    pub fn to_cartesian(&self) -> [f64; 3] {
        [self.r * self.theta.cos(), self.r * self.theta.sin(), self.z]
    }
}

/// Converts to `(r, θ, z)`. On the z-axis θ is defined as 0.
pub fn to_cylindrical(p: &CartesianPoint) -> CylCoord {
    cylindrical_of(p.position())
}

pub(crate) fn cylindrical_of(p: [f64; 3]) -> CylCoord {
    let [x, y, z] = p;
    let r = x.hypot(y);
    let theta = if r == 0.0 {
        0.0
    } else {
        let t = y.atan2(x);
        let t = if t < 0.0 { t + TAU } else { t };
        // -tiny + 2π rounds to exactly 2π
        if t >= TAU {
            0.0
        } else {
            t
        }
    };
    CylCoord { r, theta, z }
}

/// Bin indices of one cylindrical voxel. Ordering is lexicographic in
/// `(i_r, i_theta, i_z)`, which is the canonical keypoint order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct VoxelId {
    pub i_r: usize,
    pub i_theta: usize,
    pub i_z: usize,
}

/// Parametrization of a cylindrical partition at one coarseness level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VoxelGridSpec {
    pub r_min: f64,
    pub r_max: f64,
    pub delta_r: f64,
    pub delta_theta: f64,
    pub z_min: f64,
    pub z_max: f64,
    pub delta_z: f64,
}

impl VoxelGridSpec {
    pub fn new(
        r_range: (f64, f64),
        z_range: (f64, f64),
        delta_r: f64,
        delta_theta: f64,
        delta_z: f64,
    ) -> Result<Self, GeometryError> {
        let spec = Self {
            r_min: r_range.0,
            r_max: r_range.1,
            delta_r,
            delta_theta,
            z_min: z_range.0,
            z_max: z_range.1,
            delta_z,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Grid with `theta_bins` equal azimuth sectors.
    pub fn with_sectors(
        r_range: (f64, f64),
        z_range: (f64, f64),
        delta_r: f64,
        theta_bins: usize,
        delta_z: f64,
    ) -> Result<Self, GeometryError> {
        if theta_bins == 0 {
            return Err(GeometryError::InvalidGrid("zero azimuth sectors".into()));
        }
        Self::new(r_range, z_range, delta_r, TAU / theta_bins as f64, delta_z)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let all = [
            self.r_min,
            self.r_max,
            self.delta_r,
            self.delta_theta,
            self.z_min,
            self.z_max,
            self.delta_z,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(GeometryError::InvalidGrid("non-finite parameter".into()));
        }
        if self.r_min < 0.0 || self.r_min >= self.r_max {
            return Err(GeometryError::InvalidGrid(format!(
                "radial range [{}, {}) is empty or negative",
                self.r_min, self.r_max
            )));
        }
        if self.z_min >= self.z_max {
            return Err(GeometryError::InvalidGrid(format!(
                "height range [{}, {}) is empty",
                self.z_min, self.z_max
            )));
        }
        if self.delta_r <= 0.0 || self.delta_z <= 0.0 || self.delta_theta <= 0.0 {
            return Err(GeometryError::InvalidGrid(
                "bin sizes must be positive".into(),
            ));
        }
        let sectors = TAU / self.delta_theta;
        let rounded = sectors.round();
        if rounded < 1.0 || (sectors - rounded).abs() > 1e-9 * rounded.max(1.0) {
            return Err(GeometryError::InvalidGrid(format!(
                "azimuth step {} does not divide 2π evenly",
                self.delta_theta
            )));
        }
        Ok(())
    }

    pub fn r_bins(&self) -> usize {
        ((self.r_max - self.r_min) / self.delta_r).ceil() as usize
    }

    pub fn theta_bins(&self) -> usize {
        (TAU / self.delta_theta).round() as usize
    }

    pub fn z_bins(&self) -> usize {
        ((self.z_max - self.z_min) / self.delta_z).ceil() as usize
    }

    /// True when every voxel of `self` lies inside exactly one voxel of
    /// `coarser` (same outer bounds, integer bin ratios).
    pub fn nests_in(&self, coarser: &VoxelGridSpec) -> bool {
        fn ratio_ok(fine: f64, coarse: f64) -> bool {
            let q = coarse / fine;
            q >= 1.0 && (q - q.round()).abs() < 1e-9 * q
        }
        self.r_min == coarser.r_min
            && self.r_max == coarser.r_max
            && self.z_min == coarser.z_min
            && self.z_max == coarser.z_max
            && ratio_ok(self.delta_r, coarser.delta_r)
            && ratio_ok(self.delta_z, coarser.delta_z)
            && self.theta_bins().is_multiple_of(coarser.theta_bins())
    }

    /// Cylindrical coordinates of the voxel centre.
    pub fn voxel_center(&self, id: VoxelId) -> CylCoord {
        CylCoord {
            r: self.r_min + (id.i_r as f64 + 0.5) * self.delta_r,
            theta: (id.i_theta as f64 + 0.5) * self.delta_theta,
            z: self.z_min + (id.i_z as f64 + 0.5) * self.delta_z,
        }
    }
}

/// Half-open binning; `None` when `r` or `z` leave `[min, max)`.
pub fn voxel_index(c: &CylCoord, spec: &VoxelGridSpec) -> Option<VoxelId> {
    if !(c.r >= spec.r_min && c.r < spec.r_max && c.z >= spec.z_min && c.z < spec.z_max) {
        return None;
    }
    let i_r = (((c.r - spec.r_min) / spec.delta_r).floor() as usize).min(spec.r_bins() - 1);
    let i_z = (((c.z - spec.z_min) / spec.delta_z).floor() as usize).min(spec.z_bins() - 1);
    let n_theta = spec.theta_bins();
    let i_theta = ((c.theta / spec.delta_theta).floor() as usize).min(n_theta - 1);
    Some(VoxelId { i_r, i_theta, i_z })
}

/// Representative node of one non-empty voxel.
#[derive(Debug, Clone, PartialEq)]
pub struct Keypoint {
    pub position: [f64; 3],
    pub voxel: VoxelId,
    pub member_indices: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Voxelization {
    /// Sorted by voxel id.
    pub keypoints: Vec<Keypoint>,
    /// Keypoint owning each input point, `None` for out-of-bounds points.
    pub assignment: Vec<Option<usize>>,
    pub discarded: usize,
}

pub fn compute_keypoints(
    points: &[CartesianPoint],
    spec: &VoxelGridSpec,
) -> Result<Voxelization, GeometryError> {
    let positions: Vec<[f64; 3]> = points.iter().map(CartesianPoint::position).collect();
    compute_keypoints_from_positions(&positions, spec)
}

pub fn compute_keypoints_from_positions(
    positions: &[[f64; 3]],
    spec: &VoxelGridSpec,
) -> Result<Voxelization, GeometryError> {
    if positions.is_empty() {
        return Err(GeometryError::EmptyCloud);
    }
    spec.validate()?;
    let mut bins: BTreeMap<VoxelId, Vec<usize>> = BTreeMap::new();
    let mut discarded = 0;
    for (i, p) in positions.iter().enumerate() {
        match voxel_index(&cylindrical_of(*p), spec) {
            Some(id) => bins.entry(id).or_default().push(i),
            None => discarded += 1,
        }
    }
    if bins.is_empty() {
        return Err(GeometryError::EmptyAfterFilter { discarded });
    }
    let mut assignment = vec![None; positions.len()];
    let keypoints = bins
        .into_iter()
        .enumerate()
        .map(|(k, (voxel, members))| {
            let mut sum = [0.0; 3];
            for &m in &members {
                assignment[m] = Some(k);
                for (s, v) in sum.iter_mut().zip(positions[m]) {
                    *s += v;
                }
            }
            let n = members.len() as f64;
            Keypoint {
                position: sum.map(|s| s / n),
                voxel,
                member_indices: members,
            }
        })
        .collect();
    Ok(Voxelization {
        keypoints,
        assignment,
        discarded,
    })
}

/// Statistical outlier filter settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OutlierFilter {
    pub k: usize,
    pub ratio: f64,
}

impl Default for OutlierFilter {
    fn default() -> Self {
        Self { k: 8, ratio: 2.0 }
    }
}

/// Mean distance of each point to its `k` nearest neighbours.
pub fn mean_knn_distances(positions: &[[f64; 3]], k: usize) -> Vec<f64> {
    let index = SpatialIndex::for_knn(positions, k);
    (0..positions.len())
        .map(|i| {
            let nn = index.knn(i, k);
            nn.iter().map(|&(_, d)| d).sum::<f64>() / nn.len() as f64
        })
        .collect()
}

/// Indices of the points kept by the k-NN statistical filter, in input order.
///
/// A point is dropped when its mean k-NN distance exceeds
/// `mean + ratio * std` of that statistic over the whole cloud.
pub fn outlier_survivors(
    points: &[CartesianPoint],
    k: usize,
    ratio: f64,
) -> Result<Vec<usize>, GeometryError> {
    if k == 0 {
        return Err(GeometryError::InvalidFilter("k must be at least 1".into()));
    }
    if !(ratio > 0.0) {
        return Err(GeometryError::InvalidFilter(
            "ratio must be positive".into(),
        ));
    }
    if points.len() <= k {
        return Err(GeometryError::TooFewPoints {
            count: points.len(),
            k,
        });
    }
    let positions: Vec<[f64; 3]> = points.iter().map(CartesianPoint::position).collect();
    let stat = mean_knn_distances(&positions, k);
    let n = stat.len() as f64;
    let mean = stat.iter().sum::<f64>() / n;
    let var = stat.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / n;
    let threshold = mean + ratio * var.sqrt();
    Ok(stat
        .iter()
        .enumerate()
        .filter(|&(_, &s)| s <= threshold)
        .map(|(i, _)| i)
        .collect())
}

pub fn remove_outliers(
    points: &[CartesianPoint],
    k: usize,
    ratio: f64,
) -> Result<Vec<CartesianPoint>, GeometryError> {
    Ok(outlier_survivors(points, k, ratio)?
        .into_iter()
        .map(|i| points[i])
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn spec() -> VoxelGridSpec {
        VoxelGridSpec::new((0.0, 10.0), (-2.0, 2.0), 1.0, PI / 2.0, 1.0).unwrap()
    }

    #[test]
    fn cylindrical_examples() {
        let c = to_cylindrical(&CartesianPoint::new(1.0, 0.0, 0.0, 0.0));
        assert_eq!((c.r, c.theta, c.z), (1.0, 0.0, 0.0));
        let c = to_cylindrical(&CartesianPoint::new(0.0, -1.0, 2.0, 0.0));
        assert_eq!(c.r, 1.0);
        assert!((c.theta - 3.0 * PI / 2.0).abs() < 1e-15);
        assert_eq!(c.z, 2.0);
        let c = to_cylindrical(&CartesianPoint::new(0.0, 0.0, 5.0, 0.0));
        assert_eq!((c.r, c.theta, c.z), (0.0, 0.0, 5.0));
    }

    #[test]
    fn theta_never_reaches_tau() {
        let c = to_cylindrical(&CartesianPoint::new(1.0, -1e-300, 0.0, 0.0));
        assert!(c.theta >= 0.0 && c.theta < TAU);
    }

    #[test]
    fn voxel_index_examples() {
        let s = spec();
        let c = CylCoord {
            r: 2.5,
            theta: PI,
            z: 0.2,
        };
        assert_eq!(
            voxel_index(&c, &s),
            Some(VoxelId {
                i_r: 2,
                i_theta: 2,
                i_z: 2
            })
        );
        assert_eq!(
            voxel_index(
                &CylCoord {
                    r: 10.0,
                    theta: 0.0,
                    z: 0.0
                },
                &s
            ),
            None
        );
        assert_eq!(
            voxel_index(
                &CylCoord {
                    r: 1.0,
                    theta: 0.0,
                    z: 2.0
                },
                &s
            ),
            None
        );
        let wrap = CylCoord {
            r: 1.0,
            theta: TAU - 1e-9,
            z: 0.0,
        };
        assert_eq!(voxel_index(&wrap, &s).unwrap().i_theta, 3);
    }

    #[test]
    fn grid_validation() {
        assert!(VoxelGridSpec::new((0.0, 10.0), (-2.0, 2.0), 1.0, 1.0, 1.0).is_err());
        assert!(VoxelGridSpec::new((5.0, 5.0), (-2.0, 2.0), 1.0, PI, 1.0).is_err());
        assert!(VoxelGridSpec::new((0.0, 5.0), (2.0, -2.0), 1.0, PI, 1.0).is_err());
        assert!(VoxelGridSpec::new((0.0, 5.0), (-2.0, 2.0), 0.0, PI, 1.0).is_err());
        let s = VoxelGridSpec::new((0.0, 10.5), (-2.0, 2.0), 1.0, PI / 3.0, 3.0).unwrap();
        assert_eq!((s.r_bins(), s.theta_bins(), s.z_bins()), (11, 6, 2));
    }

    #[test]
    fn nesting() {
        let fine = VoxelGridSpec::with_sectors((0.0, 24.0), (-1.0, 5.0), 0.5, 180, 0.5).unwrap();
        let coarse = VoxelGridSpec::with_sectors((0.0, 24.0), (-1.0, 5.0), 2.0, 45, 2.0).unwrap();
        assert!(fine.nests_in(&coarse));
        assert!(!coarse.nests_in(&fine));
    }

    #[test]
    fn single_point_keypoint() {
        let pts = [CartesianPoint::new(1.0, 1.0, 1.0, 0.3)];
        let v = compute_keypoints(&pts, &spec()).unwrap();
        assert_eq!(v.keypoints.len(), 1);
        assert_eq!(v.keypoints[0].position, [1.0, 1.0, 1.0]);
        assert_eq!(v.discarded, 0);
    }

    #[test]
    fn two_point_mean() {
        let pts = [
            CartesianPoint::new(1.0, 1.0, 1.0, 0.0),
            CartesianPoint::new(1.2, 1.0, 1.0, 0.0),
        ];
        let v = compute_keypoints(&pts, &spec()).unwrap();
        assert_eq!(v.keypoints.len(), 1);
        let p = v.keypoints[0].position;
        assert!((p[0] - 1.1).abs() < 1e-15 && p[1] == 1.0 && p[2] == 1.0);
        assert_eq!(v.keypoints[0].member_indices, vec![0, 1]);
    }

    #[test]
    fn everything_out_of_bounds() {
        let pts = [CartesianPoint::new(50.0, 0.0, 0.0, 0.0)];
        assert_eq!(
            compute_keypoints(&pts, &spec()),
            Err(GeometryError::EmptyAfterFilter { discarded: 1 })
        );
        assert_eq!(
            compute_keypoints(&[], &spec()),
            Err(GeometryError::EmptyCloud)
        );
    }

    #[test]
    fn outlier_identical_points_kept() {
        let pts = vec![CartesianPoint::new(1.0, 2.0, 3.0, 0.0); 20];
        assert_eq!(remove_outliers(&pts, 5, 2.0).unwrap().len(), 20);
    }

    #[test]
    fn outlier_too_few() {
        let pts = vec![CartesianPoint::default(); 3];
        assert_eq!(
            remove_outliers(&pts, 5, 2.0),
            Err(GeometryError::TooFewPoints { count: 3, k: 5 })
        );
        assert!(remove_outliers(&pts, 0, 2.0).is_err());
        assert!(remove_outliers(&pts, 1, 0.0).is_err());
    }
}
