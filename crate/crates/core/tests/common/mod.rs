//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::f64::consts::PI;

/// Grid description used by the oracles, independent of the library type.
#[derive(Debug, Clone, Copy)]
pub struct OracleGrid {
    pub r: (f64, f64),
    pub z: (f64, f64),
    pub dr: f64,
    pub sectors: usize,
    pub dz: f64,
}

/// `(i_r, i_theta, i_z)` of `p`, or `None` outside `[min, max)` in r or z.
pub fn oracle_voxel(p: [f64; 3], g: &OracleGrid) -> Option<(usize, usize, usize)> {
    let r = (p[0] * p[0] + p[1] * p[1]).sqrt();
    if r < g.r.0 || r >= g.r.1 || p[2] < g.z.0 || p[2] >= g.z.1 {
        return None;
    }
    let mut theta = if r == 0.0 { 0.0 } else { p[1].atan2(p[0]) };
    if theta < 0.0 {
        theta += 2.0 * PI;
    }
    let sector = 2.0 * PI / g.sectors as f64;
    let it = ((theta / sector) as usize).min(g.sectors - 1);
    let ir = ((r - g.r.0) / g.dr) as usize;
    let iz = ((p[2] - g.z.0) / g.dz) as usize;
    Some((ir, it, iz))
}

/// Group by voxel, then average: voxel → (mean position, member indices).
pub fn oracle_keypoints(
    points: &[[f64; 3]],
    g: &OracleGrid,
) -> BTreeMap<(usize, usize, usize), ([f64; 3], Vec<usize>)> {
    let mut groups: BTreeMap<(usize, usize, usize), Vec<usize>> = BTreeMap::new();
    for (i, p) in points.iter().enumerate() {
        if let Some(v) = oracle_voxel(*p, g) {
            groups.entry(v).or_default().push(i);
        }
    }
    groups
        .into_iter()
        .map(|(v, members)| {
            let n = members.len() as f64;
            let mut mean = [0.0; 3];
            for d in 0..3 {
                mean[d] = members.iter().map(|&m| points[m][d]).sum::<f64>() / n;
            }
            (v, (mean, members))
        })
        .collect()
}

/// Sorted undirected pairs `(u, v)`, `u < v`, with distance strictly below `d`.
pub fn oracle_edges(points: &[[f64; 3]], d: f64) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for u in 0..points.len() {
        for v in u + 1..points.len() {
            let s: f64 = (0..3).map(|k| (points[u][k] - points[v][k]).powi(2)).sum();
            if s.sqrt() < d {
                out.push((u, v));
            }
        }
    }
    out
}

/// Mean distance to the `k` nearest other points, by full sort.
pub fn oracle_knn_stat(points: &[[f64; 3]], k: usize) -> Vec<f64> {
    points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let mut d: Vec<f64> = points
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, q)| ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt())
                .collect();
            d.sort_by(f64::total_cmp);
            d[..k].iter().sum::<f64>() / k as f64
        })
        .collect()
}

/// Lovász-softmax evaluated as `∫₀¹ Δ({i : m_i ≥ t}) dt` per present class,
/// with `Δ(S) = |S| / |fg ∪ S|`, averaged over present classes.
pub fn oracle_lovasz(probs: &[Vec<f64>], labels: &[usize], ignore: Option<usize>) -> f64 {
    let rows: Vec<usize> = (0..labels.len())
        .filter(|&i| Some(labels[i]) != ignore)
        .collect();
    let classes = probs.first().map_or(0, Vec::len);
    let mut total = 0.0;
    let mut present = 0;
    for c in 0..classes {
        let fg: Vec<bool> = rows.iter().map(|&i| labels[i] == c).collect();
        let fg_count = fg.iter().filter(|&&f| f).count();
        if fg_count == 0 {
            continue;
        }
        present += 1;
        let m: Vec<f64> = rows
            .iter()
            .zip(&fg)
            .map(|(&i, &f)| if f { 1.0 - probs[i][c] } else { probs[i][c] })
            .collect();
        let jaccard = |t: f64| {
            let set: Vec<usize> = (0..m.len()).filter(|&k| m[k] >= t).collect();
            if set.is_empty() {
                return 0.0;
            }
            let bg_in = set.iter().filter(|&&k| !fg[k]).count();
            set.len() as f64 / (fg_count + bg_in) as f64
        };
        let mut levels: Vec<f64> = m.clone();
        levels.push(0.0);
        levels.sort_by(f64::total_cmp);
        levels.dedup();
        let mut integral = 0.0;
        for w in levels.windows(2) {
            integral += (w[1] - w[0]) * jaccard(w[1]);
        }
        total += integral;
    }
    if present == 0 {
        0.0
    } else {
        total / present as f64
    }
}

/// `−(1/N) Σ w_y ln p_y` over non-ignored points, one term at a time.
pub fn oracle_wce(probs: &[Vec<f64>], labels: &[usize], w: &[f64], ignore: Option<usize>) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for (row, &y) in probs.iter().zip(labels) {
        if Some(y) == ignore {
            continue;
        }
        sum += -w[y] * row[y].max(1e-12).ln();
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Scalar-by-scalar MLP: weights are `in × out` row-major, relu on hidden
/// layers, linear output.
pub fn oracle_mlp(x: &[f64], layers: &[(Vec<Vec<f64>>, Vec<f64>)]) -> Vec<f64> {
    let mut a = x.to_vec();
    for (l, (w, b)) in layers.iter().enumerate() {
        let mut out = b.clone();
        for (j, o) in out.iter_mut().enumerate() {
            for (i, ai) in a.iter().enumerate() {
                *o += ai * w[i][j];
            }
        }
        if l + 1 < layers.len() {
            out.iter_mut().for_each(|v| *v = v.max(0.0));
        }
        a = out;
    }
    a
}

/// Central difference of `f` at every coordinate of `x`.
pub fn central_difference(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let up = f(&probe);
            probe[i] = orig - h;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `‖a − b‖ / max(‖a‖, ‖b‖, floor)` over whole vectors.
pub fn relative_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nb).max(floor)
}
