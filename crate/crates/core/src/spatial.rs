//! Uniform hash grid over 3D positions.
//!
//! Radius queries are exact: `radius_query(u, d)` returns every `v != u` with
//! `‖x_u − x_v‖₂ < d`, whatever the cell size.

use std::collections::HashMap;

type Cell = [i64; 3];

#[derive(Debug, Clone)]
pub struct SpatialIndex {
    positions: Vec<[f64; 3]>,
    cell_size: f64,
    cells: HashMap<Cell, Vec<usize>>,
    lo: Cell,
    hi: Cell,
}

pub fn distance(a: [f64; 3], b: [f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    (dx * dx + dy * dy + dz * dz).sqrt()
}

impl SpatialIndex {
    /// Builds the grid; `cell_size` should be close to the typical query radius.
    pub fn new(positions: &[[f64; 3]], cell_size: f64) -> Self {
        assert!(
            cell_size > 0.0 && cell_size.is_finite(),
            "cell size must be positive and finite"
        );
        let mut cells: HashMap<Cell, Vec<usize>> = HashMap::new();
        let mut lo = [i64::MAX; 3];
        let mut hi = [i64::MIN; 3];
        for (i, p) in positions.iter().enumerate() {
            let c = cell_of(*p, cell_size);
            for a in 0..3 {
                lo[a] = lo[a].min(c[a]);
                hi[a] = hi[a].max(c[a]);
            }
            cells.entry(c).or_default().push(i);
        }
        Self {
            positions: positions.to_vec(),
            cell_size,
            cells,
            lo,
            hi,
        }
    }

    /// Picks a cell size so that a cell holds roughly `k` points.
    pub fn for_knn(positions: &[[f64; 3]], k: usize) -> Self {
        let mut ext = [0.0f64; 3];
        if let Some(first) = positions.first() {
            let mut lo = *first;
            let mut hi = *first;
            for p in positions {
                for a in 0..3 {
                    lo[a] = lo[a].min(p[a]);
                    hi[a] = hi[a].max(p[a]);
                }
            }
            for a in 0..3 {
                ext[a] = hi[a] - lo[a];
            }
        }
        let longest = ext.iter().cloned().fold(0.0, f64::max);
        // flat or linear clouds: floor thin extents so the volume stays meaningful
        let floor = (longest * 1e-3).max(1e-9);
        let volume: f64 = ext.iter().map(|e| e.max(floor)).product();
        let n = positions.len().max(1) as f64;
        let cell = (volume * k.max(1) as f64 / n).cbrt();
        Self::new(positions, cell.max(floor))
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn position(&self, i: usize) -> [f64; 3] {
        self.positions[i]
    }

    /// Neighbours of node `u` strictly closer than `d`, ascending by index.
    pub fn radius_query(&self, u: usize, d: f64) -> Vec<usize> {
        self.radius_query_point(self.positions[u], d, Some(u))
    }

    pub fn radius_query_point(&self, p: [f64; 3], d: f64, exclude: Option<usize>) -> Vec<usize> {
        let mut out = Vec::new();
        if self.is_empty() || !(d > 0.0) {
            return out;
        }
        let c = cell_of(p, self.cell_size);
        let reach = (d / self.cell_size).ceil() as i64;
        let span = (2 * reach + 1) as u128;
        if span * span * span > self.cells.len() as u128 {
            // Fewer occupied cells than the query box: scan them instead.
            for (cell, members) in &self.cells {
                if (0..3).all(|a| (cell[a] - c[a]).abs() <= reach) {
                    self.collect_within(members, p, d, exclude, &mut out);
                }
            }
        } else {
            for dx in -reach..=reach {
                for dy in -reach..=reach {
                    for dz in -reach..=reach {
                        if let Some(members) = self.cells.get(&[c[0] + dx, c[1] + dy, c[2] + dz]) {
                            self.collect_within(members, p, d, exclude, &mut out);
                        }
                    }
                }
            }
        }
        out.sort_unstable();
        out
    }

    fn collect_within(
        &self,
        members: &[usize],
        p: [f64; 3],
        d: f64,
        exclude: Option<usize>,
        out: &mut Vec<usize>,
    ) {
        for &v in members {
            if Some(v) != exclude && distance(p, self.positions[v]) < d {
                out.push(v);
            }
        }
    }

    /// The `k` nearest other nodes of `u` as `(index, distance)`, ordered by
    /// distance then index. Returns fewer when the index holds fewer nodes.
    pub fn knn(&self, u: usize, k: usize) -> Vec<(usize, f64)> {
        self.knn_point(self.positions[u], k, Some(u))
    }

    pub fn knn_point(&self, p: [f64; 3], k: usize, exclude: Option<usize>) -> Vec<(usize, f64)> {
        let mut found: Vec<(usize, f64)> = Vec::new();
        if k == 0 || self.is_empty() {
            return found;
        }
        let c = cell_of(p, self.cell_size);
        // Chebyshev distance (in cells) from c to the farthest occupied cell.
        let max_shell = (0..3)
            .map(|a| (c[a] - self.lo[a]).abs().max((self.hi[a] - c[a]).abs()))
            .max()
            .unwrap_or(0);
        let push = |members: &[usize], found: &mut Vec<(usize, f64)>| {
            for &v in members {
                if Some(v) != exclude {
                    found.push((v, distance(p, self.positions[v])));
                }
            }
        };
        let mut shell = 0i64;
        loop {
            let shell_cells = if shell == 0 {
                1u128
            } else {
                let s = shell as u128;
                (2 * s + 1).pow(3) - (2 * s - 1).pow(3)
            };
            if shell_cells > self.cells.len() as u128 {
                // Remaining shells are sparse; finish with one pass over the map.
                for (cell, members) in &self.cells {
                    let cheb = (0..3).map(|a| (cell[a] - c[a]).abs()).max().unwrap_or(0);
                    if cheb >= shell {
                        push(members, &mut found);
                    }
                }
                break;
            }
            for dx in -shell..=shell {
                for dy in -shell..=shell {
                    for dz in -shell..=shell {
                        if dx.abs().max(dy.abs()).max(dz.abs()) != shell {
                            continue;
                        }
                        if let Some(members) = self.cells.get(&[c[0] + dx, c[1] + dy, c[2] + dz]) {
                            push(members, &mut found);
                        }
                    }
                }
            }
            if shell >= max_shell {
                break;
            }
            // Anything in shell + 1 or beyond is at least shell * cell away.
            if found.len() >= k {
                sort_by_distance(&mut found);
                if found[k - 1].1 <= shell as f64 * self.cell_size {
                    break;
                }
            }
            shell += 1;
        }
        sort_by_distance(&mut found);
        found.truncate(k);
        found
    }
}

fn sort_by_distance(v: &mut [(usize, f64)]) {
    v.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
}

fn cell_of(p: [f64; 3], size: f64) -> Cell {
    [
        (p[0] / size).floor() as i64,
        (p[1] / size).floor() as i64,
        (p[2] / size).floor() as i64,
    ]
}
