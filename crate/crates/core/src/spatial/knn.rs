//! Exact k-nearest neighbors.
//!
//! Both routes return identical results: neighbors sorted by squared
//! Euclidean distance, ties broken by ascending key index.


use super::NeighborIndex;
use crate::error::{invalid, Result};
use crate::types::{dist2, Point, PointCloud};

fn check(queries: usize, keys: usize, k: usize) -> Result<()> {
    if k == 0 {
        return Err(invalid("k must be positive"));
    }
    if k > keys {
        return Err(invalid(format!("k = {k} exceeds key count {keys}")));
    }
    let _ = queries;
    Ok(())
}

fn brute_row(q: &Point, keys: &[Point], k: usize, scratch: &mut Vec<(f64, usize)>, out: &mut Vec<usize>) {
    scratch.clear();
    scratch.extend(keys.iter().enumerate().map(|(i, p)| (dist2(q, p), i)));
    let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if k < scratch.len() {
        scratch.select_nth_unstable_by(k - 1, cmp);
        scratch.truncate(k);
    }
    scratch.sort_unstable_by(cmp);
    out.extend(scratch.iter().map(|e| e.1));
}

pub fn knn_bruteforce_points(queries: &[Point], keys: &[Point], k: usize) -> Result<NeighborIndex> {
    check(queries.len(), keys.len(), k)?;
    let mut flat = Vec::with_capacity(queries.len() * k);
    let mut scratch = Vec::with_capacity(keys.len());
    for q in queries {
        brute_row(q, keys, k, &mut scratch, &mut flat);
    }
    Ok(NeighborIndex::from_parts(k, flat, keys.len()))
}

pub fn knn_bruteforce(queries: &PointCloud, keys: &PointCloud, k: usize) -> Result<NeighborIndex> {
    knn_bruteforce_points(queries.points(), keys.points(), k)
}

pub fn knn_grid(queries: &PointCloud, keys: &PointCloud, k: usize) -> Result<NeighborIndex> {
    knn_grid_points(queries.points(), keys.points(), k)
}

pub fn knn_grid_points(queries: &[Point], keys: &[Point], k: usize) -> Result<NeighborIndex> {
    check(queries.len(), keys.len(), k)?;
    let grid = KeyGrid::build(keys, queries, k);
    let mut flat = Vec::with_capacity(queries.len() * k);
    let mut best = Vec::with_capacity(k + 1);
    let mut scratch = Vec::new();
    for q in queries {
        grid.query(q, k, &mut best, &mut scratch, &mut flat);
    }
    Ok(NeighborIndex::from_parts(k, flat, keys.len()))
}

/// Index of the nearest key for every query (k = 1, grid route).
pub(crate) fn nearest_one(queries: &[Point], keys: &[Point]) -> Vec<usize> {
    debug_assert!(!keys.is_empty());
    knn_grid_points(queries, keys, 1).expect("non-empty keys").into_flat()
}

type Cell = [i64; 3];

/// Uniform dense grid over the key set, cells stored CSR-style.
struct KeyGrid<'a> {
    keys: &'a [Point],
    origin: Point,
    edge: f64,
    /// Inclusive range of occupied cell coordinates.
    lo: Cell,
    hi: Cell,
    dims: [usize; 3],
    /// `order[start[c]..start[c + 1]]` are the keys in cell `c`, ascending.
    start: Vec<u32>,
    order: Vec<u32>,
}

/// Median nearest-neighbor distance over an evenly spaced sample of keys.
fn median_nn_scale(keys: &[Point]) -> f64 {
    let n = keys.len();
    if n < 2 {
        return 0.0;
    }
    let samples = n.min(64);
    let mut d: Vec<f64> = (0..samples)
        .map(|s| {
            let i = s * n / samples;
            keys.iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, p)| dist2(&keys[i], p))
                .fold(f64::INFINITY, f64::min)
                .sqrt()
        })
        .collect();
    d.sort_unstable_by(f64::total_cmp);
    d[d.len() / 2]
}

/// Median query-to-nearest-key distance over an evenly spaced sample of queries.
fn median_query_scale(queries: &[Point], keys: &[Point]) -> f64 {
    let n = queries.len();
    if n == 0 {
        return 0.0;
    }
    let samples = n.min(32);
    let mut d: Vec<f64> = (0..samples)
        .map(|s| {
            let q = &queries[s * n / samples];
            keys.iter().map(|p| dist2(q, p)).fold(f64::INFINITY, f64::min).sqrt()
        })
        .collect();
    d.sort_unstable_by(f64::total_cmp);
    d[d.len() / 2]
}

impl<'a> KeyGrid<'a> {
    fn build(keys: &'a [Point], queries: &[Point], k: usize) -> Self {
        let mut min = keys[0];
        let mut max = keys[0];
        for p in keys {
            for a in 0..3 {
                min[a] = min[a].min(p[a]);
                max[a] = max[a].max(p[a]);
            }
        }
        let diag = dist2(&min, &max).sqrt();
        // Queries far from the keys (noisy points off a surface) need coarser
        // cells than the key spacing alone suggests.
        let mut edge = (median_nn_scale(keys) * (k as f64).cbrt().max(1.0) * 2.0).max(median_query_scale(queries, keys) * 1.5);
        if !(edge.is_finite() && edge > 0.0) {
            edge = if diag > 0.0 { diag / (keys.len() as f64).cbrt() } else { 1.0 };
        }
        // Bound the dense cell count by a multiple of the key count.
        let cap = (8 * keys.len()).max(1 << 12) as f64;
        let cells_at = |e: f64| (0..3).map(|a| ((max[a] - min[a]) / e).floor() + 1.0).product::<f64>();
        edge = edge.max(diag * 1e-9).max(f64::MIN_POSITIVE);
        while cells_at(edge) > cap {
            edge *= 1.25;
        }
        let origin = min;

        let mut grid =
            Self { keys, origin, edge, lo: [0; 3], hi: [0; 3], dims: [1; 3], start: Vec::new(), order: Vec::new() };
        grid.hi = grid.cell(&max).map(|v| v.max(0));
        grid.dims = std::array::from_fn(|a| (grid.hi[a] + 1) as usize);
        let ncells = grid.dims.iter().product::<usize>();
        let cell_of: Vec<usize> = keys.iter().map(|p| grid.linear(&grid.cell(p))).collect();
        let mut start = vec![0u32; ncells + 1];
        for &c in &cell_of {
            start[c + 1] += 1;
        }
        for c in 0..ncells {
            start[c + 1] += start[c];
        }
        let mut fill = start.clone();
        let mut order = vec![0u32; keys.len()];
        for (i, &c) in cell_of.iter().enumerate() {
            order[fill[c] as usize] = i as u32;
            fill[c] += 1;
        }
        grid.start = start;
        grid.order = order;
        grid
    }

    fn linear(&self, c: &Cell) -> usize {
        let f = |a: usize| c[a].clamp(0, self.hi[a]) as usize;
        f(0) + self.dims[0] * (f(1) + self.dims[1] * f(2))
    }

    fn cell(&self, p: &Point) -> Cell {
        let f = |a: usize| ((p[a] - self.origin[a]) / self.edge).floor() as i64;
        [f(0), f(1), f(2)]
    }

    fn visit_cell(&self, c: &Cell, q: &Point, k: usize, best: &mut Vec<(f64, usize)>) {
        let l = self.linear(c);
        let (s, e) = (self.start[l] as usize, self.start[l + 1] as usize);
        for &i in &self.order[s..e] {
            let cand = (dist2(q, &self.keys[i as usize]), i as usize);
            if best.len() == k {
                let worst = best[k - 1];
                if cand.0 > worst.0 || (cand.0 == worst.0 && cand.1 > worst.1) {
                    continue;
                }
            }
            let pos = best.partition_point(|b| b.0 < cand.0 || (b.0 == cand.0 && b.1 < cand.1));
            best.insert(pos, cand);
            best.truncate(k);
        }
    }

    fn query(
        &self,
        q: &Point,
        k: usize,
        best: &mut Vec<(f64, usize)>,
        scratch: &mut Vec<(f64, usize)>,
        out: &mut Vec<usize>,
    ) {
        best.clear();
        let c = self.cell(q);
        let max_ring = (0..3)
            .map(|a| (c[a] - self.lo[a]).abs().max((self.hi[a] - c[a]).abs()))
            .max()
            .unwrap_or(0);
        // Past this many enumerated cells a linear scan is cheaper.
        let budget = 8 * self.keys.len() as u64 + 64;
        let mut visited = 0u64;
        let slack = self.edge * 1e-9 + 1e-12 * q.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        // Rings closer than the occupied block are empty.
        let mut r = (0..3)
            .map(|a| (self.lo[a] - c[a]).max(c[a] - self.hi[a]).max(0))
            .max()
            .unwrap_or(0);
        loop {
            visited += 1;
            // Cells at Chebyshev distance exactly r, clipped to the occupied range.
            let zr = (c[2] - r).max(self.lo[2])..=(c[2] + r).min(self.hi[2]);
            let yr = (c[1] - r).max(self.lo[1])..=(c[1] + r).min(self.hi[1]);
            for z in zr {
                for y in yr.clone() {
                    let shell = (z - c[2]).abs() == r || (y - c[1]).abs() == r;
                    if shell {
                        let x0 = (c[0] - r).max(self.lo[0]);
                        let x1 = (c[0] + r).min(self.hi[0]);
                        for x in x0..=x1 {
                            self.visit_cell(&[x, y, z], q, k, best);
                        }
                        visited += (x1 - x0 + 1).max(0) as u64;
                    } else {
                        for x in [c[0] - r, c[0] + r] {
                            if x >= self.lo[0] && x <= self.hi[0] {
                                self.visit_cell(&[x, y, z], q, k, best);
                            }
                        }
                        visited += 2;
                    }
                }
            }
            if r >= max_ring {
                break;
            }
            if best.len() == k {
                // Distance from q to the outside of the searched block.
                let mut bound = f64::INFINITY;
                for a in 0..3 {
                    let lo = self.origin[a] + (c[a] - r) as f64 * self.edge;
                    let hi = self.origin[a] + (c[a] + r + 1) as f64 * self.edge;
                    bound = bound.min(q[a] - lo).min(hi - q[a]);
                }
                let bound = bound - slack;
                if bound > 0.0 && best[k - 1].0 < bound * bound {
                    break;
                }
            }
            if visited > budget {
                brute_row(q, self.keys, k, scratch, out);
                return;
            }
            r += 1;
        }
        debug_assert_eq!(best.len(), k);
        out.extend(best.iter().map(|b| b.1));
    }
}
