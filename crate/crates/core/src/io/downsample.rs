use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rustc_hash::FxHashMap;

use crate::error::{invalid, Result};
use crate::types::{Point, PointCloud};

const SEARCH_STEPS: usize = 64;

/// Centroid of every occupied voxel of edge `h`, anchored at `origin`, in
/// order of first appearance.
fn voxel_centroids(points: &[Point], origin: Point, h: f64) -> Vec<Point> {
    let mut slot: FxHashMap<[i64; 3], usize> = FxHashMap::default();
    let mut sums: Vec<([f64; 3], usize)> = Vec::new();
    for p in points {
        let key = std::array::from_fn(|a| ((p[a] - origin[a]) / h).floor() as i64);
        let i = *slot.entry(key).or_insert_with(|| {
            sums.push(([0.0; 3], 0));
            sums.len() - 1
        });
        let (s, n) = &mut sums[i];
        for a in 0..3 {
            s[a] += p[a];
        }
        *n += 1;
    }
    sums.into_iter().map(|(s, n)| s.map(|v| v / n as f64)).collect()
}

fn occupied(points: &[Point], origin: Point, h: f64) -> usize {
    let mut seen: FxHashMap<[i64; 3], ()> = FxHashMap::default();
    for p in points {
        seen.insert(std::array::from_fn(|a| ((p[a] - origin[a]) / h).floor() as i64), ());
    }
    seen.len()
}

/// Keeps `target` of `points`, chosen uniformly with `seed`, in original order.
fn subsample(points: Vec<Point>, target: usize, seed: u64) -> Vec<Point> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = sample(&mut rng, points.len(), target).into_vec();
    keep.sort_unstable();
    keep.into_iter().map(|i| points[i]).collect()
}

/// Reduces a cloud to exactly `target` points (or leaves it alone when it is
/// already that small). The voxel edge is bisected until the occupied voxel
/// count first drops to `target` or below; when that count misses `target`
/// exactly, the centroids of the finest grid still above `target` are
/// subsampled with `seed`.
pub fn voxel_downsample(cloud: &PointCloud, target: usize, seed: u64) -> Result<PointCloud> {
    if cloud.is_empty() {
        return Err(invalid("cannot downsample an empty cloud"));
    }
    if target == 0 {
        return Err(invalid("downsample target must be positive"));
    }
    if cloud.len() <= target {
        return Ok(cloud.clone());
    }
    let pts = cloud.points();
    let b = cloud.bounds().expect("non-empty");
    let span = b.extent().into_iter().fold(0.0, f64::max);
    if span == 0.0 {
        return Ok(PointCloud::from_vec_unchecked(subsample(pts.to_vec(), target, seed)));
    }
    // count(lo) > target >= count(hi) holds throughout the search.
    let mut lo = span * 1e-9;
    let mut hi = span * 2.0 + 1.0;
    if occupied(pts, b.min, lo) <= target {
        // Only coincident points remain to merge; sample the raw points.
        return Ok(PointCloud::from_vec_unchecked(subsample(pts.to_vec(), target, seed)));
    }
    let mut hi_count = 1;
    for _ in 0..SEARCH_STEPS {
        let mid = (lo * hi).sqrt();
        if mid <= lo || mid >= hi {
            break;
        }
        let n = occupied(pts, b.min, mid);
        if n <= target {
            hi = mid;
            hi_count = n;
            if n == target {
                break;
            }
        } else {
            lo = mid;
        }
    }
    let out = if hi_count == target {
        voxel_centroids(pts, b.min, hi)
    } else {
        subsample(voxel_centroids(pts, b.min, lo), target, seed)
    };
    Ok(PointCloud::from_vec_unchecked(out))
}
