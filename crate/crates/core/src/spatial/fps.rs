use crate::error::{invalid, Result};
use crate::types::{dist2, PointCloud};

/// Greedy farthest point sampling. Returns `m` indices in pick order; the
/// first is `start`, each next one maximizes the minimum distance to the
/// picks so far (lowest index on ties).
pub fn fps(cloud: &PointCloud, m: usize, start: usize) -> Result<Vec<usize>> {
    let n = cloud.len();
    if n == 0 {
        return Err(invalid("farthest point sampling on an empty cloud"));
    }
    if m == 0 || m > n {
        return Err(invalid(format!("cannot sample {m} of {n} points")));
    }
    if start >= n {
        return Err(invalid(format!("start index {start} out of range {n}")));
    }
    let pts = cloud.points();
    let mut min_d = vec![f64::INFINITY; n];
    let mut picked = Vec::with_capacity(m);
    let mut cur = start;
    for _ in 0..m {
        picked.push(cur);
        // Picked points never win again.
        min_d[cur] = f64::NEG_INFINITY;
        let p = pts[cur];
        let mut best = usize::MAX;
        let mut best_d = f64::NEG_INFINITY;
        for (i, q) in pts.iter().enumerate() {
            if min_d[i] == f64::NEG_INFINITY {
                continue;
            }
            let d = dist2(&p, q);
            if d < min_d[i] {
                min_d[i] = d;
            }
            if min_d[i] > best_d {
                best_d = min_d[i];
                best = i;
            }
        }
        cur = best;
    }
    Ok(picked)
}
