//! Distance-aware selected repeat: replicate far points more than near ones,
//! then corrupt every replica with isotropic Gaussian noise.

use std::ops::Range;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{invalid, Result};
use crate::types::{norm, PointCloud};

pub const GROUPS: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct DsrPlan {
    /// Point indices sorted by distance from the origin, ties by index.
    pub order: Vec<usize>,
    /// Contiguous ranges of `order`, nearest group first.
    pub groups: [Range<usize>; GROUPS],
    pub counts: [usize; GROUPS],
    /// Replication factor of every input point, by original index.
    pub factor: Vec<usize>,
}

impl DsrPlan {
    /// Σ |G_k|·r_k.
    pub fn total(&self) -> usize {
        self.groups.iter().zip(&self.counts).map(|(g, r)| g.len() * r).sum()
    }

    /// Source index of every replica, in output order.
    pub fn sources(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.total());
        for (g, &r) in self.groups.iter().zip(&self.counts) {
            for &i in &self.order[g.clone()] {
                out.extend(std::iter::repeat_n(i, r));
            }
        }
        out
    }
}

/// Splits the distance-sorted cloud into four groups of `⌊N/4⌋` points, the
/// first `N mod 4` groups taking one extra, and assigns `counts` in order.
pub fn dsr_plan(cloud: &PointCloud, counts: [usize; GROUPS]) -> Result<DsrPlan> {
    let n = cloud.len();
    if n == 0 {
        return Err(invalid("distance-aware repeat needs a non-empty cloud"));
    }
    let d: Vec<f64> = cloud.points().iter().map(norm).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| d[a].total_cmp(&d[b]).then(a.cmp(&b)));
    let (base, extra) = (n / GROUPS, n % GROUPS);
    let mut start = 0;
    let groups = std::array::from_fn(|k| {
        let len = base + usize::from(k < extra);
        let r = start..start + len;
        start += len;
        r
    });
    let mut factor = vec![0; n];
    for (g, &r) in groups.iter().zip(&counts) {
        for &i in &order[g.clone()] {
            factor[i] = r;
        }
    }
    Ok(DsrPlan { order, groups, counts, factor })
}

/// Emits each point `factor` times (sorted-group order, replicas contiguous)
/// and adds an independent `N(0, σ²I)` draw to every replica. Replica `j`
/// draws from stream `j` of a generator keyed by `seed`, so the output does
/// not depend on evaluation order.
pub fn dsr_apply(cloud: &PointCloud, plan: &DsrPlan, sigma: f64, seed: u64) -> Result<PointCloud> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(invalid(format!("noise sigma must be a finite value >= 0, got {sigma}")));
    }
    if plan.factor.len() != cloud.len() {
        return Err(invalid(format!(
            "plan covers {} points, cloud has {}",
            plan.factor.len(),
            cloud.len()
        )));
    }
    let normal = Normal::new(0.0, sigma).expect("sigma checked above");
    let base = ChaCha8Rng::seed_from_u64(seed);
    let pts = cloud.points();
    let out = plan
        .sources()
        .into_iter()
        .enumerate()
        .map(|(j, i)| {
            if sigma == 0.0 {
                return pts[i];
            }
            let mut rng = base.clone();
            rng.set_stream(j as u64);
            let p = pts[i];
            [p[0] + normal.sample(&mut rng), p[1] + normal.sample(&mut rng), p[2] + normal.sample(&mut rng)]
        })
        .collect();
    Ok(PointCloud::from_vec_unchecked(out))
}

/// Plan and apply in one call.
pub fn dsr(cloud: &PointCloud, counts: [usize; GROUPS], sigma: f64, seed: u64) -> Result<PointCloud> {
    dsr_apply(cloud, &dsr_plan(cloud, counts)?, sigma, seed)
}
