//! Evaluation metrics: Chamfer distance, occupancy Jensen–Shannon divergence
//! (full 3-D and bird's-eye view) and voxel IoU at several resolutions.

use std::collections::{BTreeMap, HashSet};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::pipeline::chamfer;
use crate::types::{Bounds, PointCloud};

/// Histogram edge for both JSD variants, in meters.
pub const JSD_RESOLUTION: f64 = 0.5;
/// IoU resolutions, coarse to fine.
pub const IOU_RESOLUTIONS: [f64; 3] = [0.5, 0.2, 0.1];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum JsdMode {
    #[serde(rename = "3d")]
    Full3d,
    /// z is dropped before binning.
    #[serde(rename = "bev")]
    Bev,
}

type Cell = [i64; 3];

/// Point counts per occupied cell of a regular grid over `bounds`. Points
/// outside the box land in the nearest boundary cell.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyHistogram {
    pub resolution: f64,
    pub bounds: Bounds,
    pub mode: JsdMode,
    pub counts: BTreeMap<Cell, u64>,
    pub total: u64,
}

impl OccupancyHistogram {
    pub fn build(cloud: &PointCloud, resolution: f64, bounds: &Bounds, mode: JsdMode) -> Result<Self> {
        if !(resolution > 0.0 && resolution.is_finite()) {
            return Err(invalid(format!("histogram resolution must be positive, got {resolution}")));
        }
        bounds.check_nondegenerate()?;
        let axes = match mode {
            JsdMode::Full3d => 3,
            JsdMode::Bev => 2,
        };
        let n: Vec<i64> = (0..axes).map(|a| ((bounds.max[a] - bounds.min[a]) / resolution).ceil().max(1.0) as i64).collect();
        let mut counts = BTreeMap::new();
        for p in cloud.points() {
            let mut cell = [0i64; 3];
            for a in 0..axes {
                let i = ((p[a] - bounds.min[a]) / resolution).floor();
                cell[a] = (i.max(0.0) as i64).min(n[a] - 1);
            }
            *counts.entry(cell).or_insert(0) += 1;
        }
        Ok(Self { resolution, bounds: *bounds, mode, counts, total: cloud.len() as u64 })
    }

    /// Probability of `cell`; zero when unoccupied.
    pub fn prob(&self, cell: &Cell) -> f64 {
        self.counts.get(cell).map_or(0.0, |&c| c as f64 / self.total as f64)
    }
}

/// Base-2 Jensen–Shannon divergence between two histograms, over the union
/// of their occupied cells. In [0, 1].
pub fn jsd_histograms(p: &OccupancyHistogram, q: &OccupancyHistogram) -> f64 {
    let support: std::collections::BTreeSet<&Cell> = p.counts.keys().chain(q.counts.keys()).collect();
    let (mut kl_p, mut kl_q) = (0.0, 0.0);
    for cell in support {
        let (a, b) = (p.prob(cell), q.prob(cell));
        let m = 0.5 * (a + b);
        if a > 0.0 {
            kl_p += a * (a / m).log2();
        }
        if b > 0.0 {
            kl_q += b * (b / m).log2();
        }
    }
    (0.5 * kl_p + 0.5 * kl_q).clamp(0.0, 1.0)
}

pub fn jsd(pred: &PointCloud, gt: &PointCloud, mode: JsdMode, bounds: &Bounds) -> Result<f64> {
    if pred.is_empty() || gt.is_empty() {
        return Err(invalid("jsd needs two non-empty clouds"));
    }
    let p = OccupancyHistogram::build(pred, JSD_RESOLUTION, bounds, mode)?;
    let q = OccupancyHistogram::build(gt, JSD_RESOLUTION, bounds, mode)?;
    Ok(jsd_histograms(&p, &q))
}

fn occupied(cloud: &PointCloud, r: f64) -> HashSet<Cell> {
    cloud.points().iter().map(|p| p.map(|v| (v / r).floor() as i64)).collect()
}

/// |occ(pred) ∩ occ(gt)| / |occ(pred) ∪ occ(gt)| with cells `floor(p / r)`.
pub fn voxel_iou(pred: &PointCloud, gt: &PointCloud, r: f64) -> Result<f64> {
    if !(r > 0.0 && r.is_finite()) {
        return Err(invalid(format!("iou resolution must be positive, got {r}")));
    }
    if pred.is_empty() || gt.is_empty() {
        return Err(invalid("iou needs two non-empty clouds"));
    }
    let (a, b) = (occupied(pred, r), occupied(gt, r));
    let inter = a.intersection(&b).count();
    let union = a.len() + b.len() - inter;
    Ok(inter as f64 / union as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub cd: f64,
    pub jsd_3d: f64,
    pub jsd_bev: f64,
    pub iou_0_5: f64,
    pub iou_0_2: f64,
    pub iou_0_1: f64,
    pub pred_points: usize,
    pub gt_points: usize,
    pub seconds: f64,
}

impl MetricsReport {
    pub const CSV_HEADER: &'static str = "cd,jsd_3d,jsd_bev,iou_0.5,iou_0.2,iou_0.1,pred_points,gt_points,seconds";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.cd,
            self.jsd_3d,
            self.jsd_bev,
            self.iou_0_5,
            self.iou_0_2,
            self.iou_0_1,
            self.pred_points,
            self.gt_points,
            self.seconds
        )
    }
}

pub fn evaluate(pred: &PointCloud, gt: &PointCloud, bounds: &Bounds) -> Result<MetricsReport> {
    let start = Instant::now();
    let cd = chamfer(pred, gt)?;
    let jsd_3d = jsd(pred, gt, JsdMode::Full3d, bounds)?;
    let jsd_bev = jsd(pred, gt, JsdMode::Bev, bounds)?;
    let [iou_0_5, iou_0_2, iou_0_1] = IOU_RESOLUTIONS.map(|r| voxel_iou(pred, gt, r));
    Ok(MetricsReport {
        cd,
        jsd_3d,
        jsd_bev,
        iou_0_5: iou_0_5?,
        iou_0_2: iou_0_2?,
        iou_0_1: iou_0_1?,
        pred_points: pred.len(),
        gt_points: gt.len(),
        seconds: start.elapsed().as_secs_f64(),
    })
}
