use crate::error::{invalid, Result};
use crate::types::{dist2, Point, PointCloud};

/// Returns (value, nearest target for each prediction, nearest prediction
/// for each target).
pub(crate) fn chamfer_terms(
    pred: &[Point],
    target: &[Point],
    nearest: impl Fn(&[Point], &[Point]) -> Vec<usize>,
) -> (f64, Vec<usize>, Vec<usize>) {
    let nn_pred = nearest(pred, target);
    let nn_gt = nearest(target, pred);
    let forward = mean_sq(pred, target, &nn_pred);
    let backward = mean_sq(target, pred, &nn_gt);
    (forward + backward, nn_pred, nn_gt)
}

fn mean_sq(from: &[Point], to: &[Point], nn: &[usize]) -> f64 {
    let total: f64 = from.iter().zip(nn).map(|(p, &j)| dist2(p, &to[j])).sum();
    total / from.len() as f64
}

/// Symmetric Chamfer distance: mean squared nearest-neighbor distance from
/// `p` to `q` plus the same from `q` to `p`.
pub fn chamfer(p: &PointCloud, q: &PointCloud) -> Result<f64> {
    if p.is_empty() || q.is_empty() {
        return Err(invalid("chamfer distance needs two non-empty clouds"));
    }
    let (v, _, _) = chamfer_terms(p.points(), q.points(), crate::spatial::knn::nearest_one);
    Ok(v)
}
