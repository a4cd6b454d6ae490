//! Point clouds and axis-aligned bounds.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

pub type Point = [f64; 3];

/// Ordered list of 3-D points in meters. Every coordinate is finite.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    points: Vec<Point>,
}

impl PointCloud {
    pub fn new(points: Vec<Point>) -> Result<Self> {
        if let Some(i) = points.iter().position(|p| p.iter().any(|c| !c.is_finite())) {
            return Err(invalid(format!("point {i} has a non-finite coordinate")));
        }
        Ok(Self { points })
    }

    /// Caller guarantees finiteness (outputs of arithmetic on valid clouds).
    pub(crate) fn from_vec_unchecked(points: Vec<Point>) -> Self {
        debug_assert!(points.iter().all(|p| p.iter().all(|c| c.is_finite())));
        Self { points }
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn into_points(self) -> Vec<Point> {
        self.points
    }

    pub fn select(&self, indices: &[usize]) -> PointCloud {
        Self::from_vec_unchecked(indices.iter().map(|&i| self.points[i]).collect())
    }

    pub fn translated(&self, t: Point) -> PointCloud {
        Self::from_vec_unchecked(
            self.points
                .iter()
                .map(|p| [p[0] + t[0], p[1] + t[1], p[2] + t[2]])
                .collect(),
        )
    }

    pub fn centroid(&self) -> Point {
        let n = self.points.len().max(1) as f64;
        let mut c = [0.0; 3];
        for p in &self.points {
            for a in 0..3 {
                c[a] += p[a];
            }
        }
        [c[0] / n, c[1] / n, c[2] / n]
    }

    pub fn bounds(&self) -> Option<Bounds> {
        let first = *self.points.first()?;
        let mut b = Bounds { min: first, max: first };
        for p in &self.points[1..] {
            b.min = [0, 1, 2].map(|a| b.min[a].min(p[a]));
            b.max = [0, 1, 2].map(|a| b.max[a].max(p[a]));
        }
        Some(b)
    }

    /// Flattened row-major N×3 coordinates.
    pub fn flat(&self) -> Vec<f64> {
        self.points.iter().flat_map(|p| p.iter().copied()).collect()
    }

    pub fn from_flat(data: &[f64]) -> Result<Self> {
        if !data.len().is_multiple_of(3) {
            return Err(invalid("flat coordinate buffer length is not a multiple of 3"));
        }
        Self::new(data.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect())
    }
}

impl std::ops::Index<usize> for PointCloud {
    type Output = Point;
    fn index(&self, i: usize) -> &Point {
        &self.points[i]
    }
}

/// Axis-aligned box, inclusive on both ends.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub min: Point,
    pub max: Point,
}

impl Bounds {
    pub fn new(min: Point, max: Point) -> Self {
        Self { min, max }
    }

    pub fn extent(&self) -> Point {
        [
            self.max[0] - self.min[0],
            self.max[1] - self.min[1],
            self.max[2] - self.min[2],
        ]
    }

    /// Rejects boxes with zero (or negative, or non-finite) extent on any axis.
    pub fn check_nondegenerate(&self) -> Result<()> {
        if self.extent().iter().all(|e| e.is_finite() && *e > 0.0) {
            Ok(())
        } else {
            Err(invalid(format!("degenerate bounds {:?}..{:?}", self.min, self.max)))
        }
    }

    /// Grows a tight box so no axis has zero extent.
    pub fn padded(&self, pad: f64) -> Bounds {
        Bounds {
            min: [self.min[0] - pad, self.min[1] - pad, self.min[2] - pad],
            max: [self.max[0] + pad, self.max[1] + pad, self.max[2] + pad],
        }
    }
}

pub(crate) fn dist2(a: &Point, b: &Point) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

pub(crate) fn norm(p: &Point) -> f64 {
    (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_nan() {
        assert!(PointCloud::new(vec![[0.0, f64::NAN, 0.0]]).is_err());
        assert!(PointCloud::new(vec![[0.0, 1.0, f64::INFINITY]]).is_err());
        assert_eq!(PointCloud::new(vec![[1.0, 2.0, 3.0]]).unwrap().len(), 1);
    }

    #[test]
    fn degenerate_bounds() {
        assert!(Bounds::new([0.0; 3], [1.0, 1.0, 0.0]).check_nondegenerate().is_err());
        assert!(Bounds::new([0.0; 3], [1.0; 3]).check_nondegenerate().is_ok());
    }
}
