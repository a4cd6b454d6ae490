//! Synthetic LiDAR scenes: a dense ground truth sampled over every surface and
//! a single-viewpoint scan of it.
//!
//! The scan keeps a ground-truth point when it is visible from the sensor and
//! passes a range-dependent draw. A beam pattern with angular step `Δθ` lays
//! down `1/(d·Δθ)²` returns per square meter at range `d`, so a point survives
//! with probability `min(1, 1/(d·Δθ)² / ρ)` where `ρ` is the ground-truth
//! density. On the ground plane this makes the number of scan points per
//! annulus of fixed width fall off as `1/d`.

use rand::distr::{Distribution, Uniform};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::types::{dist2, Point, PointCloud};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Ground {
    pub min: [f64; 2],
    pub max: [f64; 2],
    #[serde(default)]
    pub z: f64,
}

/// Axis-aligned box resting anywhere; its bottom face is not sampled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxObstacle {
    pub min: Point,
    pub max: Point,
}

/// Vertical cylinder; the lateral surface and the top cap are sampled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Cylinder {
    pub center: [f64; 2],
    pub radius: f64,
    pub z_min: f64,
    pub z_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub ground: Ground,
    #[serde(default)]
    pub boxes: Vec<BoxObstacle>,
    #[serde(default)]
    pub cylinders: Vec<Cylinder>,
    pub sensor: Point,
    /// Beam spacing in degrees.
    pub angular_resolution_deg: f64,
    pub occlusion: bool,
    /// Ground-truth sample count.
    pub gt_points: usize,
    /// Optional cap on the scan size; larger scans are subsampled.
    #[serde(default)]
    pub max_input_points: Option<usize>,
}

impl SceneSpec {
    /// 40 m square of ground, two boxes and a pole around a sensor 1.8 m up.
    pub fn street() -> Self {
        Self {
            ground: Ground { min: [-20.0, -20.0], max: [20.0, 20.0], z: 0.0 },
            boxes: vec![
                BoxObstacle { min: [6.0, -3.0, 0.0], max: [10.0, -1.0, 1.6] },
                BoxObstacle { min: [-12.0, 4.0, 0.0], max: [-8.0, 12.0, 4.0] },
            ],
            cylinders: vec![Cylinder { center: [3.0, 5.0], radius: 0.3, z_min: 0.0, z_max: 4.0 }],
            sensor: [0.0, 0.0, 1.8],
            angular_resolution_deg: 0.4,
            occlusion: true,
            gt_points: 30_000,
            max_input_points: None,
        }
    }

    /// Ground plane only, sensor at the center, no occlusion.
    pub fn plane(half_extent: f64, gt_points: usize) -> Self {
        Self {
            ground: Ground { min: [-half_extent; 2], max: [half_extent; 2], z: 0.0 },
            boxes: vec![],
            cylinders: vec![],
            sensor: [0.0, 0.0, 0.0],
            angular_resolution_deg: 0.4,
            occlusion: false,
            gt_points,
            max_input_points: None,
        }
    }

    // Negated comparisons also reject NaN.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        let g = &self.ground;
        if !(g.max[0] > g.min[0] && g.max[1] > g.min[1]) {
            return Err(invalid("ground plane has zero extent"));
        }
        for (i, b) in self.boxes.iter().enumerate() {
            if (0..3).any(|a| !(b.max[a] > b.min[a])) {
                return Err(invalid(format!("box {i} has zero extent")));
            }
        }
        for (i, c) in self.cylinders.iter().enumerate() {
            if !(c.radius > 0.0 && c.z_max > c.z_min) {
                return Err(invalid(format!("cylinder {i} has zero extent")));
            }
        }
        if !(self.angular_resolution_deg > 0.0) {
            return Err(invalid("angular resolution must be positive"));
        }
        if self.gt_points == 0 {
            return Err(invalid("gt_points must be positive"));
        }
        let all_finite = self.sensor.iter().chain(&g.min).chain(&g.max).chain([&g.z]).all(|v| v.is_finite());
        if !all_finite {
            return Err(invalid("scene has non-finite coordinates"));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let s: Self = serde_json::from_str(text)?;
        s.validate()?;
        Ok(s)
    }
}

/// One flat piece of sampled surface.
enum Patch {
    /// origin + u·a + v·b for u, v ∈ [0, 1].
    Rect { origin: Point, a: Point, b: Point },
    Lateral { center: [f64; 2], radius: f64, z_min: f64, z_max: f64 },
    Disc { center: [f64; 2], radius: f64, z: f64 },
}

impl Patch {
    fn area(&self) -> f64 {
        match self {
            Patch::Rect { a, b, .. } => {
                let c = [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]];
                dist2(&c, &[0.0; 3]).sqrt()
            }
            Patch::Lateral { radius, z_min, z_max, .. } => std::f64::consts::TAU * radius * (z_max - z_min),
            Patch::Disc { radius, .. } => std::f64::consts::PI * radius * radius,
        }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> Point {
        let u: f64 = rng.random();
        let v: f64 = rng.random();
        match self {
            Patch::Rect { origin, a, b } => std::array::from_fn(|i| origin[i] + u * a[i] + v * b[i]),
            Patch::Lateral { center, radius, z_min, z_max } => {
                let t = std::f64::consts::TAU * u;
                [center[0] + radius * t.cos(), center[1] + radius * t.sin(), z_min + v * (z_max - z_min)]
            }
            Patch::Disc { center, radius, z } => {
                let t = std::f64::consts::TAU * u;
                let r = radius * v.sqrt();
                [center[0] + r * t.cos(), center[1] + r * t.sin(), *z]
            }
        }
    }
}

fn patches(spec: &SceneSpec) -> Vec<Patch> {
    let g = &spec.ground;
    let mut out = vec![Patch::Rect {
        origin: [g.min[0], g.min[1], g.z],
        a: [g.max[0] - g.min[0], 0.0, 0.0],
        b: [0.0, g.max[1] - g.min[1], 0.0],
    }];
    for bx in &spec.boxes {
        let (lo, hi) = (bx.min, bx.max);
        let d = [hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2]];
        out.push(Patch::Rect { origin: [lo[0], lo[1], hi[2]], a: [d[0], 0.0, 0.0], b: [0.0, d[1], 0.0] });
        out.push(Patch::Rect { origin: lo, a: [d[0], 0.0, 0.0], b: [0.0, 0.0, d[2]] });
        out.push(Patch::Rect { origin: [lo[0], hi[1], lo[2]], a: [d[0], 0.0, 0.0], b: [0.0, 0.0, d[2]] });
        out.push(Patch::Rect { origin: lo, a: [0.0, d[1], 0.0], b: [0.0, 0.0, d[2]] });
        out.push(Patch::Rect { origin: [hi[0], lo[1], lo[2]], a: [0.0, d[1], 0.0], b: [0.0, 0.0, d[2]] });
    }
    for c in &spec.cylinders {
        out.push(Patch::Lateral { center: c.center, radius: c.radius, z_min: c.z_min, z_max: c.z_max });
        out.push(Patch::Disc { center: c.center, radius: c.radius, z: c.z_max });
    }
    out
}

/// True when `p` lies strictly inside a solid obstacle.
fn inside_solid(spec: &SceneSpec, p: &Point) -> bool {
    const EPS: f64 = 1e-9;
    spec.boxes.iter().any(|b| (0..3).all(|a| p[a] > b.min[a] + EPS && p[a] < b.max[a] - EPS))
        || spec.cylinders.iter().any(|c| {
            let (dx, dy) = (p[0] - c.center[0], p[1] - c.center[1]);
            dx * dx + dy * dy < (c.radius - EPS).powi(2) && p[2] > c.z_min + EPS && p[2] < c.z_max - EPS
        })
}

/// Ground-plane points hidden under an obstacle footprint.
fn under_obstacle(spec: &SceneSpec, p: &Point) -> bool {
    let z = spec.ground.z;
    spec.boxes.iter().any(|b| {
        b.min[2] <= z && p[0] > b.min[0] && p[0] < b.max[0] && p[1] > b.min[1] && p[1] < b.max[1]
    }) || spec.cylinders.iter().any(|c| {
        let (dx, dy) = (p[0] - c.center[0], p[1] - c.center[1]);
        c.z_min <= z && dx * dx + dy * dy < c.radius * c.radius
    })
}

/// Parameter in (0, 1) of the first entry of segment `o → o + d·1` into a box.
fn box_entry(o: &Point, d: &Point, b: &BoxObstacle) -> Option<f64> {
    let (mut t0, mut t1) = (0.0f64, 1.0f64);
    for a in 0..3 {
        if d[a].abs() < 1e-300 {
            if o[a] < b.min[a] || o[a] > b.max[a] {
                return None;
            }
            continue;
        }
        let (mut ta, mut tb) = ((b.min[a] - o[a]) / d[a], (b.max[a] - o[a]) / d[a]);
        if ta > tb {
            std::mem::swap(&mut ta, &mut tb);
        }
        t0 = t0.max(ta);
        t1 = t1.min(tb);
        if t0 > t1 {
            return None;
        }
    }
    Some(t0)
}

/// Parameter of the first contact of the segment with a solid cylinder.
fn cylinder_entry(o: &Point, d: &Point, c: &Cylinder) -> Option<f64> {
    let (ox, oy) = (o[0] - c.center[0], o[1] - c.center[1]);
    let qa = d[0] * d[0] + d[1] * d[1];
    let qb = 2.0 * (ox * d[0] + oy * d[1]);
    let qc = ox * ox + oy * oy - c.radius * c.radius;
    let (mut t0, mut t1) = (0.0f64, 1.0f64);
    if qa < 1e-300 {
        if qc > 0.0 {
            return None;
        }
    } else {
        let disc = qb * qb - 4.0 * qa * qc;
        if disc < 0.0 {
            return None;
        }
        let s = disc.sqrt();
        t0 = t0.max((-qb - s) / (2.0 * qa));
        t1 = t1.min((-qb + s) / (2.0 * qa));
    }
    if d[2].abs() < 1e-300 {
        if o[2] < c.z_min || o[2] > c.z_max {
            return None;
        }
    } else {
        let (mut ta, mut tb) = ((c.z_min - o[2]) / d[2], (c.z_max - o[2]) / d[2]);
        if ta > tb {
            std::mem::swap(&mut ta, &mut tb);
        }
        t0 = t0.max(ta);
        t1 = t1.min(tb);
    }
    (t0 <= t1).then_some(t0)
}

/// True when the straight line from the sensor to `p` touches an obstacle
/// before arriving at `p`.
pub fn occluded(spec: &SceneSpec, p: &Point) -> bool {
    const SLACK: f64 = 1e-6;
    let o = spec.sensor;
    let d = [p[0] - o[0], p[1] - o[1], p[2] - o[2]];
    let len = dist2(&o, p).sqrt();
    if len == 0.0 {
        return false;
    }
    let cut = 1.0 - SLACK / len;
    spec.boxes.iter().filter_map(|b| box_entry(&o, &d, b)).any(|t| t < cut)
        || spec.cylinders.iter().filter_map(|c| cylinder_entry(&o, &d, c)).any(|t| t < cut)
}

/// Scan and ground truth for `spec`; a pure function of `(spec, seed)`.
pub fn synth_scene(spec: &SceneSpec, seed: u64) -> Result<(PointCloud, PointCloud)> {
    spec.validate()?;
    let patches = patches(spec);
    let areas: Vec<f64> = patches.iter().map(Patch::area).collect();
    let total_area: f64 = areas.iter().sum();
    let mut cdf = Vec::with_capacity(areas.len());
    let mut acc = 0.0;
    for a in &areas {
        acc += a / total_area;
        cdf.push(acc);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pick = Uniform::new(0.0, 1.0).expect("valid range");
    let mut gt = Vec::with_capacity(spec.gt_points);
    let max_attempts = spec.gt_points.saturating_mul(1000).max(1000);
    let mut attempts = 0;
    while gt.len() < spec.gt_points {
        attempts += 1;
        if attempts > max_attempts {
            return Err(invalid("obstacles cover the whole scene; no surface left to sample"));
        }
        let u = pick.sample(&mut rng);
        let which = cdf.iter().position(|&c| u < c).unwrap_or(patches.len() - 1);
        let p = patches[which].sample(&mut rng);
        if (which == 0 && under_obstacle(spec, &p)) || inside_solid(spec, &p) {
            continue;
        }
        gt.push(p);
    }

    let density = spec.gt_points as f64 / total_area;
    let step = spec.angular_resolution_deg.to_radians();
    let mut keep_rng = ChaCha8Rng::seed_from_u64(seed);
    keep_rng.set_stream(1);
    let mut input = Vec::new();
    for p in &gt {
        let d2 = dist2(p, &spec.sensor);
        let keep = if d2 == 0.0 { 1.0 } else { (1.0 / (d2 * step * step * density)).min(1.0) };
        let draw: f64 = keep_rng.random();
        if draw < keep && !(spec.occlusion && occluded(spec, p)) {
            input.push(*p);
        }
    }
    if let Some(cap) = spec.max_input_points {
        if input.len() > cap {
            let mut keep = sample(&mut keep_rng, input.len(), cap).into_vec();
            keep.sort_unstable();
            input = keep.into_iter().map(|i| input[i]).collect();
        }
    }
    Ok((PointCloud::from_vec_unchecked(input), PointCloud::from_vec_unchecked(gt)))
}
