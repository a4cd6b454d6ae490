//! Run and training hyperparameters. Every field has a default so partial JSON
//! documents are accepted.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spatial::{CurveChoice, DEFAULT_BITS};
use crate::types::Bounds;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// C
    pub feature_dim: usize,
    /// K
    pub knn_k: usize,
    /// K̂
    pub segments: usize,
    /// Number of MSSC scales; scale k uses a voxel edge of 0.01·2^(k−1) m.
    pub n_vox: usize,
    pub n2c_stages: usize,
    pub fps_ratio: f64,
    pub noise_sigma: f64,
    pub upsample_factor: usize,
    /// Children stay within this distance of their parent per axis.
    pub upsample_radius: f64,
    pub repeat_counts: [usize; 4],
    /// Layers per MLP; hidden width is `feature_dim`.
    pub mlp_depth: usize,
    pub serial_bits: u32,
    pub curve: CurveChoice,
    pub seed: u64,
    /// Evaluation bounds for JSD histograms.
    pub bounds: Bounds,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            feature_dim: 32,
            knn_k: 16,
            segments: 4,
            n_vox: 4,
            n2c_stages: 3,
            fps_ratio: 0.25,
            noise_sigma: 1.0,
            upsample_factor: 6,
            upsample_radius: 0.25,
            repeat_counts: [5, 8, 12, 15],
            mlp_depth: 2,
            serial_bits: DEFAULT_BITS,
            curve: CurveChoice::Random,
            seed: 0,
            bounds: Bounds::new([-50.0, -50.0, -5.0], [50.0, 50.0, 15.0]),
            train: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr_n2c: f64,
    pub lr_refine: f64,
    pub weight_decay: f64,
    pub epochs_n2c: usize,
    pub epochs_refine: usize,
    /// Scenes per optimizer step (gradient accumulation).
    pub batch_size: usize,
    /// Ground truth is voxel-downsampled to at most this many points.
    pub gt_points: usize,
    /// Stop after this many optimizer steps regardless of epochs.
    pub max_steps: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr_n2c: 2e-4,
            lr_refine: 5e-4,
            weight_decay: 1e-4,
            epochs_n2c: 10,
            epochs_refine: 5,
            batch_size: 2,
            gt_points: 180_000,
            max_steps: None,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        let positive = [
            ("feature_dim", self.feature_dim),
            ("knn_k", self.knn_k),
            ("segments", self.segments),
            ("n_vox", self.n_vox),
            ("n2c_stages", self.n2c_stages),
            ("upsample_factor", self.upsample_factor),
            ("mlp_depth", self.mlp_depth),
            ("train.batch_size", self.train.batch_size),
            ("train.gt_points", self.train.gt_points),
        ];
        for (name, v) in positive {
            if v == 0 {
                return fail(format!("{name} must be positive"));
            }
        }
        if self.repeat_counts.contains(&0) {
            return fail("repeat counts must be positive".into());
        }
        if !self.knn_k.is_multiple_of(self.segments) {
            return fail(format!("knn_k {} is not divisible by segments {}", self.knn_k, self.segments));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return fail(format!("noise_sigma must be a finite value >= 0, got {}", self.noise_sigma));
        }
        if !(self.fps_ratio > 0.0 && self.fps_ratio <= 1.0) {
            return fail(format!("fps_ratio must be in (0, 1], got {}", self.fps_ratio));
        }
        if !(self.upsample_radius > 0.0 && self.upsample_radius.is_finite()) {
            return fail(format!("upsample_radius must be positive, got {}", self.upsample_radius));
        }
        if self.serial_bits == 0 || self.serial_bits > crate::spatial::curve::MAX_BITS {
            return fail(format!("serial_bits {} out of range", self.serial_bits));
        }
        self.bounds.check_nondegenerate().map_err(|e| Error::Config(e.to_string()))?;
        let t = &self.train;
        for (name, v) in [("lr_n2c", t.lr_n2c), ("lr_refine", t.lr_refine), ("weight_decay", t.weight_decay)] {
            if !(v >= 0.0 && v.is_finite()) {
                return fail(format!("train.{name} must be a finite value >= 0, got {v}"));
            }
        }
        Ok(())
    }

    /// Voxel edge of every MSSC scale.
    pub fn grid_sizes(&self) -> Vec<f64> {
        (0..self.n_vox).map(|k| 0.01 * f64::powi(2.0, k as i32)).collect()
    }

    /// `|P_1|, …, |P_N|` for an input of `n` points.
    pub fn stage_sizes(&self, n: usize) -> Vec<usize> {
        let mut sizes = vec![n];
        for _ in 1..self.n2c_stages {
            let prev = *sizes.last().expect("non-empty");
            sizes.push((self.fps_ratio * prev as f64).round() as usize);
        }
        sizes
    }

    /// Parses a JSON document; missing fields take defaults.
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }
}
