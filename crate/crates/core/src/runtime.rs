//! Inference latency harness: prime on a few frames, then time each of the
//! following frames on its own.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{invalid, Result};
use crate::io::{load_checkpoint, read_kitti_bin};
use crate::nn::ParamSet;
use crate::pipeline::{complete, CompleteOptions, Model};
use crate::types::PointCloud;

pub const DEFAULT_WARMUP: usize = 5;
pub const DEFAULT_TIMED: usize = 100;

/// Anything that turns a scan into a completed cloud.
pub trait Completer {
    fn complete(&mut self, input: &PointCloud) -> Result<PointCloud>;
}

/// The trained network behind a checkpoint.
pub struct ModelCompleter {
    pub model: Model,
    pub params: ParamSet,
    pub opts: CompleteOptions,
}

impl ModelCompleter {
    /// Uses the checkpoint's own configuration unless `cfg` is given.
    pub fn from_checkpoint(path: &Path, cfg: Option<&RunConfig>, opts: CompleteOptions) -> Result<Self> {
        let ck = load_checkpoint(path)?;
        let (model, params) = Model::from_checkpoint_with(&ck, cfg.unwrap_or(&ck.config))?;
        Ok(Self { model, params, opts })
    }
}

impl Completer for ModelCompleter {
    fn complete(&mut self, input: &PointCloud) -> Result<PointCloud> {
        complete(input, &self.model, &self.params, self.opts)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub warmup: usize,
    pub timed: usize,
    /// Seconds per timed frame, in frame order.
    pub latencies: Vec<f64>,
    pub mean: f64,
    /// Population standard deviation of `latencies`.
    pub std: f64,
    pub param_count: usize,
    /// File names of the timed frames.
    pub frames: Vec<String>,
}

/// Regular files ending in `.bin`, sorted by file name.
pub fn list_frames(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut frames = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_file() && path.extension().is_some_and(|e| e == "bin") {
            frames.push(path);
        }
    }
    frames.sort_by(|a, b| a.file_name().cmp(&b.file_name()));
    Ok(frames)
}

pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Runs `completer` on `frames[..warmup]` untimed, then times each of the
/// next `timed` frames. Loading a frame happens before its clock starts.
pub fn bench_frames(
    frames: &[PathBuf],
    completer: &mut dyn Completer,
    warmup: usize,
    timed: usize,
    param_count: usize,
) -> Result<BenchReport> {
    if timed == 0 {
        return Err(invalid("at least one timed frame is required"));
    }
    if frames.len() < warmup + timed {
        return Err(invalid(format!(
            "{} frames available, {warmup} warmup + {timed} timed required",
            frames.len()
        )));
    }
    for path in &frames[..warmup] {
        completer.complete(&read_kitti_bin(path)?)?;
    }
    let mut latencies = Vec::with_capacity(timed);
    let mut names = Vec::with_capacity(timed);
    for path in &frames[warmup..warmup + timed] {
        let scan = read_kitti_bin(path)?;
        let start = Instant::now();
        let out = completer.complete(&scan)?;
        latencies.push(start.elapsed().as_secs_f64());
        drop(out);
        names.push(path.file_name().map_or_else(String::new, |n| n.to_string_lossy().into_owned()));
    }
    let (mean, std) = mean_std(&latencies);
    Ok(BenchReport { warmup, timed, latencies, mean, std, param_count, frames: names })
}

/// [`bench_frames`] over the `.bin` scans of `dir` with the model in `ckpt`.
pub fn bench_runtime(
    dir: &Path,
    ckpt: &Path,
    cfg: Option<&RunConfig>,
    opts: CompleteOptions,
    warmup: usize,
    timed: usize,
) -> Result<BenchReport> {
    let frames = list_frames(dir)?;
    if frames.len() < warmup + timed {
        return Err(invalid(format!(
            "{} holds {} frames, {warmup} warmup + {timed} timed required",
            dir.display(),
            frames.len()
        )));
    }
    let mut completer = ModelCompleter::from_checkpoint(ckpt, cfg, opts)?;
    let params = completer.params.element_count();
    bench_frames(&frames, &mut completer, warmup, timed, params)
}
