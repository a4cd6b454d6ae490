use std::io::Write;
use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::model::{sub_seed, Model, N2cGeometry, N2cState, N2cTrace, N2C_PREFIX, REFINE_PREFIX};
use crate::dsr::dsr;
use crate::error::{invalid, Error, Result};
use crate::io::{save_checkpoint, voxel_downsample, Checkpoint};
use crate::nn::{adam_step, Adam, ParamSet, Tape, Var};
use crate::types::PointCloud;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    N2c,
    Refine,
}

impl Stage {
    fn prefix(self) -> &'static str {
        match self {
            Stage::N2c => N2C_PREFIX,
            Stage::Refine => REFINE_PREFIX,
        }
    }
}

/// One training pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub input: PointCloud,
    pub gt: PointCloud,
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub step: usize,
    pub stage: Stage,
    /// Mean Chamfer distance over the step's scenes, before the update.
    pub cd: f64,
    pub lr: f64,
    pub seed: u64,
}

#[derive(Default)]
pub struct TrainOptions<'a> {
    /// Receives one JSON record per step.
    pub log: Option<&'a mut dyn Write>,
    /// Rewritten at the end of every epoch.
    pub checkpoint: Option<PathBuf>,
}

pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub history: Vec<TrainRecord>,
}

/// Seed of the ground-truth downsampling of scene `index`.
pub fn gt_downsample_seed(seed: u64, index: usize) -> u64 {
    sub_seed(seed, index as u64)
}

/// Noise realization used for scene `index` throughout training.
pub fn scene_noise_seed(seed: u64, index: usize) -> u64 {
    sub_seed(seed, 1 << 32 | index as u64)
}

enum Cached {
    Geometry(Box<N2cGeometry>),
    State(N2cState),
}

/// Records the stage's loss for one scene on `tape`, recomputing everything.
#[allow(clippy::too_many_arguments)]
pub fn scene_loss(
    tape: &mut Tape,
    stage: Stage,
    model: &Model,
    params: &ParamSet,
    input: &PointCloud,
    p_noise: &PointCloud,
    gt: Arc<Vec<[f64; 3]>>,
    seed: u64,
) -> Result<Var> {
    if stage == Stage::Refine {
        tape.freeze(model.stage_param_ids(params, N2C_PREFIX));
    }
    let trace = model.n2c.forward(tape, params, &model.cfg, input, p_noise, seed)?;
    let pred = match stage {
        Stage::N2c => trace.p_coarse,
        Stage::Refine => model.refine.forward(tape, params, &trace, seed)?,
    };
    tape.chamfer(pred, gt)
}

/// Trains one stage on `scenes`, starting from `params`.
///
/// Every step accumulates gradients over `batch_size` scenes, then takes one
/// Adam step on the stage's own parameters; the other stage stays fixed.
/// Each scene keeps one noise realization for the whole run.
pub fn train_stage(
    stage: Stage,
    scenes: &[Scene],
    model: &Model,
    params: &mut ParamSet,
    opts: TrainOptions,
) -> Result<TrainOutcome> {
    if scenes.is_empty() {
        return Err(invalid("training needs at least one scene"));
    }
    let cfg = &model.cfg;
    let tc = &cfg.train;
    let lr = match stage {
        Stage::N2c => tc.lr_n2c,
        Stage::Refine => tc.lr_refine,
    };
    let epochs = match stage {
        Stage::N2c => tc.epochs_n2c,
        Stage::Refine => tc.epochs_refine,
    };
    let opt = Adam::new(lr, tc.weight_decay);
    let trainable = model.stage_param_ids(params, stage.prefix());

    // Geometry is fixed per scene; for refinement the frozen first stage's
    // output is as well.
    let prepared = scenes
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let gt = voxel_downsample(&s.gt, tc.gt_points, gt_downsample_seed(cfg.seed, i))?;
            let noise = dsr(&s.input, cfg.repeat_counts, cfg.noise_sigma, scene_noise_seed(cfg.seed, i))?;
            let geom = model.n2c.geometry(cfg, &s.input, &noise, cfg.seed)?;
            let cached = match stage {
                Stage::N2c => Cached::Geometry(Box::new(geom)),
                Stage::Refine => {
                    let mut tape = Tape::new();
                    tape.freeze(model.stage_param_ids(params, N2C_PREFIX));
                    Cached::State(model.n2c.forward_with(&mut tape, params, &geom)?.state(&tape)?)
                }
            };
            Ok((Arc::new(gt.into_points()), cached))
        })
        .collect::<Result<Vec<_>>>()?;

    let per_epoch = scenes.len().div_ceil(tc.batch_size);
    let total = tc.max_steps.map_or(epochs * per_epoch, |m| m.min(epochs * per_epoch));
    let mut history = Vec::with_capacity(total);
    let mut log = opts.log;
    let mut step = 0;
    'epochs: for _ in 0..epochs {
        for b in 0..per_epoch {
            if step == total {
                break 'epochs;
            }
            let batch: Vec<usize> = (b * tc.batch_size..((b + 1) * tc.batch_size).min(scenes.len())).collect();
            params.zero_grads();
            let mut cd_sum = 0.0;
            for &i in &batch {
                let mut tape = Tape::new();
                let (gt, cached) = &prepared[i];
                let pred = match cached {
                    Cached::Geometry(geom) => model.n2c.forward_with(&mut tape, params, geom)?.p_coarse,
                    Cached::State(state) => {
                        let trace = N2cTrace::from_state(&mut tape, state);
                        model.refine.forward(&mut tape, params, &trace, cfg.seed)?
                    }
                };
                let loss = tape.chamfer(pred, gt.clone())?;
                let value = tape.value(loss).data()[0];
                if !value.is_finite() {
                    return Err(Error::NonFiniteLoss { step, value });
                }
                cd_sum += value;
                let grads = tape.backward(loss)?;
                params.accumulate(&tape, &grads, 1.0 / batch.len() as f64);
            }
            for &id in &trainable {
                let t = &mut params.get_mut(id).tensor;
                let n = t.len();
                t.grad.get_or_insert_with(|| vec![0.0; n]);
            }
            adam_step(
                params.iter_mut().enumerate().filter(|(i, _)| trainable.binary_search(i).is_ok()).map(|(_, p)| p),
                &opt,
            )?;
            params.zero_grads();
            let record = TrainRecord { step, stage, cd: cd_sum / batch.len() as f64, lr, seed: cfg.seed };
            if let Some(w) = log.as_deref_mut() {
                writeln!(w, "{}", serde_json::to_string(&record)?)?;
            }
            history.push(record);
            step += 1;
        }
        if let Some(path) = &opts.checkpoint {
            save_checkpoint(&params.named_tensors(), cfg, path)?;
        }
    }
    if let (Some(path), true) = (&opts.checkpoint, !total.is_multiple_of(per_epoch)) {
        // The step cap ended the run mid-epoch.
        save_checkpoint(&params.named_tensors(), cfg, path)?;
    }
    Ok(TrainOutcome { checkpoint: model.to_checkpoint(params), history })
}
