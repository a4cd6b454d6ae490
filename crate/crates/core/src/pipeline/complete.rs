use super::model::{cloud_of, Model};
use crate::config::RunConfig;
use crate::dsr::dsr;
use crate::error::Result;
use crate::io::Checkpoint;
use crate::nn::{ParamSet, Tape};
use crate::types::PointCloud;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CompleteOptions {
    /// Run the refinement stage after noise-to-coarse.
    pub refine: bool,
    /// Append the input scan to the completed cloud.
    pub merge_input: bool,
    /// Noise and serialization seed.
    pub seed: u64,
}

/// DSR, the noise-to-coarse pass and optionally refinement. Returns the
/// refined cloud when `opts.refine` is set, otherwise the coarse cloud.
pub fn complete(input: &PointCloud, model: &Model, params: &ParamSet, opts: CompleteOptions) -> Result<PointCloud> {
    let cfg = &model.cfg;
    let noise = dsr(input, cfg.repeat_counts, cfg.noise_sigma, opts.seed)?;
    let mut tape = Tape::new();
    // Inference only: nothing needs a gradient.
    tape.freeze(0..params.len());
    let trace = model.n2c.forward(&mut tape, params, cfg, input, &noise, opts.seed)?;
    let out = if opts.refine { model.refine.forward(&mut tape, params, &trace, opts.seed)? } else { trace.p_coarse };
    let out = cloud_of(tape.value(out))?;
    if !opts.merge_input {
        return Ok(out);
    }
    let mut points = out.into_points();
    points.extend_from_slice(input.points());
    Ok(PointCloud::from_vec_unchecked(points))
}

/// [`complete`] with parameters read from a checkpoint; `cfg` must describe
/// the same architecture the checkpoint was trained with.
pub fn complete_with_checkpoint(
    input: &PointCloud,
    ck: &Checkpoint,
    cfg: &RunConfig,
    opts: CompleteOptions,
) -> Result<PointCloud> {
    let (model, params) = Model::from_checkpoint_with(ck, cfg)?;
    complete(input, &model, &params, opts)
}
