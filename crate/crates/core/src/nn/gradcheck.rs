//! Central finite-difference verification of tape gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::param::{ParamId, ParamSet};
use super::tape::{Tape, Var};
use super::tensor::DenseTensor;
use crate::error::Result;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    pub h: f64,
    pub tol: f64,
    /// Check a seeded random subset of this many coordinates per tensor.
    pub max_coords: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self { h: 1e-5, tol: 1e-4, max_coords: None, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoordFailure {
    pub tensor: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone, Default)]
pub struct GradCheckReport {
    pub checked: usize,
    /// Max of `|g_ad − g_fd| / max(1, |g_fd|)` over smooth coordinates.
    pub max_rel_error: f64,
    /// Coordinates where the stencil straddles a kink (ReLU, max, nearest
    /// neighbor switch) and the analytic value equals one one-sided slope.
    pub kinks: usize,
    pub failures: Vec<CoordFailure>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

fn reduce(tape: &mut Tape, v: Var) -> Var {
    if tape.value(v).len() == 1 {
        v
    } else {
        tape.sum(v)
    }
}

fn coords(len: usize, opts: &GradCheckOptions, salt: u64) -> Vec<usize> {
    match opts.max_coords {
        Some(m) if m < len => {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15));
            let mut v = sample(&mut rng, len, m).into_vec();
            v.sort_unstable();
            v
        }
        _ => (0..len).collect(),
    }
}

fn classify(
    report: &mut GradCheckReport,
    opts: &GradCheckOptions,
    tensor: usize,
    index: usize,
    analytic: f64,
    eval: &mut dyn FnMut(f64) -> Result<f64>,
) -> Result<()> {
    let h = opts.h;
    let fp = eval(h)?;
    let fm = eval(-h)?;
    let numeric = (fp - fm) / (2.0 * h);
    let denom = numeric.abs().max(1.0);
    let rel = (analytic - numeric).abs() / denom;
    report.checked += 1;
    if rel <= opts.tol {
        report.max_rel_error = report.max_rel_error.max(rel);
        return Ok(());
    }
    let f0 = eval(0.0)?;
    let right = (fp - f0) / h;
    let left = (f0 - fm) / h;
    let one_sided_tol = opts.tol.max(10.0 * h);
    let straddles = (right - left).abs() / denom > 10.0 * opts.tol;
    let matches_side = (analytic - right).abs() / denom <= one_sided_tol
        || (analytic - left).abs() / denom <= one_sided_tol;
    if straddles && matches_side {
        report.kinks += 1;
    } else {
        report.failures.push(CoordFailure { tensor, index, analytic, numeric });
    }
    Ok(())
}

/// Checks `f` with respect to every input tensor. Non-scalar outputs are
/// sum-reduced.
pub fn grad_check<F>(f: F, inputs: &[DenseTensor], opts: &GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let loss = reduce(&mut tape, out);
    let grads = tape.backward(loss)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(v, t)| grads.wrt(*v).map_or_else(|| vec![0.0; t.len()], <[f64]>::to_vec))
        .collect();

    let mut report = GradCheckReport::default();
    for (ti, input) in inputs.iter().enumerate() {
        for idx in coords(input.len(), opts, ti as u64) {
            let mut eval = |delta: f64| -> Result<f64> {
                let mut tape = Tape::new();
                let vars: Vec<Var> = inputs
                    .iter()
                    .enumerate()
                    .map(|(j, t)| {
                        let mut t = t.clone();
                        if j == ti {
                            t.data_mut()[idx] += delta;
                        }
                        tape.constant(t)
                    })
                    .collect();
                let out = f(&mut tape, &vars)?;
                let l = reduce(&mut tape, out);
                Ok(tape.value(l).data()[0])
            };
            classify(&mut report, opts, ti, idx, analytic[ti][idx], &mut eval)?;
        }
    }
    Ok(report)
}

/// Checks `f` with respect to the listed parameters.
pub fn grad_check_params<F>(
    f: F,
    params: &ParamSet,
    ids: &[ParamId],
    opts: &GradCheckOptions,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &ParamSet) -> Result<Var>,
{
    let mut tape = Tape::new();
    let out = f(&mut tape, params)?;
    let loss = reduce(&mut tape, out);
    let grads = tape.backward(loss)?;
    let mut scratch = params.clone();
    scratch.zero_grads();
    scratch.accumulate(&tape, &grads, 1.0);

    let mut report = GradCheckReport::default();
    for (pi, &id) in ids.iter().enumerate() {
        let analytic = scratch.get(id).tensor.grad.clone().unwrap_or_else(|| vec![0.0; params.get(id).tensor.len()]);
        for idx in coords(analytic.len(), opts, id as u64) {
            let base = params.get(id).tensor.data()[idx];
            let mut eval = |delta: f64| -> Result<f64> {
                scratch.get_mut(id).tensor.data_mut()[idx] = base + delta;
                let mut tape = Tape::new();
                let out = f(&mut tape, &scratch)?;
                let l = reduce(&mut tape, out);
                Ok(tape.value(l).data()[0])
            };
            let r = classify(&mut report, opts, pi, idx, analytic[idx], &mut eval);
            scratch.get_mut(id).tensor.data_mut()[idx] = base;
            r?;
        }
    }
    Ok(report)
}
