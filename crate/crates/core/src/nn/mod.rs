//! Minimal reverse-mode autodiff over [`DenseTensor`], the primitives the
//! completion network needs, and the Adam optimizer.

mod adam;
mod gradcheck;
mod layers;
mod param;
mod tape;
mod tensor;

use std::sync::Arc;

pub use adam::{adam_step, Adam};
pub use gradcheck::{grad_check, grad_check_params, CoordFailure, GradCheckOptions, GradCheckReport};
pub use layers::{mlp_forward, Linear, Mlp};
pub use param::{Init, ParamBuilder, ParamId, ParamSet, Parameter};
pub use tape::{Grads, Rulebook, Tape, Var};
pub use tensor::DenseTensor;

use crate::error::Result;
use crate::spatial::NeighborIndex;

/// Softmax of a plain tensor along `axis`.
pub fn softmax(x: &DenseTensor, axis: usize) -> Result<DenseTensor> {
    let mut tape = Tape::new();
    let v = tape.constant(x.clone());
    let y = tape.softmax(v, axis)?;
    Ok(tape.value(y).clone())
}

/// `out[q, :, j] = src[idx[q][j], :]`, shape M×C×K.
pub fn gather_neighbors(src: &DenseTensor, idx: &NeighborIndex) -> Result<DenseTensor> {
    let mut tape = Tape::new();
    let v = tape.constant(src.clone());
    let y = tape.gather_neighbors(v, Arc::new(idx.flat().to_vec()), idx.k())?;
    Ok(tape.value(y).clone())
}

/// Serial-segment max pooling of an N×C×K tensor into N×C×`segments`.
pub fn ssmp(x: &DenseTensor, segments: usize) -> Result<DenseTensor> {
    let mut tape = Tape::new();
    let v = tape.constant(x.clone());
    let y = tape.ssmp(v, segments)?;
    Ok(tape.value(y).clone())
}
