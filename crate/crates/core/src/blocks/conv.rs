use std::sync::Arc;

use crate::error::{Error, Result};
use crate::nn::{DenseTensor, Init, ParamBuilder, ParamId, ParamSet, Rulebook, Tape, Var};
use crate::spatial::{SparseVoxelGrid, KERNEL_SLOTS};

/// 3×3×3 submanifold convolution, C_in → C_out.
#[derive(Debug, Clone)]
pub struct SparseConv {
    /// 27×C_in×C_out, slot order as in [`kernel_slot`](crate::spatial::kernel_slot).
    pub weight: ParamId,
    pub bias: ParamId,
}

impl SparseConv {
    pub fn declare(pb: &mut ParamBuilder, name: &str, c_in: usize, c_out: usize) -> Result<Self> {
        pb.with_prefix(name, |pb| {
            let fan_in = KERNEL_SLOTS * c_in;
            let weight = pb.declare("weight", &[KERNEL_SLOTS, c_in, c_out], Init::Glorot { fan_in, fan_out: c_out })?;
            let bias = pb.declare("bias", &[c_out], Init::Zeros)?;
            Ok(Self { weight, bias })
        })
    }

    pub fn forward(&self, tape: &mut Tape, params: &ParamSet, cells: Var, rules: Arc<Rulebook>) -> Result<Var> {
        let w = tape.param(params, self.weight);
        let b = tape.param(params, self.bias);
        tape.sparse_conv(cells, w, Some(b), rules)
    }
}

/// `out(c) = Σ_offset W[offset]·in(c + offset) + b` at every occupied cell;
/// unoccupied neighbors contribute nothing and the occupancy is unchanged.
pub fn sparse_conv(grid: &SparseVoxelGrid, weight: &DenseTensor, bias: &DenseTensor) -> Result<SparseVoxelGrid> {
    if bias.shape().len() != 1 {
        return Err(Error::Shape(format!("bias {:?} is not a vector", bias.shape())));
    }
    let mut tape = Tape::new();
    let x = tape.constant(grid.features.clone());
    let w = tape.constant(weight.clone());
    let b = tape.constant(bias.clone());
    let y = tape.sparse_conv(x, w, Some(b), Arc::new(grid.index.rulebook()))?;
    Ok(SparseVoxelGrid { index: grid.index.clone(), features: tape.value(y).clone() })
}
