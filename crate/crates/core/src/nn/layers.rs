use super::param::{Init, ParamBuilder, ParamId, ParamSet};
use super::tape::{Tape, Var};
use crate::error::{Error, Result};

/// `y = x·W + b` with `W`: in×out.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    pub fn declare(pb: &mut ParamBuilder, name: &str, d_in: usize, d_out: usize) -> Result<Self> {
        Self::declare_with(pb, name, d_in, d_out, Init::Glorot { fan_in: d_in, fan_out: d_out })
    }

    pub fn declare_with(pb: &mut ParamBuilder, name: &str, d_in: usize, d_out: usize, init: Init) -> Result<Self> {
        pb.with_prefix(name, |pb| {
            let weight = pb.declare("weight", &[d_in, d_out], init)?;
            let bias = pb.declare("bias", &[d_out], Init::Zeros)?;
            Ok(Self { weight, bias, d_in, d_out })
        })
    }

    pub fn forward(&self, tape: &mut Tape, params: &ParamSet, x: Var) -> Result<Var> {
        let w = tape.param(params, self.weight);
        let b = tape.param(params, self.bias);
        tape.linear(x, w, Some(b))
    }
}

/// Stack of linear layers with ReLU between them and none after the last.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    /// `widths` lists every layer boundary: `[in, hidden.., out]`.
    pub fn declare(pb: &mut ParamBuilder, name: &str, widths: &[usize]) -> Result<Self> {
        Self::declare_inner(pb, name, widths, false)
    }

    /// Same as [`Mlp::declare`] but the output layer starts at zero, so the
    /// network initially outputs exactly zero.
    pub fn declare_zero_last(pb: &mut ParamBuilder, name: &str, widths: &[usize]) -> Result<Self> {
        Self::declare_inner(pb, name, widths, true)
    }

    fn declare_inner(pb: &mut ParamBuilder, name: &str, widths: &[usize], zero_last: bool) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::Config(format!("mlp {name} needs at least one layer")));
        }
        pb.with_prefix(name, |pb| {
            let layers = widths
                .windows(2)
                .enumerate()
                .map(|(i, w)| {
                    let init = if zero_last && i + 2 == widths.len() {
                        Init::Zeros
                    } else {
                        Init::Glorot { fan_in: w[0], fan_out: w[1] }
                    };
                    Linear::declare_with(pb, &format!("l{i}"), w[0], w[1], init)
                })
                .collect::<Result<_>>()?;
            Ok(Self { layers })
        })
    }

    /// Widths for an MLP of `depth` layers with a constant hidden width.
    pub fn widths(d_in: usize, hidden: usize, d_out: usize, depth: usize) -> Vec<usize> {
        let mut w = vec![d_in];
        w.extend(std::iter::repeat_n(hidden, depth.saturating_sub(1)));
        w.push(d_out);
        w
    }

    pub fn d_out(&self) -> usize {
        self.layers.last().map_or(0, |l| l.d_out)
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        self.layers.iter().flat_map(|l| [l.weight, l.bias]).collect()
    }

    pub fn forward(&self, tape: &mut Tape, params: &ParamSet, x: Var) -> Result<Var> {
        mlp_forward(tape, params, x, &self.layers)
    }
}

/// Applies `layers` to the rows of `x` with ReLU between consecutive layers.
pub fn mlp_forward(tape: &mut Tape, params: &ParamSet, x: Var, layers: &[Linear]) -> Result<Var> {
    let mut h = x;
    for (i, layer) in layers.iter().enumerate() {
        if i > 0 {
            h = tape.relu(h);
        }
        h = layer.forward(tape, params, h)?;
    }
    Ok(h)
}
