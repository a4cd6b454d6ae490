use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::{DenseTensor, Init, Mlp, ParamBuilder, ParamId, ParamSet, Tape, Var};

/// Point-splitting upsampler: every parent emits `factor` children, each
/// displaced by a bounded learned offset.
#[derive(Debug, Clone)]
pub struct SpdUpsample {
    /// factor×C learned slot embeddings.
    pub embed: ParamId,
    pub mlp_split: Mlp,
    pub mlp_feat: Mlp,
    pub factor: usize,
    pub radius: f64,
}

impl SpdUpsample {
    /// The split head's output layer starts at zero, so untrained children
    /// sit on their parent.
    pub fn declare(pb: &mut ParamBuilder, c: usize, factor: usize, radius: f64, depth: usize) -> Result<Self> {
        if factor == 0 {
            return Err(Error::Config("upsample factor must be at least 1".into()));
        }
        let embed = pb.declare("embed", &[factor, c], Init::Glorot { fan_in: factor, fan_out: c })?;
        let mlp_split = Mlp::declare_zero_last(pb, "mlp_split", &Mlp::widths(2 * c, c, 3, depth))?;
        let mlp_feat = Mlp::declare(pb, "mlp_feat", &Mlp::widths(2 * c, c, c, depth))?;
        Ok(Self { embed, mlp_split, mlp_feat, factor, radius })
    }

    pub fn init(c: usize, factor: usize, seed: u64) -> Result<(Self, ParamSet)> {
        let mut params = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let block = Self::declare(&mut ParamBuilder::new(&mut params, Some(&mut rng)), c, factor, 0.25, 2)?;
        Ok((block, params))
    }

    /// Returns `(P_out, F_out)`, parent-major: child `u` of parent `m` is row
    /// `m·factor + u`.
    pub fn forward(&self, tape: &mut Tape, params: &ParamSet, p_in: Var, f_in: Var) -> Result<(Var, Var)> {
        let (ps, fs) = (tape.shape(p_in), tape.shape(f_in));
        if ps.len() != 2 || ps[1] != 3 || fs.len() != 2 || fs[0] != ps[0] {
            return Err(Error::Shape(format!("upsample: points {ps:?}, features {fs:?}")));
        }
        let (m, u) = (ps[0], self.factor);
        let parent: Arc<Vec<usize>> = Arc::new((0..m).flat_map(|i| std::iter::repeat_n(i, u)).collect());
        let slot: Arc<Vec<usize>> = Arc::new((0..m).flat_map(|_| 0..u).collect());
        let f_par = tape.index_rows(f_in, parent.clone())?;
        let embed = tape.param(params, self.embed);
        let e = tape.index_rows(embed, slot)?;
        let h = tape.concat_cols(&[f_par, e])?;
        let raw = self.mlp_split.forward(tape, params, h)?;
        let bounded = tape.tanh(raw);
        let offset = tape.scale(bounded, self.radius);
        let p_par = tape.index_rows(p_in, parent)?;
        let p_out = tape.add(p_par, offset)?;
        let f_out = self.mlp_feat.forward(tape, params, h)?;
        Ok((p_out, f_out))
    }
}

pub fn spd_upsample(
    p_in: &DenseTensor,
    f_in: &DenseTensor,
    block: &SpdUpsample,
    params: &ParamSet,
) -> Result<(DenseTensor, DenseTensor)> {
    let mut tape = Tape::new();
    let p = tape.constant(p_in.clone());
    let f = tape.constant(f_in.clone());
    let (po, fo) = block.forward(&mut tape, params, p, f)?;
    Ok((tape.value(po).clone(), tape.value(fo).clone()))
}
