use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::{DenseTensor, Mlp, ParamBuilder, ParamSet, Tape, Var};

/// Shared per-point MLP over `[coords | features]`; no pooling.
#[derive(Debug, Clone)]
pub struct PointNetLite {
    pub mlp: Mlp,
}

impl PointNetLite {
    pub fn declare(pb: &mut ParamBuilder, c: usize, depth: usize) -> Result<Self> {
        Ok(Self { mlp: Mlp::declare(pb, "mlp", &Mlp::widths(3 + c, c, c, depth))? })
    }

    pub fn init(c: usize, depth: usize, seed: u64) -> Result<(Self, ParamSet)> {
        let mut params = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let block = Self::declare(&mut ParamBuilder::new(&mut params, Some(&mut rng)), c, depth)?;
        Ok((block, params))
    }

    pub fn forward(&self, tape: &mut Tape, params: &ParamSet, coords: Var, feats: Var) -> Result<Var> {
        let (cs, fs) = (tape.shape(coords), tape.shape(feats));
        if cs.len() != 2 || cs[1] != 3 || fs.len() != 2 || fs[0] != cs[0] {
            return Err(Error::Shape(format!("pointnet: coords {cs:?}, features {fs:?}")));
        }
        let x = tape.concat_cols(&[coords, feats])?;
        self.mlp.forward(tape, params, x)
    }
}

pub fn pointnet_lite(coords: &DenseTensor, seed_feats: &DenseTensor, block: &PointNetLite, params: &ParamSet) -> Result<DenseTensor> {
    let mut tape = Tape::new();
    let c = tape.constant(coords.clone());
    let f = tape.constant(seed_feats.clone());
    let y = block.forward(&mut tape, params, c, f)?;
    Ok(tape.value(y).clone())
}
