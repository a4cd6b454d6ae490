use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::{DenseTensor, Mlp, ParamBuilder, ParamSet, Tape, Var};
use crate::spatial::{knn_grid, serialize, CurveChoice};
use crate::types::PointCloud;

/// Cross-point attention between a query set and a key set.
#[derive(Debug, Clone)]
pub struct Cpa {
    pub mlp_pos: Mlp,
    pub mlp_attn: Mlp,
    pub k: usize,
    pub segments: usize,
    pub curve: CurveChoice,
    pub bits: u32,
}

impl Cpa {
    pub fn declare(
        pb: &mut ParamBuilder,
        c: usize,
        k: usize,
        segments: usize,
        depth: usize,
        curve: CurveChoice,
        bits: u32,
    ) -> Result<Self> {
        if segments == 0 || !k.is_multiple_of(segments) {
            return Err(Error::Config(format!("{k} neighbors do not split into {segments} segments")));
        }
        Ok(Self {
            mlp_pos: Mlp::declare(pb, "mlp_pos", &Mlp::widths(3, c, c, depth))?,
            mlp_attn: Mlp::declare(pb, "mlp_attn", &Mlp::widths(c, c, c, depth))?,
            k,
            segments,
            curve,
            bits,
        })
    }

    pub fn init(c: usize, k: usize, segments: usize, seed: u64) -> Result<(Self, ParamSet)> {
        let mut params = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pb = ParamBuilder::new(&mut params, Some(&mut rng));
        let block = Self::declare(&mut pb, c, k, segments, 2, CurveChoice::Random, crate::spatial::DEFAULT_BITS)?;
        Ok((block, params))
    }

    /// Neighbor lists of every query among the keys, each list reordered by
    /// the keys' position along the serialization curve.
    pub fn neighbors(&self, p_query: &PointCloud, p_key: &PointCloud, serial_seed: u64) -> Result<Vec<usize>> {
        if self.k > p_key.len() {
            return Err(Error::Invalid(format!("{} neighbors requested from {} keys", self.k, p_key.len())));
        }
        let bounds = p_key.bounds().expect("non-empty keys").padded(1e-3);
        let rank = serialize(p_key, self.curve, self.bits, &bounds, serial_seed)?.ranks();
        let mut idx = knn_grid(p_query, p_key, self.k)?;
        for q in 0..idx.num_queries() {
            idx.row_mut(q).sort_by_key(|&j| rank[j]);
        }
        Ok(idx.into_flat())
    }

    /// Neighbor lists and relative displacements of every query.
    pub fn geometry(&self, p_query: &PointCloud, p_key: &PointCloud, serial_seed: u64) -> Result<CpaGeometry> {
        let (m, k) = (p_query.len(), self.k);
        let idx = self.neighbors(p_query, p_key, serial_seed)?;
        let (qp, kp) = (p_query.points(), p_key.points());
        let mut rel = Vec::with_capacity(m * k * 3);
        for q in 0..m {
            for &j in &idx[q * k..(q + 1) * k] {
                rel.extend((0..3).map(|a| qp[q][a] - kp[j][a]));
            }
        }
        Ok(CpaGeometry { m, n: p_key.len(), k, idx: Arc::new(idx), rel: DenseTensor::new(vec![m * k, 3], rel)? })
    }

    /// `F_new = value + Σ_j A_j ⊙ V̂_j` (M×C).
    #[allow(clippy::too_many_arguments)]
    pub fn forward(
        &self,
        tape: &mut Tape,
        params: &ParamSet,
        p_query: &PointCloud,
        query: Var,
        p_key: &PointCloud,
        key: Var,
        value: Var,
        serial_seed: u64,
    ) -> Result<Var> {
        let geom = self.geometry(p_query, p_key, serial_seed)?;
        self.forward_with(tape, params, &geom, query, key, value)
    }

    pub fn forward_with(
        &self,
        tape: &mut Tape,
        params: &ParamSet,
        geom: &CpaGeometry,
        query: Var,
        key: Var,
        value: Var,
    ) -> Result<Var> {
        let (m, n) = (geom.m, geom.n);
        if geom.k != self.k {
            return Err(Error::Config(format!("geometry built for K={}, block uses K={}", geom.k, self.k)));
        }
        for (what, v, rows) in [("query", query, m), ("key", key, n), ("value", value, m)] {
            let s = tape.shape(v);
            if s.len() != 2 || s[0] != rows {
                return Err(Error::Shape(format!("cpa {what} {s:?} does not match {rows} points")));
            }
        }
        let c = tape.shape(query)[1];
        if tape.shape(key)[1] != c || tape.shape(value)[1] != c {
            return Err(Error::Shape("cpa query, key and value widths differ".into()));
        }
        let (k, idx) = (self.k, geom.idx.clone());
        let rel = tape.constant(geom.rel.clone());
        let alpha = self.mlp_pos.forward(tape, params, rel)?;

        // Q̂ and V̂, both M×K̂×C.
        let s = self.segments;
        let q_hat = tape.rel_segment_max(query, key, alpha, idx.clone(), k, s)?;
        let v_hat = tape.rel_segment_max(value, key, alpha, idx, k, s)?;
        let q_rows = tape.reshape(q_hat, vec![m * s, c])?;
        let logits = self.mlp_attn.forward(tape, params, q_rows)?;
        let logits = tape.reshape(logits, vec![m, s, c])?;
        let attn = tape.softmax(logits, 1)?;
        let weighted = tape.mul(attn, v_hat)?;
        let fused = tape.sum_axis(weighted, 1)?;
        tape.add(value, fused)
    }
}

/// Reusable neighborhood structure of one query/key pair for one [`Cpa`] block.
#[derive(Debug, Clone)]
pub struct CpaGeometry {
    m: usize,
    n: usize,
    k: usize,
    idx: Arc<Vec<usize>>,
    /// (M·K)×3 query − key displacements.
    rel: DenseTensor,
}

#[allow(clippy::too_many_arguments)]
pub fn cpa_forward(
    p_query: &PointCloud,
    query: &DenseTensor,
    p_key: &PointCloud,
    key: &DenseTensor,
    value: &DenseTensor,
    block: &Cpa,
    params: &ParamSet,
    serial_seed: u64,
) -> Result<DenseTensor> {
    let mut tape = Tape::new();
    let q = tape.constant(query.clone());
    let k = tape.constant(key.clone());
    let v = tape.constant(value.clone());
    let y = block.forward(&mut tape, params, p_query, q, p_key, k, v, serial_seed)?;
    Ok(tape.value(y).clone())
}
