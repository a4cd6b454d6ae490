use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::curve::{hilbert_encode, morton_encode};
use crate::error::Result;
use crate::types::{Bounds, PointCloud};

/// Default bits per axis (1024 cells).
pub const DEFAULT_BITS: u32 = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Curve {
    Z,
    Hilbert,
}

/// Requested ordering; `Random` picks Z or Hilbert with equal odds from the seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CurveChoice {
    Z,
    Hilbert,
    Random,
}

impl CurveChoice {
    pub fn resolve(self, seed: u64) -> Curve {
        match self {
            CurveChoice::Z => Curve::Z,
            CurveChoice::Hilbert => Curve::Hilbert,
            CurveChoice::Random => {
                if ChaCha8Rng::seed_from_u64(seed).random::<bool>() {
                    Curve::Hilbert
                } else {
                    Curve::Z
                }
            }
        }
    }
}

/// Space-filling-curve codes for a cloud and the permutation sorting them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SerialCode {
    pub curve: Curve,
    pub bits: u32,
    pub codes: Vec<u64>,
    /// Point indices in ascending code order, ties by original index.
    pub order: Vec<usize>,
}

impl SerialCode {
    /// Position of every point within `order`.
    pub fn ranks(&self) -> Vec<usize> {
        let mut rank = vec![0; self.order.len()];
        for (r, &i) in self.order.iter().enumerate() {
            rank[i] = r;
        }
        rank
    }
}

/// Quantizes every point into a `2^bits` lattice spanning `bounds` and encodes
/// it along the chosen curve. Points outside the bounds clamp to boundary cells.
pub fn serialize(
    cloud: &PointCloud,
    curve: CurveChoice,
    bits: u32,
    bounds: &Bounds,
    seed: u64,
) -> Result<SerialCode> {
    bounds.check_nondegenerate()?;
    let curve = curve.resolve(seed);
    let side = (1u64 << bits) as f64;
    let top = (1u64 << bits) - 1;
    let ext = bounds.extent();
    let codes = cloud
        .points()
        .iter()
        .map(|p| {
            let mut cell = [0u32; 3];
            for a in 0..3 {
                let t = ((p[a] - bounds.min[a]) / ext[a] * side).floor();
                cell[a] = t.clamp(0.0, top as f64) as u32;
            }
            match curve {
                Curve::Z => morton_encode(cell, bits),
                Curve::Hilbert => hilbert_encode(cell, bits),
            }
        })
        .collect::<Result<Vec<u64>>>()?;
    let mut order: Vec<usize> = (0..codes.len()).collect();
    order.sort_by_key(|&i| codes[i]);
    Ok(SerialCode { curve, bits, codes, order })
}
