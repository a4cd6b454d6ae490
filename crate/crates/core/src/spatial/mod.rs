//! Geometry kernels: farthest point sampling, exact KNN, voxelization and
//! space-filling-curve serialization.

pub mod curve;
mod fps;
pub mod knn;
mod serialize;
mod voxel;

pub use curve::{hilbert_decode, hilbert_encode, morton_decode, morton_encode, CellCoord};
pub use fps::fps;
pub use knn::{knn_bruteforce, knn_bruteforce_points, knn_grid, knn_grid_points};
pub use serialize::{serialize, Curve, CurveChoice, SerialCode, DEFAULT_BITS};
pub use voxel::{kernel_slot, voxelize, SparseVoxelGrid, VoxelCell, VoxelIndex, KERNEL_SLOTS};

use crate::error::{invalid, Result};

/// For every query, exactly `k` key indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NeighborIndex {
    k: usize,
    flat: Vec<usize>,
    n_keys: usize,
}

impl NeighborIndex {
    pub(crate) fn from_parts(k: usize, flat: Vec<usize>, n_keys: usize) -> Self {
        debug_assert!(k > 0 && flat.len().is_multiple_of(k));
        Self { k, flat, n_keys }
    }

    /// Validating constructor from a row-major query×k index list.
    pub fn from_flat(k: usize, flat: Vec<usize>, n_keys: usize) -> Result<Self> {
        if k == 0 || !flat.len().is_multiple_of(k) {
            return Err(invalid(format!("{} indices do not split into rows of {k}", flat.len())));
        }
        if let Some(&bad) = flat.iter().find(|&&i| i >= n_keys) {
            return Err(invalid(format!("neighbor index {bad} out of range {n_keys}")));
        }
        Ok(Self { k, flat, n_keys })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n_keys(&self) -> usize {
        self.n_keys
    }

    pub fn num_queries(&self) -> usize {
        self.flat.len() / self.k
    }

    pub fn row(&self, q: usize) -> &[usize] {
        &self.flat[q * self.k..(q + 1) * self.k]
    }

    pub fn row_mut(&mut self, q: usize) -> &mut [usize] {
        &mut self.flat[q * self.k..(q + 1) * self.k]
    }

    pub fn flat(&self) -> &[usize] {
        &self.flat
    }

    pub fn into_flat(self) -> Vec<usize> {
        self.flat
    }
}
