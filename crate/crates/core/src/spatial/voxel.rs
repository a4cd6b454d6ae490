use std::sync::Arc;

use rustc_hash::FxHashMap;

use crate::error::{invalid, Error, Result};
use crate::nn::{DenseTensor, Rulebook, Tape};
use crate::types::PointCloud;

pub type VoxelCell = [i64; 3];

/// Number of submanifold kernel slots (3×3×3).
pub const KERNEL_SLOTS: usize = 27;

/// Kernel slot of an offset in {-1,0,1}³: `(dx+1) + 3(dy+1) + 9(dz+1)`.
pub fn kernel_slot(offset: [i64; 3]) -> usize {
    ((offset[0] + 1) + 3 * (offset[1] + 1) + 9 * (offset[2] + 1)) as usize
}

/// Point-to-cell assignment at one resolution. Cells are numbered in order of
/// first appearance; member lists keep point order.
#[derive(Debug, Clone)]
pub struct VoxelIndex {
    pub resolution: f64,
    pub cells: Vec<VoxelCell>,
    pub point_cell: Vec<usize>,
    pub members: Vec<Vec<usize>>,
    lookup: FxHashMap<VoxelCell, usize>,
}

impl VoxelIndex {
    pub fn build(cloud: &PointCloud, resolution: f64) -> Result<Self> {
        if !(resolution.is_finite() && resolution > 0.0) {
            return Err(invalid(format!("voxel size must be positive, got {resolution}")));
        }
        let mut lookup = FxHashMap::default();
        let mut cells = Vec::new();
        let mut members: Vec<Vec<usize>> = Vec::new();
        let mut point_cell = Vec::with_capacity(cloud.len());
        for (i, p) in cloud.points().iter().enumerate() {
            let c = [
                (p[0] / resolution).floor() as i64,
                (p[1] / resolution).floor() as i64,
                (p[2] / resolution).floor() as i64,
            ];
            let id = *lookup.entry(c).or_insert_with(|| {
                cells.push(c);
                members.push(Vec::new());
                cells.len() - 1
            });
            members[id].push(i);
            point_cell.push(id);
        }
        Ok(Self { resolution, cells, point_cell, members, lookup })
    }

    pub fn n_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn cell_id(&self, c: &VoxelCell) -> Option<usize> {
        self.lookup.get(c).copied()
    }

    /// Submanifold rules: output only at occupied cells, inputs from occupied
    /// neighbors within the 3×3×3 stencil.
    pub fn rulebook(&self) -> Rulebook {
        let mut slots = vec![Vec::new(); KERNEL_SLOTS];
        for (o, c) in self.cells.iter().enumerate() {
            for dz in -1..=1 {
                for dy in -1..=1 {
                    for dx in -1..=1 {
                        let n = [c[0] + dx, c[1] + dy, c[2] + dz];
                        if let Some(i) = self.cell_id(&n) {
                            slots[kernel_slot([dx, dy, dz])].push((o, i));
                        }
                    }
                }
            }
        }
        Rulebook { n_cells: self.cells.len(), slots }
    }
}

/// Occupied cells with aggregated feature rows.
#[derive(Debug, Clone)]
pub struct SparseVoxelGrid {
    pub index: VoxelIndex,
    /// cells×C, row order matches `index.cells`.
    pub features: DenseTensor,
}

/// Groups points into cells of edge `resolution`; each cell's feature is the
/// mean of its members' rows.
pub fn voxelize(cloud: &PointCloud, features: &DenseTensor, resolution: f64) -> Result<SparseVoxelGrid> {
    if features.shape().len() != 2 || features.rows() != cloud.len() {
        return Err(Error::Shape(format!(
            "features {:?} do not align with {} points",
            features.shape(),
            cloud.len()
        )));
    }
    let index = VoxelIndex::build(cloud, resolution)?;
    let mut tape = Tape::new();
    let x = tape.constant(features.clone());
    let y = tape.scatter_mean(x, Arc::new(index.point_cell.clone()), index.n_cells())?;
    let features = tape.value(y).clone();
    Ok(SparseVoxelGrid { index, features })
}
