use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::conv::SparseConv;
use super::coords_tensor;
use crate::error::{invalid, Result};
use crate::nn::{DenseTensor, Mlp, ParamBuilder, ParamSet, Rulebook, Tape, Var};
use crate::spatial::VoxelIndex;
use crate::types::{Point, PointCloud};

#[derive(Debug, Clone)]
pub struct MsscScale {
    pub grid: f64,
    pub mlp: Mlp,
    pub conv1: SparseConv,
    pub conv2: SparseConv,
}

/// Multi-scale sparse convolution: a per-point embedding refined by two
/// residual submanifold convolutions at each voxel scale, fused across scales.
#[derive(Debug, Clone)]
pub struct Mssc {
    pub mlp_init: Mlp,
    pub scales: Vec<MsscScale>,
    pub mlp_end: Mlp,
}

impl Mssc {
    pub fn declare(pb: &mut ParamBuilder, c: usize, grids: &[f64], depth: usize) -> Result<Self> {
        if grids.is_empty() {
            return Err(crate::Error::Config("mssc needs at least one scale".into()));
        }
        let mlp_init = Mlp::declare(pb, "mlp_init", &Mlp::widths(3, c, c, depth))?;
        let scales = grids
            .iter()
            .enumerate()
            .map(|(k, &grid)| {
                pb.with_prefix(&format!("scale{k}"), |pb| {
                    Ok(MsscScale {
                        grid,
                        mlp: Mlp::declare(pb, "mlp", &Mlp::widths(c, c, c, depth))?,
                        conv1: SparseConv::declare(pb, "conv1", c, c)?,
                        conv2: SparseConv::declare(pb, "conv2", c, c)?,
                    })
                })
            })
            .collect::<Result<_>>()?;
        let mlp_end = Mlp::declare(pb, "mlp_end", &Mlp::widths(c * grids.len(), c, c, depth))?;
        Ok(Self { mlp_init, scales, mlp_end })
    }

    /// N×C point descriptors. Coordinates enter the first MLP relative to
    /// `origin`; voxel cells use absolute coordinates.
    pub fn forward(&self, tape: &mut Tape, params: &ParamSet, cloud: &PointCloud, origin: Point) -> Result<Var> {
        let geom = self.geometry(cloud, origin)?;
        self.forward_with(tape, params, &geom)
    }

    /// The parameter-free part of [`Mssc::forward`]: voxel membership and
    /// convolution rules at every scale.
    pub fn geometry(&self, cloud: &PointCloud, origin: Point) -> Result<MsscGeometry> {
        if cloud.is_empty() {
            return Err(invalid("mssc on an empty cloud"));
        }
        let scales = self
            .scales
            .iter()
            .map(|s| {
                let index = VoxelIndex::build(cloud, s.grid)?;
                Ok(ScaleGeometry {
                    n_cells: index.n_cells(),
                    rules: Arc::new(index.rulebook()),
                    cell_of: Arc::new(index.point_cell),
                })
            })
            .collect::<Result<_>>()?;
        Ok(MsscGeometry { coords: coords_tensor(cloud, origin), scales })
    }

    pub fn forward_with(&self, tape: &mut Tape, params: &ParamSet, geom: &MsscGeometry) -> Result<Var> {
        if geom.scales.len() != self.scales.len() {
            return Err(invalid("mssc geometry built for a different block"));
        }
        let p = tape.constant(geom.coords.clone());
        let x = self.mlp_init.forward(tape, params, p)?;
        let mut outs = Vec::with_capacity(self.scales.len());
        for (s, g) in self.scales.iter().zip(&geom.scales) {
            let f = s.mlp.forward(tape, params, x)?;
            let t = tape.scatter_mean(f, g.cell_of.clone(), g.n_cells)?;
            let c1 = s.conv1.forward(tape, params, t, g.rules.clone())?;
            let t1 = tape.add(c1, t)?;
            let c2 = s.conv2.forward(tape, params, t1, g.rules.clone())?;
            let t2 = tape.add(c2, t1)?;
            let back = tape.index_rows(t2, g.cell_of.clone())?;
            outs.push(tape.add(back, f)?);
        }
        let cat = tape.concat_cols(&outs)?;
        self.mlp_end.forward(tape, params, cat)
    }
}

#[derive(Debug, Clone)]
struct ScaleGeometry {
    cell_of: Arc<Vec<usize>>,
    n_cells: usize,
    rules: Arc<Rulebook>,
}

/// Reusable voxel structure of one cloud for one [`Mssc`] block.
#[derive(Debug, Clone)]
pub struct MsscGeometry {
    coords: DenseTensor,
    scales: Vec<ScaleGeometry>,
}

/// Runs a block on `cloud` with its centroid as origin.
pub fn mssc_forward(cloud: &PointCloud, block: &Mssc, params: &ParamSet) -> Result<DenseTensor> {
    let mut tape = Tape::new();
    let y = block.forward(&mut tape, params, cloud, cloud.centroid())?;
    Ok(tape.value(y).clone())
}

impl Mssc {
    /// Fresh randomly initialized block in its own parameter table.
    pub fn init(c: usize, grids: &[f64], depth: usize, seed: u64) -> Result<(Self, ParamSet)> {
        let mut params = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let block = Self::declare(&mut ParamBuilder::new(&mut params, Some(&mut rng)), c, grids, depth)?;
        Ok((block, params))
    }
}
