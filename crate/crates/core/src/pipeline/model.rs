use std::sync::Arc;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::blocks::{Cpa, CpaGeometry, Mssc, MsscGeometry, PointNetLite, SpdUpsample};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::io::Checkpoint;
use crate::nn::{DenseTensor, Mlp, ParamBuilder, ParamId, ParamSet, Tape, Var};
use crate::spatial::{fps, knn::nearest_one};
use crate::types::{Point, PointCloud};

pub const N2C_PREFIX: &str = "n2c";
pub const REFINE_PREFIX: &str = "refine";

/// Independent sub-seed `tag` of `seed`.
pub(crate) fn sub_seed(seed: u64, tag: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(tag);
    rng.next_u64()
}

const TAG_COARSE_CPA: u64 = 1000;
const TAG_REFINE_CPA: u64 = 1001;

#[derive(Debug, Clone)]
pub struct N2cNet {
    pub mssc: Mssc,
    /// One attention block per downsampling stage.
    pub stages: Vec<Cpa>,
    pub coarse_cpa: Cpa,
    pub pointnet: PointNetLite,
    /// C → 3 residual offset head; starts at zero.
    pub mlp_coord: Mlp,
}

#[derive(Debug, Clone)]
pub struct RefineNet {
    pub pointnet: PointNetLite,
    pub cpa: Cpa,
    pub upsample: SpdUpsample,
}

/// Both stages of the completion network over one parameter table.
#[derive(Debug, Clone)]
pub struct Model {
    pub cfg: RunConfig,
    pub n2c: N2cNet,
    pub refine: RefineNet,
}

fn cpa(pb: &mut ParamBuilder, cfg: &RunConfig) -> Result<Cpa> {
    Cpa::declare(pb, cfg.feature_dim, cfg.knn_k, cfg.segments, cfg.mlp_depth, cfg.curve, cfg.serial_bits)
}

impl Model {
    fn declare(cfg: &RunConfig, pb: &mut ParamBuilder) -> Result<Self> {
        cfg.validate()?;
        let c = cfg.feature_dim;
        let depth = cfg.mlp_depth;
        let n2c = pb.with_prefix(N2C_PREFIX, |pb| -> Result<N2cNet> {
            Ok(N2cNet {
                mssc: pb.with_prefix("mssc", |pb| Mssc::declare(pb, c, &cfg.grid_sizes(), depth))?,
                stages: (0..cfg.n2c_stages)
                    .map(|i| pb.with_prefix(&format!("cpa{i}"), |pb| cpa(pb, cfg)))
                    .collect::<Result<_>>()?,
                coarse_cpa: pb.with_prefix("cpa_coarse", |pb| cpa(pb, cfg))?,
                pointnet: pb.with_prefix("pointnet", |pb| PointNetLite::declare(pb, c, depth))?,
                mlp_coord: Mlp::declare_zero_last(pb, "mlp_coord", &Mlp::widths(c, c, 3, depth))?,
            })
        })?;
        let refine = pb.with_prefix(REFINE_PREFIX, |pb| -> Result<RefineNet> {
            Ok(RefineNet {
                pointnet: pb.with_prefix("pointnet", |pb| PointNetLite::declare(pb, c, depth))?,
                cpa: pb.with_prefix("cpa", |pb| cpa(pb, cfg))?,
                upsample: pb.with_prefix("upsample", |pb| {
                    SpdUpsample::declare(pb, c, cfg.upsample_factor, cfg.upsample_radius, depth)
                })?,
            })
        })?;
        Ok(Self { cfg: cfg.clone(), n2c, refine })
    }

    /// Fresh parameters drawn from `cfg.seed`.
    pub fn init(cfg: &RunConfig) -> Result<(Self, ParamSet)> {
        let mut params = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let model = Self::declare(cfg, &mut ParamBuilder::new(&mut params, Some(&mut rng)))?;
        Ok((model, params))
    }

    /// Binds to existing parameters; every tensor the architecture needs
    /// must be present with the right shape.
    pub fn bind(cfg: &RunConfig, params: &mut ParamSet) -> Result<Self> {
        let before = params.len();
        let model = Self::declare(cfg, &mut ParamBuilder::new(params, None))?;
        debug_assert_eq!(before, params.len());
        Ok(model)
    }

    /// Binds to a checkpoint using the configuration stored in it.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<(Self, ParamSet)> {
        Self::from_checkpoint_with(ck, &ck.config)
    }

    /// Binds to a checkpoint under `cfg`; the architecture fields must agree.
    pub fn from_checkpoint_with(ck: &Checkpoint, cfg: &RunConfig) -> Result<(Self, ParamSet)> {
        let mut params = ParamSet::from_named(ck.params.clone())?;
        let model = Self::bind(cfg, &mut params)?;
        if params.len() != count_declared(cfg)? {
            return Err(Error::Config("checkpoint holds tensors this configuration does not use".into()));
        }
        Ok((model, params))
    }

    pub fn stage_param_ids(&self, params: &ParamSet, prefix: &str) -> Vec<ParamId> {
        let dotted = format!("{prefix}.");
        params.iter().enumerate().filter(|(_, p)| p.name.starts_with(&dotted)).map(|(i, _)| i).collect()
    }

    pub fn to_checkpoint(&self, params: &ParamSet) -> Checkpoint {
        Checkpoint { params: params.named_tensors(), config: self.cfg.clone() }
    }
}

fn count_declared(cfg: &RunConfig) -> Result<usize> {
    Ok(Model::init(cfg)?.1.len())
}

/// Everything the noise-to-coarse pass produced, as tape variables.
pub struct N2cTrace {
    /// P_1 … P_N.
    pub stage_points: Vec<PointCloud>,
    /// F_1 … F_N.
    pub stage_feats: Vec<Var>,
    pub p_noise: PointCloud,
    /// |P_noise|×3.
    pub p_coarse: Var,
    pub f_coarse: Var,
}

/// Concrete noise-to-coarse outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct N2cState {
    pub stage_points: Vec<PointCloud>,
    pub stage_feats: Vec<DenseTensor>,
    pub p_noise: PointCloud,
    pub p_coarse: PointCloud,
    pub f_coarse: DenseTensor,
}

impl N2cState {
    pub fn seeds(&self) -> &PointCloud {
        self.stage_points.last().expect("at least one stage")
    }
}

pub(crate) fn cloud_of(t: &DenseTensor) -> Result<PointCloud> {
    PointCloud::from_flat(t.data()).map_err(|_| Error::Invalid("network produced non-finite coordinates".into()))
}

impl N2cTrace {
    pub fn state(&self, tape: &Tape) -> Result<N2cState> {
        Ok(N2cState {
            stage_points: self.stage_points.clone(),
            stage_feats: self.stage_feats.iter().map(|&v| tape.value(v).clone()).collect(),
            p_noise: self.p_noise.clone(),
            p_coarse: cloud_of(tape.value(self.p_coarse))?,
            f_coarse: tape.value(self.f_coarse).clone(),
        })
    }

    /// Loads a concrete state onto `tape` as constants.
    pub fn from_state(tape: &mut Tape, state: &N2cState) -> Self {
        Self {
            stage_points: state.stage_points.clone(),
            stage_feats: state.stage_feats.iter().map(|f| tape.constant(f.clone())).collect(),
            p_noise: state.p_noise.clone(),
            p_coarse: tape.constant(DenseTensor::new(vec![state.p_coarse.len(), 3], state.p_coarse.flat()).expect("n×3")),
            f_coarse: tape.constant(state.f_coarse.clone()),
        }
    }
}

/// For every point, its nearest seed and the offset from that seed.
fn seed_lookup(points: &PointCloud, seeds: &PointCloud) -> (Arc<Vec<usize>>, Vec<Point>) {
    let nn = nearest_one(points.points(), seeds.points());
    let anchors = nn.iter().map(|&i| seeds[i]).collect();
    (Arc::new(nn), anchors)
}

fn offsets_from(points: &PointCloud, anchors: &[Point]) -> DenseTensor {
    let data = points
        .points()
        .iter()
        .zip(anchors)
        .flat_map(|(p, a)| [p[0] - a[0], p[1] - a[1], p[2] - a[2]])
        .collect();
    DenseTensor::new(vec![points.len(), 3], data).expect("n×3")
}

/// Everything in the noise-to-coarse pass that depends only on the input
/// and noise clouds: stage subsets, voxel maps, neighbor lists and seed
/// assignments. Reusable across parameter updates.
#[derive(Debug, Clone)]
pub struct N2cGeometry {
    p_noise: PointCloud,
    mssc_input: MsscGeometry,
    mssc_noise: MsscGeometry,
    stage_points: Vec<PointCloud>,
    /// FPS picks of stage i+1 among stage i.
    stage_sel: Vec<Arc<Vec<usize>>>,
    stage_cpa: Vec<CpaGeometry>,
    seed_nn: Arc<Vec<usize>>,
    seed_rel: DenseTensor,
    coarse_cpa: CpaGeometry,
}

impl N2cNet {
    pub fn geometry(&self, cfg: &RunConfig, p_input: &PointCloud, p_noise: &PointCloud, seed: u64) -> Result<N2cGeometry> {
        if p_input.is_empty() || p_noise.is_empty() {
            return Err(Error::Invalid("noise-to-coarse needs non-empty input and noise clouds".into()));
        }
        let sizes = cfg.stage_sizes(p_input.len());
        if let Some((i, &n)) = sizes.iter().enumerate().find(|(_, &n)| n < cfg.knn_k) {
            return Err(Error::Config(format!(
                "stage {} would hold {n} points, fewer than knn_k = {}",
                i + 1,
                cfg.knn_k
            )));
        }
        let origin = p_input.centroid();
        let mssc_input = self.mssc.geometry(p_input, origin)?;
        let mssc_noise = self.mssc.geometry(p_noise, origin)?;

        // Stage 1 attends within the input itself; later stages downsample.
        let mut points = vec![p_input.clone()];
        let mut stage_sel = Vec::new();
        let mut stage_cpa = vec![self.stages[0].geometry(p_input, p_input, sub_seed(seed, 0))?];
        for (i, block) in self.stages.iter().enumerate().skip(1) {
            let prev_p = &points[i - 1];
            let sel = fps(prev_p, sizes[i], 0)?;
            let p_i = prev_p.select(&sel);
            stage_cpa.push(block.geometry(&p_i, prev_p, sub_seed(seed, i as u64))?);
            stage_sel.push(Arc::new(sel));
            points.push(p_i);
        }
        let (seed_nn, anchors) = seed_lookup(p_noise, points.last().expect("at least one stage"));
        let coarse_cpa = self.coarse_cpa.geometry(p_noise, &points[0], sub_seed(seed, TAG_COARSE_CPA))?;
        Ok(N2cGeometry {
            p_noise: p_noise.clone(),
            mssc_input,
            mssc_noise,
            stage_points: points,
            stage_sel,
            stage_cpa,
            seed_nn,
            seed_rel: offsets_from(p_noise, &anchors),
            coarse_cpa,
        })
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        params: &ParamSet,
        cfg: &RunConfig,
        p_input: &PointCloud,
        p_noise: &PointCloud,
        seed: u64,
    ) -> Result<N2cTrace> {
        let geom = self.geometry(cfg, p_input, p_noise, seed)?;
        self.forward_with(tape, params, &geom)
    }

    pub fn forward_with(&self, tape: &mut Tape, params: &ParamSet, geom: &N2cGeometry) -> Result<N2cTrace> {
        if geom.stage_cpa.len() != self.stages.len() {
            return Err(Error::Config("geometry built for a different stage count".into()));
        }
        let f0 = self.mssc.forward_with(tape, params, &geom.mssc_input)?;
        let f_noise = self.mssc.forward_with(tape, params, &geom.mssc_noise)?;

        let mut feats = vec![self.stages[0].forward_with(tape, params, &geom.stage_cpa[0], f0, f0, f0)?];
        for (i, block) in self.stages.iter().enumerate().skip(1) {
            let prev_f = feats[i - 1];
            let f_hat = tape.index_rows(prev_f, geom.stage_sel[i - 1].clone())?;
            feats.push(block.forward_with(tape, params, &geom.stage_cpa[i], f_hat, prev_f, f_hat)?);
        }

        let f_seed = *feats.last().expect("at least one stage");
        let f_seed_hat = tape.index_rows(f_seed, geom.seed_nn.clone())?;
        let rel = tape.constant(geom.seed_rel.clone());
        let value = self.pointnet.forward(tape, params, rel, f_seed_hat)?;
        let f_new = self.coarse_cpa.forward_with(tape, params, &geom.coarse_cpa, f_noise, feats[0], value)?;
        let offset = self.mlp_coord.forward(tape, params, f_new)?;
        let p_noise = &geom.p_noise;
        let base = tape.constant(DenseTensor::new(vec![p_noise.len(), 3], p_noise.flat())?);
        let p_coarse = tape.add(base, offset)?;
        Ok(N2cTrace {
            stage_points: geom.stage_points.clone(),
            stage_feats: feats,
            p_noise: p_noise.clone(),
            p_coarse,
            f_coarse: f_new,
        })
    }
}

impl RefineNet {
    /// |P_coarse|·U × 3 refined coordinates.
    pub fn forward(&self, tape: &mut Tape, params: &ParamSet, trace: &N2cTrace, seed: u64) -> Result<Var> {
        let p_coarse = cloud_of(tape.value(trace.p_coarse))?;
        let seeds = trace.stage_points.last().expect("at least one stage");
        let f_seed = *trace.stage_feats.last().expect("at least one stage");
        let (nn, anchors) = seed_lookup(&p_coarse, seeds);
        let f_seed_hat = tape.index_rows(f_seed, nn)?;
        let anchor = tape.constant(DenseTensor::new(vec![anchors.len(), 3], anchors.concat())?);
        let rel = tape.sub(trace.p_coarse, anchor)?;
        let value = self.pointnet.forward(tape, params, rel, f_seed_hat)?;
        let f_refine = self.cpa.forward(
            tape,
            params,
            &p_coarse,
            trace.f_coarse,
            &trace.stage_points[0],
            trace.stage_feats[0],
            value,
            sub_seed(seed, TAG_REFINE_CPA),
        )?;
        let (p_refine, _) = self.upsample.forward(tape, params, trace.p_coarse, f_refine)?;
        Ok(p_refine)
    }
}

/// Runs the noise-to-coarse network once.
pub fn n2c_forward(
    p_input: &PointCloud,
    p_noise: &PointCloud,
    model: &Model,
    params: &ParamSet,
    seed: u64,
) -> Result<N2cState> {
    let mut tape = Tape::new();
    let trace = model.n2c.forward(&mut tape, params, &model.cfg, p_input, p_noise, seed)?;
    trace.state(&tape)
}

/// Runs the refinement network on a finished noise-to-coarse state.
pub fn refine_forward(state: &N2cState, model: &Model, params: &ParamSet, seed: u64) -> Result<PointCloud> {
    let mut tape = Tape::new();
    let trace = N2cTrace::from_state(&mut tape, state);
    let p = model.refine.forward(&mut tape, params, &trace, seed)?;
    cloud_of(tape.value(p))
}
