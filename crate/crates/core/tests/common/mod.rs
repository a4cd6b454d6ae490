//! Helpers shared by the integration test targets.

#![allow(dead_code)]

use std::sync::Arc;

use linext_core::blocks::{Cpa, Mssc, PointNetLite, SpdUpsample};
use linext_core::dsr::dsr;
use linext_core::nn::{grad_check, grad_check_params, GradCheckOptions, GradCheckReport, ParamSet, Tape, Var};
use linext_core::pipeline::{scene_loss, Model, Stage, N2C_PREFIX};
use linext_core::spatial::VoxelIndex;
use linext_core::{DenseTensor, PointCloud, Result, RunConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> DenseTensor {
    let n = shape.iter().product();
    DenseTensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

pub fn random_cloud(n: usize, scale: f64, rng: &mut ChaCha8Rng) -> PointCloud {
    PointCloud::new((0..n).map(|_| [0; 3].map(|_: i32| rng.random_range(-scale..scale))).collect()).unwrap()
}

/// Weighted sum so the check sees non-uniform upstream gradients.
fn weighted(tape: &mut Tape, y: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xABCD);
    let w = random(tape.shape(y), &mut rng);
    let wv = tape.constant(w);
    let p = tape.mul(y, wv)?;
    Ok(tape.sum(p))
}

/// Adds uniform noise to every parameter so zero-initialized heads are live.
pub fn jitter(params: &mut ParamSet, seed: u64, amount: f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for p in params.iter_mut() {
        p.tensor.data_mut().iter_mut().for_each(|v| *v += rng.random_range(-amount..amount));
    }
}

pub fn all_ids(params: &ParamSet) -> Vec<usize> {
    (0..params.len()).collect()
}

fn opts(seed: u64) -> GradCheckOptions {
    GradCheckOptions { seed, ..Default::default() }
}

/// Finite-difference reports for every differentiable tape primitive.
pub fn primitive_reports(seed: u64) -> Vec<(&'static str, GradCheckReport)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let o = opts(seed);
    let a = random(&[4, 3], &mut rng);
    let b = random(&[4, 3], &mut rng);
    let w = random(&[3, 5], &mut rng);
    let bias = random(&[5], &mut rng);
    let rel = random(&[3, 4, 8], &mut rng);
    let idx = Arc::new((0..12).map(|_| rng.random_range(0..4)).collect::<Vec<_>>());
    let seg = Arc::new(vec![0, 1, 0, 2]);
    let alpha = random(&[12, 3], &mut rng);
    let cloud = random_cloud(12, 1.5, &mut rng);
    let rules = Arc::new(VoxelIndex::build(&cloud, 1.0).unwrap().rulebook());
    let cells = random(&[rules.n_cells, 2], &mut rng);
    let kernel = random(&[rules.slots.len(), 2, 3], &mut rng);
    let kbias = random(&[3], &mut rng);
    let pred = random(&[6, 3], &mut rng);
    let gt: Arc<Vec<[f64; 3]>> = Arc::new(random_cloud(5, 1.0, &mut rng).into_points());

    macro_rules! check {
        ($inputs:expr, |$t:ident, $v:ident| $body:expr) => {
            grad_check(
                |$t: &mut Tape, $v: &[Var]| {
                    let y = $body;
                    weighted($t, y, seed)
                },
                $inputs,
                &o,
            )
            .unwrap()
        };
    }
    vec![
        ("linear", check!(&[a.clone(), w.clone(), bias.clone()], |t, v| t.linear(v[0], v[1], Some(v[2]))?)),
        ("relu", check!(std::slice::from_ref(&a), |t, v| t.relu(v[0]))),
        ("tanh", check!(std::slice::from_ref(&a), |t, v| t.tanh(v[0]))),
        ("add", check!(&[a.clone(), b.clone()], |t, v| t.add(v[0], v[1])?)),
        ("sub", check!(&[a.clone(), b.clone()], |t, v| t.sub(v[0], v[1])?)),
        ("mul", check!(&[a.clone(), b.clone()], |t, v| t.mul(v[0], v[1])?)),
        ("scale", check!(std::slice::from_ref(&a), |t, v| t.scale(v[0], -2.5))),
        ("expand_last", check!(std::slice::from_ref(&a), |t, v| t.expand_last(v[0], 3))),
        ("reshape", check!(std::slice::from_ref(&rel), |t, v| t.reshape(v[0], vec![12, 8])?)),
        ("swap_last2", check!(std::slice::from_ref(&rel), |t, v| t.swap_last2(v[0])?)),
        ("concat_cols", check!(&[a.clone(), b.clone()], |t, v| t.concat_cols(&[v[0], v[1]])?)),
        ("index_rows", check!(std::slice::from_ref(&a), |t, v| t.index_rows(v[0], Arc::new(vec![3, 0, 0, 2, 3]))?)),
        ("gather_neighbors", check!(std::slice::from_ref(&a), |t, v| t.gather_neighbors(v[0], idx.clone(), 3)?)),
        ("scatter_mean", check!(std::slice::from_ref(&a), |t, v| t.scatter_mean(v[0], seg.clone(), 3)?)),
        ("sparse_conv", check!(&[cells, kernel, kbias], |t, v| t.sparse_conv(v[0], v[1], Some(v[2]), rules.clone())?)),
        ("ssmp", check!(std::slice::from_ref(&rel), |t, v| t.ssmp(v[0], 4)?)),
        ("rel_segment_max", check!(&[a.clone(), b.clone(), alpha], |t, v| t.rel_segment_max(v[0], v[1], v[2], idx.clone(), 3, 3)?)),
        ("softmax", check!(std::slice::from_ref(&rel), |t, v| t.softmax(v[0], 1)?)),
        ("sum_axis", check!(std::slice::from_ref(&rel), |t, v| t.sum_axis(v[0], 1)?)),
        ("sum", check!(std::slice::from_ref(&a), |t, v| {
            let s = t.sum(v[0]);
            t.scale(s, 0.7)
        })),
        ("chamfer", check!(&[pred], |t, v| t.chamfer(v[0], gt.clone())?)),
    ]
}

/// Tiny configuration for whole-network checks.
pub fn toy_net_config(seed: u64) -> RunConfig {
    RunConfig {
        feature_dim: 4,
        knn_k: 4,
        segments: 2,
        n_vox: 2,
        n2c_stages: 2,
        fps_ratio: 0.5,
        repeat_counts: [1, 1, 2, 2],
        noise_sigma: 0.3,
        seed,
        ..Default::default()
    }
}

/// Finite-difference reports for the composite blocks and the full
/// noise-to-coarse loss, all on at most 32 points.
pub fn block_reports(seed: u64) -> Vec<(&'static str, GradCheckReport)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let o = opts(seed);
    let (c, k, s) = (4, 4, 2);
    let mut out = Vec::new();

    // MSSC over its parameters.
    let cloud = random_cloud(24, 1.2, &mut rng);
    let (mssc, mut mp) = Mssc::init(c, &[0.6, 1.2], 2, seed).unwrap();
    jitter(&mut mp, seed, 0.1);
    let origin = cloud.centroid();
    let r = grad_check_params(
        |t, p| {
            let y = mssc.forward(t, p, &cloud, origin)?;
            weighted(t, y, seed)
        },
        &mp,
        &all_ids(&mp),
        &GradCheckOptions { max_coords: Some(24), ..o },
    )
    .unwrap();
    out.push(("mssc", r));

    // CPA over its feature inputs and its parameters.
    let pq = random_cloud(6, 1.0, &mut rng);
    let pk = random_cloud(10, 1.0, &mut rng);
    let (cpa, cp) = Cpa::init(c, k, s, seed).unwrap();
    let geom = cpa.geometry(&pq, &pk, seed).unwrap();
    let query = random(&[6, c], &mut rng);
    let key = random(&[10, c], &mut rng);
    let value = random(&[6, c], &mut rng);
    let r = grad_check(
        |t, v| {
            let y = cpa.forward_with(t, &cp, &geom, v[0], v[1], v[2])?;
            weighted(t, y, seed)
        },
        &[query.clone(), key.clone(), value.clone()],
        &o,
    )
    .unwrap();
    out.push(("cpa inputs", r));
    let r = grad_check_params(
        |t, p| {
            let (q, kk, v) = (t.constant(query.clone()), t.constant(key.clone()), t.constant(value.clone()));
            let y = cpa.forward_with(t, p, &geom, q, kk, v)?;
            weighted(t, y, seed)
        },
        &cp,
        &all_ids(&cp),
        &o,
    )
    .unwrap();
    out.push(("cpa params", r));

    // PointNet-lite over coordinates, features and parameters.
    let (pn, pp) = PointNetLite::init(c, 2, seed).unwrap();
    let coords = random(&[8, 3], &mut rng);
    let feats = random(&[8, c], &mut rng);
    let r = grad_check(
        |t, v| {
            let y = pn.forward(t, &pp, v[0], v[1])?;
            weighted(t, y, seed)
        },
        &[coords.clone(), feats.clone()],
        &o,
    )
    .unwrap();
    out.push(("pointnet inputs", r));
    let r = grad_check_params(
        |t, p| {
            let (x, f) = (t.constant(coords.clone()), t.constant(feats.clone()));
            let y = pn.forward(t, p, x, f)?;
            weighted(t, y, seed)
        },
        &pp,
        &all_ids(&pp),
        &o,
    )
    .unwrap();
    out.push(("pointnet params", r));

    // Upsampler: both outputs, over inputs and parameters.
    let (up, mut upp) = SpdUpsample::init(c, 3, seed).unwrap();
    jitter(&mut upp, seed + 1, 0.3);
    let p_in = random(&[5, 3], &mut rng);
    let f_in = random(&[5, c], &mut rng);
    let both = |t: &mut Tape, p: &ParamSet, x: Var, f: Var| -> Result<Var> {
        let (po, fo) = up.forward(t, p, x, f)?;
        let a = weighted(t, po, seed)?;
        let b = weighted(t, fo, seed + 1)?;
        t.add(a, b)
    };
    let r = grad_check(|t, v| both(t, &upp, v[0], v[1]), &[p_in.clone(), f_in.clone()], &o).unwrap();
    out.push(("upsample inputs", r));
    let r = grad_check_params(
        |t, p| {
            let (x, f) = (t.constant(p_in.clone()), t.constant(f_in.clone()));
            both(t, p, x, f)
        },
        &upp,
        &all_ids(&upp),
        &o,
    )
    .unwrap();
    out.push(("upsample params", r));

    // Full noise-to-coarse Chamfer loss over the stage's parameters.
    let cfg = toy_net_config(seed);
    let (model, mut params) = Model::init(&cfg).unwrap();
    jitter(&mut params, seed + 2, 0.05);
    let input = random_cloud(16, 2.0, &mut rng);
    let noise = dsr(&input, cfg.repeat_counts, cfg.noise_sigma, seed).unwrap();
    let gt: Arc<Vec<[f64; 3]>> = Arc::new(random_cloud(32, 2.0, &mut rng).into_points());
    let ids = model.stage_param_ids(&params, N2C_PREFIX);
    let r = grad_check_params(
        |t, p| scene_loss(t, Stage::N2c, &model, p, &input, &noise, gt.clone(), seed),
        &params,
        &ids,
        &GradCheckOptions { max_coords: Some(6), ..o },
    )
    .unwrap();
    out.push(("n2c loss", r));
    out
}

/// Panics with the first failing check.
pub fn assert_reports(reports: &[(&str, GradCheckReport)], seed: u64) {
    for (name, r) in reports {
        assert!(r.checked > 0, "{name} seed {seed}: nothing checked");
        assert!(r.passed(), "{name} seed {seed}: {:?}", r.failures);
    }
}
