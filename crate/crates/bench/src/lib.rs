//! Seeded inputs shared by the benchmarks.

use linext_core::synth::{synth_scene, SceneSpec};
use linext_core::PointCloud;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `n` points uniform in a cube of half-width `half`.
pub fn uniform_cloud(n: usize, half: f64, seed: u64) -> PointCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    PointCloud::new((0..n).map(|_| [0; 3].map(|_: i32| rng.random_range(-half..half))).collect())
        .expect("finite points")
}

/// Street scene scan capped at `max_points`.
pub fn street_scan(max_points: usize, seed: u64) -> PointCloud {
    let spec = SceneSpec { max_input_points: Some(max_points), ..SceneSpec::street() };
    synth_scene(&spec, seed).expect("valid scene").0
}
