//! LiDAR scene completion from a single sparse scan.
//!
//! The crate covers the whole path from a raw scan to a dense completed
//! cloud: distance-aware point replication with Gaussian corruption
//! ([`dsr`]), a one-pass noise-to-coarse network and a point-splitting
//! refinement stage ([`pipeline`]) built from the blocks in [`blocks`] on a
//! small autodiff engine ([`nn`]), plus the geometry kernels ([`spatial`]),
//! file formats ([`io`]), synthetic scenes ([`synth`]), evaluation metrics
//! ([`metrics`]) and the latency harness ([`runtime`]).

pub mod blocks;
pub mod config;
pub mod dsr;
pub mod error;
pub mod io;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod runtime;
pub mod spatial;
pub mod synth;
pub mod types;

pub use config::{RunConfig, TrainConfig};
pub use error::{Error, Result};
pub use nn::DenseTensor;
pub use types::{Bounds, Point, PointCloud};
