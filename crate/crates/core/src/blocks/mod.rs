//! Composite network blocks built on the autodiff tape.
//!
//! Each block is a plain struct of parameter handles created through a
//! [`ParamBuilder`](crate::nn::ParamBuilder); `forward` records onto a caller
//! supplied [`Tape`](crate::nn::Tape) so blocks compose into larger graphs.
//! The free functions (`mssc_forward`, `cpa_forward`, …) run a block once on
//! concrete tensors.

mod conv;
mod cpa;
mod mssc;
mod pointnet;
mod upsample;

pub use conv::{sparse_conv, SparseConv};
pub use cpa::{cpa_forward, Cpa, CpaGeometry};
pub use mssc::{mssc_forward, Mssc, MsscGeometry};
pub use pointnet::{pointnet_lite, PointNetLite};
pub use upsample::{spd_upsample, SpdUpsample};

use crate::nn::DenseTensor;
use crate::types::PointCloud;

/// Point coordinates as an N×3 tensor, optionally shifted by `-origin`.
pub(crate) fn coords_tensor(cloud: &PointCloud, origin: [f64; 3]) -> DenseTensor {
    let data = cloud.points().iter().flat_map(|p| [p[0] - origin[0], p[1] - origin[1], p[2] - origin[2]]).collect();
    DenseTensor::new(vec![cloud.len(), 3], data).expect("n×3 buffer")
}
