use std::path::Path;

use crate::error::{Error, Result};
use crate::types::PointCloud;

/// x, y, z, intensity as little-endian f32.
pub const KITTI_RECORD_BYTES: usize = 16;

pub fn decode_kitti(bytes: &[u8]) -> Result<PointCloud> {
    if !bytes.len().is_multiple_of(KITTI_RECORD_BYTES) {
        return Err(Error::Malformed(format!(
            "scan length {} is not a multiple of {KITTI_RECORD_BYTES}",
            bytes.len()
        )));
    }
    let f = |b: &[u8]| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64;
    let points = bytes
        .chunks_exact(KITTI_RECORD_BYTES)
        .map(|r| [f(&r[0..4]), f(&r[4..8]), f(&r[8..12])])
        .collect();
    PointCloud::new(points)
}

pub fn encode_kitti(cloud: &PointCloud) -> Vec<u8> {
    let mut out = Vec::with_capacity(cloud.len() * KITTI_RECORD_BYTES);
    for p in cloud.points() {
        for c in p {
            out.extend_from_slice(&(*c as f32).to_le_bytes());
        }
        out.extend_from_slice(&0f32.to_le_bytes());
    }
    out
}

/// Reads a velodyne scan; the intensity channel is dropped.
pub fn read_kitti_bin(path: &Path) -> Result<PointCloud> {
    decode_kitti(&std::fs::read(path)?)
}

/// Writes a velodyne scan with zero intensity. Coordinates are stored as f32.
pub fn write_kitti_bin(cloud: &PointCloud, path: &Path) -> Result<()> {
    super::write_atomic(path, &encode_kitti(cloud))
}
