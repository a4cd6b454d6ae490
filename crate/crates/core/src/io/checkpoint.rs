//! Checkpoint container:
//!
//! ```text
//! "LNXT" | version u32 | config_len u32 | config JSON | count u32 |
//!   count × (name_len u32 | name | ndim u32 | ndim × u64 | f64 payload)
//! ```
//!
//! All integers and floats are little-endian.

use std::collections::HashSet;
use std::path::Path;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::nn::DenseTensor;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"LNXT";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Named tensors in file order plus the configuration they were trained with.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: Vec<(String, DenseTensor)>,
    pub config: RunConfig,
}

impl Checkpoint {
    /// Sum of tensor element counts.
    pub fn param_count(&self) -> usize {
        self.params.iter().map(|(_, t)| t.len()).sum()
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut seen = HashSet::new();
        if let Some((name, _)) = self.params.iter().find(|(n, _)| !seen.insert(n.as_str())) {
            return Err(Error::Invalid(format!("duplicate tensor name {name}")));
        }
        let mut out = Vec::new();
        out.extend_from_slice(&CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        let cfg = self.config.to_json();
        out.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
        out.extend_from_slice(cfg.as_bytes());
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for (name, t) in &self.params {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, at: 0 };
        let magic: [u8; 4] = r.take(4, "magic")?.try_into().expect("4 bytes");
        if magic != CHECKPOINT_MAGIC {
            return Err(Error::BadMagic(magic));
        }
        let version = r.u32("version")?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Version { found: version, expected: CHECKPOINT_VERSION });
        }
        let cfg_len = r.u32("config length")? as usize;
        let cfg_bytes = r.take(cfg_len, "config block")?;
        let text = std::str::from_utf8(cfg_bytes).map_err(|_| Error::Malformed("config block is not UTF-8".into()))?;
        let config: RunConfig =
            serde_json::from_str(text).map_err(|e| Error::Malformed(format!("config block: {e}")))?;
        let count = r.u32("entry count")? as usize;
        let mut params = Vec::with_capacity(count.min(1 << 16));
        for i in 0..count {
            let name_len = r.u32("name length")? as usize;
            let name = std::str::from_utf8(r.take(name_len, "name")?)
                .map_err(|_| Error::Malformed(format!("entry {i} name is not UTF-8")))?
                .to_string();
            let ndim = r.u32("rank")? as usize;
            let mut shape = Vec::with_capacity(ndim.min(16));
            for _ in 0..ndim {
                shape.push(r.u64("dimension")? as usize);
            }
            let n = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .filter(|&n| n.checked_mul(8).is_some())
                .ok_or_else(|| Error::Malformed(format!("tensor {name} shape {shape:?} overflows")))?;
            let payload = r.take(n * 8, "tensor payload")?;
            let data = payload
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            let t = DenseTensor::new(shape, data).map_err(|e| Error::Malformed(format!("tensor {name}: {e}")))?;
            params.push((name, t));
        }
        if r.at != bytes.len() {
            return Err(Error::Malformed(format!("{} trailing bytes", bytes.len() - r.at)));
        }
        Ok(Self { params, config })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.at < n {
            return Err(Error::Truncated(format!("{what} at byte {}", self.at)));
        }
        let s = &self.bytes[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
}

/// Writes atomically (temporary file, then rename).
pub fn save_checkpoint(params: &[(String, DenseTensor)], cfg: &RunConfig, path: &Path) -> Result<()> {
    let ck = Checkpoint { params: params.to_vec(), config: cfg.clone() };
    super::write_atomic(path, &ck.encode()?)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::decode(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let t = DenseTensor::new(vec![2, 2], vec![1.5, -0.0, f64::MIN_POSITIVE, 3e300]).unwrap();
        let cfg = RunConfig { feature_dim: 8, seed: 99, ..Default::default() };
        Checkpoint { params: vec![("a.weight".into(), t), ("b".into(), DenseTensor::zeros(&[3]))], config: cfg }
    }

    #[test]
    fn round_trip_is_bitwise() {
        let ck = sample();
        let back = Checkpoint::decode(&ck.encode().unwrap()).unwrap();
        assert_eq!(back.config, ck.config);
        for ((n1, t1), (n2, t2)) in ck.params.iter().zip(&back.params) {
            assert_eq!(n1, n2);
            assert_eq!(t1.shape(), t2.shape());
            let b1: Vec<u64> = t1.data().iter().map(|v| v.to_bits()).collect();
            let b2: Vec<u64> = t2.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(b1, b2);
        }
        assert_eq!(back.param_count(), 7);
    }

    #[test]
    fn empty_table() {
        let ck = Checkpoint { params: vec![], config: RunConfig::default() };
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.ckpt");
        save_checkpoint(&ck.params, &ck.config, &p).unwrap();
        assert_eq!(load_checkpoint(&p).unwrap(), ck);
    }

    #[test]
    fn corruption_is_typed() {
        let bytes = sample().encode().unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Checkpoint::decode(&bad), Err(Error::BadMagic(_))));
        let mut bad = bytes.clone();
        bad[4] = 2;
        assert!(matches!(Checkpoint::decode(&bad), Err(Error::Version { found: 2, expected: 1 })));
        for cut in [3, 10, bytes.len() - 1] {
            assert!(matches!(Checkpoint::decode(&bytes[..cut]), Err(Error::Truncated(_))), "cut {cut}");
        }
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(Checkpoint::decode(&long), Err(Error::Malformed(_))));
    }

    #[test]
    fn duplicate_names_rejected() {
        let t = DenseTensor::zeros(&[1]);
        let ck = Checkpoint { params: vec![("x".into(), t.clone()), ("x".into(), t)], config: RunConfig::default() };
        assert!(ck.encode().is_err());
    }
}
