use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::tape::{Grads, Tape};
use super::tensor::DenseTensor;
use crate::error::{Error, Result};

pub type ParamId = usize;

/// A learned tensor plus its Adam moments.
#[derive(Debug, Clone)]
pub struct Parameter {
    pub name: String,
    pub tensor: DenseTensor,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl Parameter {
    pub fn new(name: impl Into<String>, tensor: DenseTensor) -> Self {
        let n = tensor.len();
        Self { name: name.into(), tensor, m: vec![0.0; n], v: vec![0.0; n], step: 0 }
    }
}

#[derive(Debug, Clone, Copy)]
pub enum Init {
    /// Uniform in ±sqrt(6 / (fan_in + fan_out)).
    Glorot { fan_in: usize, fan_out: usize },
    Zeros,
}

/// Named parameter table. Insertion order is stable and defines checkpoint order.
#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    params: Vec<Parameter>,
    by_name: HashMap<String, ParamId>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a table from named tensors; names must be unique.
    pub fn from_named(entries: Vec<(String, DenseTensor)>) -> Result<Self> {
        let mut set = Self::new();
        for (name, t) in entries {
            set.insert(Parameter::new(name, t))?;
        }
        Ok(set)
    }

    pub fn insert(&mut self, p: Parameter) -> Result<ParamId> {
        if self.by_name.contains_key(&p.name) {
            return Err(Error::Invalid(format!("duplicate parameter name {}", p.name)));
        }
        let id = self.params.len();
        self.by_name.insert(p.name.clone(), id);
        self.params.push(p);
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.iter_mut()
    }

    /// Total number of scalar weights.
    pub fn element_count(&self) -> usize {
        self.params.iter().map(|p| p.tensor.len()).sum()
    }

    pub fn named_tensors(&self) -> Vec<(String, DenseTensor)> {
        self.params
            .iter()
            .map(|p| {
                let mut t = p.tensor.clone();
                t.zero_grad();
                (p.name.clone(), t)
            })
            .collect()
    }

    /// Adds `scale ×` the tape gradients of every bound parameter into the
    /// parameters' gradient slots.
    pub fn accumulate(&mut self, tape: &Tape, grads: &Grads, scale: f64) {
        let mut bound: Vec<_> = tape.bound_params().collect();
        bound.sort_unstable_by_key(|(id, _)| *id);
        for (id, var) in bound {
            let Some(g) = grads.wrt(var) else { continue };
            let t = &mut self.params[id].tensor;
            let n = t.len();
            let slot = t.grad.get_or_insert_with(|| vec![0.0; n]);
            for (d, s) in slot.iter_mut().zip(g) {
                *d += scale * s;
            }
        }
    }

    pub fn zero_grads(&mut self) {
        self.params.iter_mut().for_each(|p| p.tensor.zero_grad());
    }
}

/// Declares parameters under a name prefix. With an RNG, missing parameters
/// are created; without one, every declared name must already exist with the
/// declared shape (checkpoint binding).
pub struct ParamBuilder<'a> {
    set: &'a mut ParamSet,
    rng: Option<&'a mut ChaCha8Rng>,
    prefix: String,
}

impl<'a> ParamBuilder<'a> {
    pub fn new(set: &'a mut ParamSet, rng: Option<&'a mut ChaCha8Rng>) -> Self {
        Self { set, rng, prefix: String::new() }
    }

    pub fn with_prefix<R>(&mut self, scope: &str, f: impl FnOnce(&mut Self) -> R) -> R {
        let saved = self.prefix.clone();
        self.prefix = if saved.is_empty() { scope.to_string() } else { format!("{saved}.{scope}") };
        let r = f(self);
        self.prefix = saved;
        r
    }

    pub fn declare(&mut self, name: &str, shape: &[usize], init: Init) -> Result<ParamId> {
        let full = if self.prefix.is_empty() { name.to_string() } else { format!("{}.{name}", self.prefix) };
        if let Some(id) = self.set.id(&full) {
            let have = self.set.get(id).tensor.shape();
            if have != shape {
                return Err(Error::Config(format!(
                    "parameter {full} has shape {have:?}, model expects {shape:?}"
                )));
            }
            return Ok(id);
        }
        let Some(rng) = self.rng.as_deref_mut() else {
            return Err(Error::Config(format!("checkpoint lacks parameter {full}")));
        };
        let n: usize = shape.iter().product();
        let data = match init {
            Init::Zeros => vec![0.0; n],
            Init::Glorot { fan_in, fan_out } => {
                let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
                (0..n).map(|_| rng.random_range(-a..a)).collect()
            }
        };
        self.set.insert(Parameter::new(full, DenseTensor::new(shape.to_vec(), data)?))
    }
}
