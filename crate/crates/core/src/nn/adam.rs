use serde::{Deserialize, Serialize};

use super::param::Parameter;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled: applied to the weights, not folded into the gradient.
    pub weight_decay: f64,
}

impl Adam {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay }
    }
}

/// One bias-corrected Adam update with decoupled weight decay
/// (`θ ← θ − lr·wd·θ` first). Gradients are cleared afterwards.
pub fn adam_step<'a>(params: impl IntoIterator<Item = &'a mut Parameter>, opt: &Adam) -> Result<()> {
    let mut params: Vec<&mut Parameter> = params.into_iter().collect();
    if let Some(p) = params.iter().find(|p| p.tensor.grad.is_none()) {
        return Err(Error::Invalid(format!("parameter {} has no gradient", p.name)));
    }
    for p in params.iter_mut() {
        let grad = p.tensor.grad.take().expect("checked above");
        p.step += 1;
        let t = p.step as i32;
        let bc1 = 1.0 - opt.beta1.powi(t);
        let bc2 = 1.0 - opt.beta2.powi(t);
        let decay = opt.lr * opt.weight_decay;
        let Parameter { tensor, m, v, .. } = &mut **p;
        for (((w, g), m), v) in tensor.data_mut().iter_mut().zip(&grad).zip(m.iter_mut()).zip(v.iter_mut()) {
            *w -= decay * *w;
            *m = opt.beta1 * *m + (1.0 - opt.beta1) * g;
            *v = opt.beta2 * *v + (1.0 - opt.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *w -= opt.lr * m_hat / (v_hat.sqrt() + opt.eps);
        }
    }
    Ok(())
}
