use serde::{Deserialize, Serialize};

use crate::error::{MvarError, Result};
use crate::numerics::{DenseMatrix, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled: applied as `θ ← θ − lr·wd·θ` before the moment update.
    pub weight_decay: f64,
}

impl AdamConfig {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Vec<DenseMatrix>,
    v: Vec<DenseMatrix>,
    t: u64,
}

impl AdamState {
    pub fn new(params: &ParamStore) -> Self {
        Self {
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }
}

/// One Adam update with bias correction. Nothing is modified if any
/// gradient is non-finite.
pub fn adam_step(params: &mut ParamStore, grads: &[DenseMatrix], state: &mut AdamState, cfg: &AdamConfig) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(MvarError::shape(format!(
            "{} gradients for {} parameters",
            grads.len(),
            params.len()
        )));
    }
    for ((id, name, p), g) in params.iter().zip(grads) {
        if g.shape() != p.shape() {
            return Err(MvarError::shape(format!("gradient for {name} is {:?}, expected {:?}", g.shape(), p.shape())));
        }
        if !g.is_finite() {
            return Err(MvarError::NonFinite(format!("gradient of parameter {name} ({id:?})")));
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    let decay = 1.0 - cfg.lr * cfg.weight_decay;
    for (k, p) in params.tensors_mut().iter_mut().enumerate() {
        let g = grads[k].values();
        let m = state.m[k].values_mut();
        let v = state.v[k].values_mut();
        for (i, th) in p.values_mut().iter_mut().enumerate() {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            let mh = m[i] / c1;
            let vh = v[i] / c2;
            *th = *th * decay - cfg.lr * mh / (vh.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

/// Rescales gradients in place so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [DenseMatrix], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|g| g.values())
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            g.values_mut().iter_mut().for_each(|x| *x *= s);
        }
    }
    norm
}
