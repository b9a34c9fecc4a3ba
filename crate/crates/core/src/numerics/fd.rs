//! Central finite differences, the ground truth for every tape gradient.

use crate::error::{MvarError, Result};
use crate::numerics::matrix::DenseMatrix;
use crate::numerics::params::ParamStore;

/// Default perturbation for [`finite_diff_gradients`].
pub const DEFAULT_STEP: f64 = 1e-5;

/// Estimates `∂f/∂θ` for every scalar in `params` with
/// `(f(θ + h·e) − f(θ − h·e)) / 2h`.
pub fn finite_diff_gradients<F>(f: F, params: &ParamStore, h: f64) -> Result<Vec<DenseMatrix>>
where
    F: Fn(&ParamStore) -> Result<f64>,
{
    if !(h > 0.0 && h.is_finite()) {
        return Err(MvarError::invalid(format!("finite-difference step {h} must be positive")));
    }
    let mut work = params.clone();
    let mut out = params.zeros_like();
    for t in 0..params.len() {
        for i in 0..params.tensors()[t].len() {
            let orig = params.tensors()[t].values()[i];
            work.tensors_mut()[t].values_mut()[i] = orig + h;
            let plus = f(&work)?;
            work.tensors_mut()[t].values_mut()[i] = orig - h;
            let minus = f(&work)?;
            work.tensors_mut()[t].values_mut()[i] = orig;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(MvarError::NonFinite(format!(
                    "objective evaluated to a non-finite value while perturbing {}[{i}]",
                    params.name(crate::numerics::params::ParamId(t))
                )));
            }
            out[t].values_mut()[i] = (plus - minus) / (2.0 * h);
        }
    }
    Ok(out)
}

/// Largest elementwise `|a − b| / max(|a|, |b|, floor)`.
pub fn max_relative_error(a: &DenseMatrix, b: &DenseMatrix, floor: f64) -> f64 {
    a.values()
        .iter()
        .zip(b.values())
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}
