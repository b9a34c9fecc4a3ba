use serde::{Deserialize, Serialize};

use crate::error::{MvarError, Result};
use crate::numerics::{DenseMatrix, Tape, Var};

/// Per-element error used inside the step-weighted loss.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    #[default]
    Mse,
    Mae,
}

/// Equally spaced weights from `w_max` down to `w_min` over `tau` steps.
pub fn make_sw_weights(tau: usize, w_max: f64, w_min: f64) -> Result<Vec<f64>> {
    if tau == 0 {
        return Err(MvarError::invalid("rollout length must be at least 1"));
    }
    if !(w_min > 0.0 && w_max >= w_min && w_max.is_finite()) {
        return Err(MvarError::invalid(format!(
            "step weights need w_max >= w_min > 0, got {w_max} and {w_min}"
        )));
    }
    if tau == 1 {
        return Ok(vec![w_max]);
    }
    let n = (tau - 1) as i64;
    if let Some((a, b, scale)) = decimal_pair(w_max, w_min) {
        // one division of exactly representable integers rounds correctly
        let fits = a.checked_mul(n).is_some_and(|v| v.unsigned_abs() < 1 << 53);
        if fits && (scale as i64).checked_mul(n).is_some_and(|v| v < 1 << 53) {
            return Ok((0..n).map(|k| (a * n - k * (a - b)) as f64 / (scale as i64 * n) as f64).chain([w_min]).collect());
        }
    }
    let step = (w_max - w_min) / n as f64;
    Ok((0..tau)
        .map(|k| if k == tau - 1 { w_min } else { w_max - k as f64 * step })
        .collect())
}

/// Both values as integers over a common power of ten, from their shortest
/// decimal representations.
fn decimal_pair(x: f64, y: f64) -> Option<(i64, i64, u64)> {
    let parse = |v: f64| -> Option<(i64, u32)> {
        let s = format!("{v}");
        let (int, frac) = s.split_once('.').unwrap_or((&s, ""));
        if frac.len() > 12 || int.len() > 6 {
            return None;
        }
        Some((format!("{int}{frac}").parse().ok()?, frac.len() as u32))
    };
    let (mx, dx) = parse(x)?;
    let (my, dy) = parse(y)?;
    let d = dx.max(dy);
    Some((mx * 10i64.pow(d - dx), my * 10i64.pow(d - dy), 10u64.pow(d)))
}

fn check(preds: usize, targets: usize, weights: &[f64]) -> Result<f64> {
    if preds != targets || preds != weights.len() || preds == 0 {
        return Err(MvarError::shape(format!(
            "{preds} predictions, {targets} targets and {} weights",
            weights.len()
        )));
    }
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(MvarError::invalid("step weights must have a positive sum"));
    }
    Ok(total)
}

/// `Σ_γ w_γ · mean_{city,pollutant} err(γ) / Σ_γ w_γ`.
pub fn sw_loss(preds: &[DenseMatrix], targets: &[DenseMatrix], weights: &[f64], kind: LossKind) -> Result<f64> {
    let total = check(preds.len(), targets.len(), weights)?;
    let mut acc = 0.0;
    for ((p, t), w) in preds.iter().zip(targets).zip(weights) {
        let diff = p.sub(t)?;
        let n = diff.len() as f64;
        let e: f64 = match kind {
            LossKind::Mse => diff.values().iter().map(|d| d * d).sum(),
            LossKind::Mae => diff.values().iter().map(|d| d.abs()).sum(),
        };
        acc += w * e / n;
    }
    Ok(acc / total)
}

/// [`sw_loss`] recorded on a tape.
pub fn sw_loss_on_tape(
    tape: &mut Tape,
    preds: &[Var],
    targets: &[DenseMatrix],
    weights: &[f64],
    kind: LossKind,
) -> Result<Var> {
    let total = check(preds.len(), targets.len(), weights)?;
    let mut terms = Vec::with_capacity(preds.len());
    for ((&p, t), w) in preds.iter().zip(targets).zip(weights) {
        terms.push(match kind {
            LossKind::Mse => tape.sq_error(p, t, w / total)?,
            LossKind::Mae => tape.abs_error(p, t, w / total)?,
        });
    }
    tape.sum(&terms)
}
