//! Empirical semivariogram estimation and exponential-model fitting.

use serde::{Deserialize, Serialize};

use crate::data::kriging::{haversine_km, Sample, Variogram};

pub const BIN_COUNT: usize = 10;
pub const MIN_PAIRS: usize = 50;
pub const DEFAULT_RANGE_KM: f64 = 200.0;

/// Outcome of [`fit_variogram`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariogramFit {
    pub variogram: Variogram,
    /// True when the fit was abandoned and defaults were returned.
    pub used_defaults: bool,
    /// True when the field showed no spatial variance at all.
    pub degenerate: bool,
    pub pair_count: usize,
    /// `(bin centre km, mean semivariance, pair count)` for non-empty bins.
    pub bins: Vec<(f64, f64, usize)>,
}

fn defaults(sample_variance: f64, degenerate: bool, pair_count: usize, bins: Vec<(f64, f64, usize)>) -> VariogramFit {
    // sill must stay positive; Kriging weights do not depend on its scale
    let sill = if sample_variance > 1e-12 { sample_variance } else { 1.0 };
    VariogramFit {
        variogram: Variogram {
            sill,
            range_km: DEFAULT_RANGE_KM,
            nugget: 0.0,
        },
        used_defaults: true,
        degenerate,
        pair_count,
        bins,
    }
}

/// Fits sill and range of an exponential model (nugget 0) to the pooled
/// empirical semivariogram of complete snapshots.
///
/// Pairs are binned into [`BIN_COUNT`] equal-width bins up to half the
/// largest pairwise distance. For each candidate range the count-weighted
/// least-squares sill has a closed form; the range is chosen on a log grid.
pub fn fit_variogram(snapshots: &[Vec<Sample>]) -> VariogramFit {
    let values: Vec<f64> = snapshots.iter().flatten().map(|s| s.value).collect();
    let sample_variance = if values.len() > 1 {
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / values.len() as f64
    } else {
        0.0
    };

    let mut pairs = Vec::new();
    for snap in snapshots {
        for i in 0..snap.len() {
            for j in i + 1..snap.len() {
                let d = haversine_km(snap[i].lat, snap[i].lon, snap[j].lat, snap[j].lon);
                pairs.push((d, 0.5 * (snap[i].value - snap[j].value).powi(2)));
            }
        }
    }
    if pairs.len() < MIN_PAIRS {
        return defaults(sample_variance, false, pairs.len(), Vec::new());
    }
    let max_d = pairs.iter().map(|p| p.0).fold(0.0, f64::max);
    let cutoff = max_d / 2.0;
    if cutoff <= 0.0 {
        return defaults(sample_variance, true, pairs.len(), Vec::new());
    }
    let width = cutoff / BIN_COUNT as f64;
    let mut sums = [0.0; BIN_COUNT];
    let mut counts = [0usize; BIN_COUNT];
    for &(d, g) in &pairs {
        if d > cutoff {
            continue;
        }
        let b = ((d / width) as usize).min(BIN_COUNT - 1);
        sums[b] += g;
        counts[b] += 1;
    }
    let bins: Vec<(f64, f64, usize)> = (0..BIN_COUNT)
        .filter(|&b| counts[b] > 0)
        .map(|b| ((b as f64 + 0.5) * width, sums[b] / counts[b] as f64, counts[b]))
        .collect();
    let max_gamma = bins.iter().map(|b| b.1).fold(0.0, f64::max);
    if bins.len() < 2 || max_gamma <= 1e-12 * sample_variance.max(1e-300) || max_gamma <= 1e-300 {
        return defaults(sample_variance, true, pairs.len(), bins);
    }

    let mut best: Option<(f64, f64, f64)> = None; // (sse, sill, range)
    let (lo, hi) = ((width / 20.0).ln(), (max_d * 20.0).ln());
    const STEPS: usize = 400;
    for k in 0..=STEPS {
        let range = (lo + (hi - lo) * k as f64 / STEPS as f64).exp();
        let (mut fg, mut ff) = (0.0, 0.0);
        for &(h, g, c) in &bins {
            let f = 1.0 - (-h / range).exp();
            fg += c as f64 * f * g;
            ff += c as f64 * f * f;
        }
        if ff <= 0.0 {
            continue;
        }
        let sill = fg / ff;
        let sse: f64 = bins
            .iter()
            .map(|&(h, g, c)| c as f64 * (sill * (1.0 - (-h / range).exp()) - g).powi(2))
            .sum();
        if best.is_none_or(|b| sse < b.0) {
            best = Some((sse, sill, range));
        }
    }
    match best {
        Some((_, sill, range)) if sill.is_finite() && sill > 0.0 && range.is_finite() => VariogramFit {
            variogram: Variogram {
                sill,
                range_km: range,
                nugget: 0.0,
            },
            used_defaults: false,
            degenerate: false,
            pair_count: pairs.len(),
            bins,
        },
        _ => defaults(sample_variance, false, pairs.len(), bins),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid_snapshot(value: impl Fn(usize, usize) -> f64) -> Vec<Sample> {
        let mut s = Vec::new();
        for i in 0..6 {
            for j in 0..6 {
                s.push(Sample {
                    lat: 38.0 + i as f64 * 0.5,
                    lon: 115.0 + j as f64 * 0.5,
                    value: value(i, j),
                });
            }
        }
        s
    }

    #[test]
    fn constant_field_falls_back_to_defaults() {
        let snaps = vec![grid_snapshot(|_, _| 42.0); 3];
        let fit = fit_variogram(&snaps);
        assert!(fit.degenerate);
        assert!(fit.used_defaults);
        assert_eq!(fit.variogram.range_km, DEFAULT_RANGE_KM);
        assert!(fit.variogram.validate().is_ok());
    }

    #[test]
    fn too_few_pairs_falls_back() {
        // 10 stations → 45 pairs
        let snap: Vec<Sample> = (0..10)
            .map(|i| Sample { lat: 40.0 + i as f64 * 0.1, lon: 116.0, value: i as f64 })
            .collect();
        let fit = fit_variogram(&[snap]);
        assert!(fit.used_defaults);
        assert!(!fit.degenerate);
        assert_eq!(fit.pair_count, 45);
        assert!((fit.variogram.sill - 8.25).abs() < 1e-12);
    }

    #[test]
    fn linear_trend_gives_positive_fit() {
        let snaps = vec![grid_snapshot(|i, j| i as f64 * 3.0 + j as f64)];
        let fit = fit_variogram(&snaps);
        assert!(!fit.used_defaults);
        assert!(fit.variogram.sill > 0.0 && fit.variogram.range_km > 0.0);
    }
}
