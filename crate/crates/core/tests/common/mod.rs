//! Independent oracles and fixtures shared by the integration and acceptance tests.
#![allow(dead_code)]

use std::sync::Arc;

use mvar_core::data::kriging::{Sample, Variogram};
use mvar_core::data::{CityInfo, GridSpec, Timestamp};
use mvar_core::model::{HyperParams, Mvar};
use mvar_core::numerics::{DenseMatrix, ParamStore};
use mvar_core::train::RolloutSample;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Great-circle distance on a 6371 km sphere via the haversine formula.
pub fn great_circle_km(a: (f64, f64), b: (f64, f64)) -> f64 {
    let (p1, p2) = (a.0.to_radians(), b.0.to_radians());
    let dp = p2 - p1;
    let dl = (b.1 - a.1).to_radians();
    let s = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
    2.0 * 6371.0 * s.sqrt().asin()
}

fn gamma(v: &Variogram, h: f64) -> f64 {
    if h == 0.0 {
        0.0
    } else {
        v.nugget + v.sill * (1.0 - (-h / v.range_km).exp())
    }
}

/// Ordinary Kriging by a dense LU solve of the bordered system.
pub fn kriging_oracle(at: (f64, f64), samples: &[Sample], v: &Variogram) -> (f64, Vec<f64>) {
    let n = samples.len();
    let mut a = DMatrix::<f64>::zeros(n + 1, n + 1);
    let mut b = DVector::<f64>::zeros(n + 1);
    for i in 0..n {
        for j in 0..n {
            a[(i, j)] = gamma(v, great_circle_km((samples[i].lat, samples[i].lon), (samples[j].lat, samples[j].lon)));
        }
        a[(i, n)] = 1.0;
        a[(n, i)] = 1.0;
        b[i] = gamma(v, great_circle_km((samples[i].lat, samples[i].lon), at));
    }
    b[n] = 1.0;
    let x = a.lu().solve(&b).expect("nonsingular oracle system");
    let w: Vec<f64> = x.iter().take(n).copied().collect();
    let value = w.iter().zip(samples).map(|(w, s)| w * s.value).sum();
    (value, w)
}

/// Minimum number of model calls reaching hour `h`, for every `h ≤ max`.
pub fn min_invocations(max: u32, leads: &[u32]) -> Vec<usize> {
    let mut best = vec![usize::MAX; max as usize + 1];
    best[0] = 0;
    for h in 1..=max as usize {
        for &l in leads {
            let l = l as usize;
            if l <= h && best[h - l] != usize::MAX {
                best[h] = best[h].min(best[h - l] + 1);
            }
        }
    }
    best
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DenseMatrix {
    DenseMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

pub fn cities(n: usize) -> Vec<CityInfo> {
    (0..n)
        .map(|i| CityInfo {
            id: format!("c{i}"),
            lat: 37.0 + 0.7 * i as f64,
            lon: 113.0 + 1.1 * (i % 3) as f64,
        })
        .collect()
}

/// The smallest meteorology-coupled configuration used for gradient checks:
/// 4 cities, 3 pollutants, 2 channels on an 8x8 grid, 2 blocks, width 16,
/// 2 heads, and a 3-step rollout.
pub fn tiny_problem(seed: u64) -> (Mvar, ParamStore, RolloutSample) {
    let mut h = HyperParams::new(4, 3).with_widths(16, 4).with_meteo(2, 8, 8);
    h.blocks = 2;
    h.heads = 2;
    h.d_t = 8;
    h.ds_hidden = 8;
    let grid = GridSpec {
        lat0: 41.0,
        lon0: 112.0,
        dlat: -0.75,
        dlon: 1.0,
        height: 8,
        width: 8,
    };
    let model = Mvar::new(h, cities(4), Some(grid)).expect("valid tiny config");
    let params = model.init_params(seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
    let tau = 3;
    let sample = RolloutSample {
        init: Timestamp::from_ymdh(2021, 3, 1, 0).unwrap(),
        lead_hours: 6,
        x_prev: random_matrix(&mut rng, 4, 3),
        x_curr: random_matrix(&mut rng, 4, 3),
        targets: (0..tau).map(|_| random_matrix(&mut rng, 4, 3)).collect(),
        meteo: Some((0..=tau).map(|_| Arc::new(random_matrix(&mut rng, 64, 2))).collect()),
    };
    (model, params, sample)
}
