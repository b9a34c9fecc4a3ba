//! Per-city, per-pollutant standardization.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::data::city::CitySeries;
use crate::error::{MvarError, Result};
use crate::numerics::DenseMatrix;

pub const NORM_STATS_VERSION: u32 = 1;
/// Standard deviations below this are treated as degenerate and replaced by 1.
pub const DEGENERATE_STD: f64 = 1e-8;

/// Population mean and standard deviation over time for each (city, pollutant).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub version: u32,
    pub city_ids: Vec<String>,
    pub pollutants: Vec<String>,
    /// `N` rows of `D` means, physical units.
    pub mean: Vec<Vec<f64>>,
    /// `N` rows of `D` standard deviations, physical units (after clamping).
    pub std: Vec<Vec<f64>>,
    /// Entries whose raw standard deviation fell below [`DEGENERATE_STD`].
    pub degenerate: Vec<Vec<bool>>,
}

impl NormStats {
    pub fn n_cities(&self) -> usize {
        self.mean.len()
    }

    pub fn n_pollutants(&self) -> usize {
        self.pollutants.len()
    }

    fn check(&self, n: usize, d: usize) -> Result<()> {
        if self.mean.len() != n || self.mean.iter().any(|r| r.len() != d) {
            return Err(MvarError::shape(format!(
                "normalization stats are {}x{}, data is {n}x{d}",
                self.mean.len(),
                self.pollutants.len()
            )));
        }
        Ok(())
    }

    pub fn normalize(&self, series: &CitySeries) -> Result<CitySeries> {
        self.check(series.n_cities(), series.n_pollutants())?;
        Ok(series.map_valid(|i, d, v| (v - self.mean[i][d]) / self.std[i][d]))
    }

    pub fn denormalize(&self, series: &CitySeries) -> Result<CitySeries> {
        self.check(series.n_cities(), series.n_pollutants())?;
        Ok(series.map_valid(|i, d, v| v * self.std[i][d] + self.mean[i][d]))
    }

    /// Normalizes an `N × D` snapshot.
    pub fn normalize_matrix(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        self.check(x.rows(), x.cols())?;
        Ok(DenseMatrix::from_fn(x.rows(), x.cols(), |i, d| {
            (x.get(i, d) - self.mean[i][d]) / self.std[i][d]
        }))
    }

    pub fn denormalize_matrix(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        self.check(x.rows(), x.cols())?;
        Ok(DenseMatrix::from_fn(x.rows(), x.cols(), |i, d| {
            x.get(i, d) * self.std[i][d] + self.mean[i][d]
        }))
    }

    pub fn write_json<W: Write>(&self, w: W) -> Result<()> {
        serde_json::to_writer_pretty(w, self)?;
        Ok(())
    }

    pub fn read_json<R: Read>(r: R) -> Result<Self> {
        let s: Self = serde_json::from_reader(r)?;
        if s.version != NORM_STATS_VERSION {
            return Err(MvarError::Format(format!(
                "unsupported normalization stats version {}",
                s.version
            )));
        }
        if s.std.len() != s.mean.len() || s.degenerate.len() != s.mean.len() {
            return Err(MvarError::Format("normalization tables have mismatched sizes".into()));
        }
        Ok(s)
    }
}

/// Statistics over the valid entries of `train`. Each (city, pollutant)
/// needs at least two valid entries.
pub fn compute_norm_stats(train: &CitySeries) -> Result<NormStats> {
    let (n, d) = (train.n_cities(), train.n_pollutants());
    let mut mean = vec![vec![0.0; d]; n];
    let mut std = vec![vec![1.0; d]; n];
    let mut degenerate = vec![vec![false; d]; n];
    for i in 0..n {
        for p in 0..d {
            let vals: Vec<f64> = (0..train.n_times()).filter_map(|t| train.get(t, i, p)).collect();
            if vals.len() < 2 {
                return Err(MvarError::EmptyDataset(format!(
                    "city {} pollutant {} has {} valid training entries, need 2",
                    train.cities[i].id,
                    train.pollutants[p],
                    vals.len()
                )));
            }
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / vals.len() as f64;
            let s = var.sqrt();
            mean[i][p] = m;
            if s < DEGENERATE_STD {
                degenerate[i][p] = true;
                std[i][p] = 1.0;
            } else {
                std[i][p] = s;
            }
        }
    }
    Ok(NormStats {
        version: NORM_STATS_VERSION,
        city_ids: train.cities.iter().map(|c| c.id.clone()).collect(),
        pollutants: train.pollutants.clone(),
        mean,
        std,
        degenerate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::city::CityInfo;
    use crate::data::time::Timestamp;
    use proptest::prelude::*;

    fn one_city(values: &[f64]) -> CitySeries {
        let mut s = CitySeries::empty(
            vec![CityInfo { id: "c".into(), lat: 40.0, lon: 116.0 }],
            vec!["pm25".into()],
            Timestamp(0),
            values.len(),
        );
        for (t, &v) in values.iter().enumerate() {
            s.set(t, 0, 0, Some(v));
        }
        s
    }

    #[test]
    fn two_point_series() {
        let s = one_city(&[0.0, 2.0]);
        let st = compute_norm_stats(&s).unwrap();
        assert_eq!(st.mean[0][0], 1.0);
        assert_eq!(st.std[0][0], 1.0);
        assert!(!st.degenerate[0][0]);
        let n = st.normalize(&s).unwrap();
        assert_eq!(n.get(0, 0, 0), Some(-1.0));
        assert_eq!(n.get(1, 0, 0), Some(1.0));
    }

    #[test]
    fn constant_series_is_clamped() {
        let s = one_city(&[5.0, 5.0, 5.0]);
        let st = compute_norm_stats(&s).unwrap();
        assert!(st.degenerate[0][0]);
        assert_eq!(st.std[0][0], 1.0);
        let n = st.normalize(&s).unwrap();
        assert!((0..3).all(|t| n.get(t, 0, 0) == Some(0.0)));
    }

    #[test]
    fn too_few_entries_is_an_error() {
        let mut s = one_city(&[1.0, 2.0, 3.0]);
        s.set(1, 0, 0, None);
        s.set(2, 0, 0, None);
        assert!(compute_norm_stats(&s).is_err());
    }

    #[test]
    fn mask_is_preserved() {
        let mut s = one_city(&[1.0, 2.0, 3.0]);
        s.set(1, 0, 0, None);
        let st = compute_norm_stats(&s).unwrap();
        let n = st.normalize(&s).unwrap();
        assert_eq!(n.get(1, 0, 0), None);
        assert_eq!(st.mean[0][0], 2.0);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let st = compute_norm_stats(&one_city(&[1.0, 2.0])).unwrap();
        assert!(st.normalize_matrix(&DenseMatrix::zeros(2, 1)).is_err());
    }

    #[test]
    fn json_round_trip() {
        let st = compute_norm_stats(&one_city(&[1.0, 2.5, 7.0])).unwrap();
        let mut buf = Vec::new();
        st.write_json(&mut buf).unwrap();
        assert_eq!(NormStats::read_json(buf.as_slice()).unwrap(), st);
    }

    proptest! {
        #[test]
        fn denormalize_inverts_normalize(vals in prop::collection::vec(0.0f64..500.0, 3..40)) {
            let s = one_city(&vals);
            let st = compute_norm_stats(&s).unwrap();
            let back = st.denormalize(&st.normalize(&s).unwrap()).unwrap();
            for t in 0..vals.len() {
                let err = (back.get(t, 0, 0).unwrap() - vals[t]).abs();
                prop_assert!(err <= 1e-9 * vals[t].abs().max(1.0));
            }
        }
    }
}
