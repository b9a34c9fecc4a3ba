//! Ordinary Kriging with an exponential semivariogram on the sphere.

use serde::{Deserialize, Serialize};

use crate::error::{MvarError, Result};

pub const EARTH_RADIUS_KM: f64 = 6371.0;

/// Great-circle distance in kilometres.
pub fn haversine_km(lat1: f64, lon1: f64, lat2: f64, lon2: f64) -> f64 {
    let (p1, p2) = (lat1.to_radians(), lat2.to_radians());
    let dp = p2 - p1;
    let dl = (lon2 - lon1).to_radians();
    let a = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * a.sqrt().min(1.0).asin()
}

/// Exponential semivariogram `γ(h) = sill·(1 − e^{−h/range}) + nugget·[h > 0]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Variogram {
    pub sill: f64,
    pub range_km: f64,
    pub nugget: f64,
}

impl Variogram {
    pub fn new(sill: f64, range_km: f64, nugget: f64) -> Result<Self> {
        let v = Self {
            sill,
            range_km,
            nugget,
        };
        v.validate()?;
        Ok(v)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sill > 0.0 && self.range_km > 0.0 && self.nugget >= 0.0)
            || !(self.sill.is_finite() && self.range_km.is_finite() && self.nugget.is_finite())
        {
            return Err(MvarError::invalid(format!(
                "variogram needs sill > 0, range > 0, nugget >= 0 (got {self:?})"
            )));
        }
        Ok(())
    }

    pub fn semivariance(&self, h_km: f64) -> f64 {
        if h_km <= 0.0 {
            0.0
        } else {
            self.sill * (1.0 - (-h_km / self.range_km).exp()) + self.nugget
        }
    }
}

/// A located sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub lat: f64,
    pub lon: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KrigingEstimate {
    pub value: f64,
    pub variance: f64,
    pub weights: Vec<f64>,
    pub lagrange: f64,
}

/// Separation below which two stations count as co-located.
const DUPLICATE_KM: f64 = 1e-6;

/// Ordinary Kriging estimate at `(lat, lon)` from at least two samples at
/// distinct locations. Weights are constrained to sum to one.
pub fn krige_estimate(lat: f64, lon: f64, samples: &[Sample], vario: &Variogram) -> Result<KrigingEstimate> {
    vario.validate()?;
    let n = samples.len();
    if n < 2 {
        return Err(MvarError::invalid(format!(
            "ordinary Kriging needs at least 2 stations, got {n}"
        )));
    }
    for i in 0..n {
        for j in i + 1..n {
            let d = haversine_km(samples[i].lat, samples[i].lon, samples[j].lat, samples[j].lon);
            if d < DUPLICATE_KM {
                return Err(MvarError::DegenerateGeometry(format!(
                    "stations {i} and {j} share location ({}, {})",
                    samples[i].lat, samples[i].lon
                )));
            }
        }
    }
    let size = n + 1;
    let mut a = vec![0.0; size * size];
    let mut b = vec![0.0; size];
    for i in 0..n {
        for j in 0..n {
            let d = haversine_km(samples[i].lat, samples[i].lon, samples[j].lat, samples[j].lon);
            a[i * size + j] = vario.semivariance(d);
        }
        a[i * size + n] = 1.0;
        a[n * size + i] = 1.0;
        b[i] = vario.semivariance(haversine_km(samples[i].lat, samples[i].lon, lat, lon));
    }
    b[n] = 1.0;
    let rhs = b.clone();
    let x = solve_dense(&mut a, &mut b, size)?;
    let weights = x[..n].to_vec();
    let lagrange = x[n];
    let value = weights.iter().zip(samples).map(|(w, s)| w * s.value).sum();
    let variance = weights.iter().zip(&rhs).map(|(w, g)| w * g).sum::<f64>() + lagrange;
    Ok(KrigingEstimate {
        value,
        variance,
        weights,
        lagrange,
    })
}

/// Gaussian elimination with partial pivoting; `a` is row-major `n × n`.
fn solve_dense(a: &mut [f64], b: &mut [f64], n: usize) -> Result<Vec<f64>> {
    let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i * n + col].abs().total_cmp(&a[j * n + col].abs()))
            .expect("non-empty range");
        if a[pivot * n + col].abs() <= 1e-13 * scale {
            return Err(MvarError::DegenerateGeometry(
                "Kriging system is singular".into(),
            ));
        }
        if pivot != col {
            for k in 0..n {
                a.swap(col * n + k, pivot * n + k);
            }
            b.swap(col, pivot);
        }
        for row in col + 1..n {
            let f = a[row * n + col] / a[col * n + col];
            if f == 0.0 {
                continue;
            }
            for k in col..n {
                a[row * n + k] -= f * a[col * n + k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row * n + k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row * n + row];
    }
    Ok(x)
}

/// Inverse-distance-squared weighting; exact at a coincident sample.
pub fn idw_estimate(lat: f64, lon: f64, samples: &[Sample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(MvarError::invalid("inverse-distance weighting needs at least 1 station"));
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for s in samples {
        let d = haversine_km(lat, lon, s.lat, s.lon);
        if d < DUPLICATE_KM {
            return Ok(s.value);
        }
        let w = 1.0 / (d * d);
        num += w * s.value;
        den += w;
    }
    Ok(num / den)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vario() -> Variogram {
        Variogram::new(10.0, 80.0, 0.0).unwrap()
    }

    #[test]
    fn haversine_reference_distance() {
        // One degree of latitude on a 6371 km sphere: 6371·π/180.
        let d = haversine_km(39.0, 116.0, 40.0, 116.0);
        assert!((d - 6371.0 * std::f64::consts::PI / 180.0).abs() < 1e-9);
        assert_eq!(haversine_km(1.0, 2.0, 1.0, 2.0), 0.0);
    }

    #[test]
    fn semivariance_shape() {
        let v = Variogram::new(2.0, 50.0, 0.5).unwrap();
        assert_eq!(v.semivariance(0.0), 0.0);
        assert!((v.semivariance(50.0) - (2.0 * (1.0 - (-1f64).exp()) + 0.5)).abs() < 1e-15);
        assert!(Variogram::new(0.0, 1.0, 0.0).is_err());
        assert!(Variogram::new(1.0, -1.0, 0.0).is_err());
    }

    #[test]
    fn symmetric_pair_averages() {
        let s = [
            Sample { lat: 40.0, lon: 116.0, value: 10.0 },
            Sample { lat: 40.0, lon: 117.0, value: 20.0 },
        ];
        let e = krige_estimate(40.5, 116.5, &s, &vario()).unwrap();
        assert!((e.value - 15.0).abs() < 1e-9);
        assert!((e.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn exact_at_observed_site() {
        let s = [
            Sample { lat: 40.0, lon: 116.0, value: 10.0 },
            Sample { lat: 40.3, lon: 116.9, value: 20.0 },
            Sample { lat: 39.6, lon: 116.4, value: 7.5 },
        ];
        let e = krige_estimate(40.3, 116.9, &s, &vario()).unwrap();
        assert!((e.value - 20.0).abs() < 1e-8);
        assert!(e.variance.abs() < 1e-8);
    }

    #[test]
    fn duplicate_locations_are_degenerate() {
        let s = [
            Sample { lat: 40.0, lon: 116.0, value: 10.0 },
            Sample { lat: 40.0, lon: 116.0, value: 11.0 },
        ];
        assert!(matches!(
            krige_estimate(40.5, 116.5, &s, &vario()),
            Err(MvarError::DegenerateGeometry(_))
        ));
    }

    #[test]
    fn single_station_is_rejected() {
        let s = [Sample { lat: 40.0, lon: 116.0, value: 10.0 }];
        assert!(krige_estimate(40.5, 116.5, &s, &vario()).is_err());
    }

    #[test]
    fn idw_behaviour() {
        let s = [
            Sample { lat: 40.0, lon: 116.0, value: 10.0 },
            Sample { lat: 40.0, lon: 117.0, value: 20.0 },
        ];
        assert_eq!(idw_estimate(40.0, 116.0, &s).unwrap(), 10.0);
        assert!((idw_estimate(40.0, 116.5, &s).unwrap() - 15.0).abs() < 1e-9);
        assert!(idw_estimate(40.0, 116.5, &[]).is_err());
    }
}
