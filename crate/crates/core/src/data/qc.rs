//! Three-step station quality control: drop sparse stations, fill or drop
//! each (timestep, pollutant) snapshot with ordinary Kriging, then take the
//! per-city maximum.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::city::{CityInfo, CitySeries};
use crate::data::kriging::{idw_estimate, krige_estimate, Sample, Variogram};
use crate::data::station::{StationObservation, POLLUTANTS};
use crate::data::time::Timestamp;
use crate::data::variogram::{fit_variogram, VariogramFit};
use crate::error::{MvarError, Result};

/// Stations missing more than this fraction of any pollutant are removed.
pub const STATION_MISSING_LIMIT: f64 = 0.5;
/// Snapshots missing more than this fraction of stations are dropped.
pub const TIMESTEP_MISSING_LIMIT: f64 = 0.2;
/// Complete snapshots sampled per pollutant for variogram fitting.
pub const VARIOGRAM_SNAPSHOTS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationInfo {
    pub station_id: String,
    pub city_id: String,
    pub lat: f64,
    pub lon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationRemoval {
    pub station_id: String,
    pub city_id: String,
    /// Missing fraction per pollutant over the declared range.
    pub missing_fraction: Vec<f64>,
}

/// Station observations laid out as a dense `T × S × D` panel.
#[derive(Debug, Clone)]
pub struct StationPanel {
    pub stations: Vec<StationInfo>,
    pub start: Timestamp,
    pub n_times: usize,
    pub n_pollutants: usize,
    values: Vec<Option<f64>>,
}

impl StationPanel {
    /// Builds the panel over `[start, end]`; records outside the range are ignored.
    pub fn from_records(records: &[StationObservation], start: Timestamp, end: Timestamp) -> Result<Self> {
        if records.is_empty() {
            return Err(MvarError::EmptyDataset("no station records".into()));
        }
        if end < start {
            return Err(MvarError::invalid(format!("time range {start}..{end} is reversed")));
        }
        let d = records[0].values.len();
        let mut infos: BTreeMap<&str, StationInfo> = BTreeMap::new();
        for r in records {
            if r.values.len() != d {
                return Err(MvarError::shape("station records disagree on pollutant count"));
            }
            infos.entry(r.station_id.as_str()).or_insert_with(|| StationInfo {
                station_id: r.station_id.clone(),
                city_id: r.city_id.clone(),
                lat: r.lat,
                lon: r.lon,
            });
        }
        let index: BTreeMap<&str, usize> = infos.keys().enumerate().map(|(i, k)| (*k, i)).collect();
        let stations: Vec<StationInfo> = infos.into_values().collect();
        let n_times = (end.hours_since(start) + 1) as usize;
        let s = stations.len();
        let mut values = vec![None; n_times * s * d];
        for r in records {
            let off = r.time.hours_since(start);
            if off < 0 || off as usize >= n_times {
                continue;
            }
            let si = index[r.station_id.as_str()];
            let base = (off as usize * s + si) * d;
            values[base..base + d].copy_from_slice(&r.values);
        }
        Ok(Self {
            stations,
            start,
            n_times,
            n_pollutants: d,
            values,
        })
    }

    pub fn get(&self, t: usize, s: usize, d: usize) -> Option<f64> {
        self.values[(t * self.stations.len() + s) * self.n_pollutants + d]
    }

    pub fn missing_fraction(&self, s: usize, d: usize) -> f64 {
        let missing = (0..self.n_times).filter(|&t| self.get(t, s, d).is_none()).count();
        missing as f64 / self.n_times as f64
    }

    /// Values of all stations at one time for one pollutant.
    pub fn snapshot(&self, t: usize, d: usize) -> Vec<Option<f64>> {
        (0..self.stations.len()).map(|s| self.get(t, s, d)).collect()
    }

    fn retain(&self, keep: &[bool]) -> Self {
        let kept: Vec<usize> = (0..self.stations.len()).filter(|&s| keep[s]).collect();
        let mut values = Vec::with_capacity(self.n_times * kept.len() * self.n_pollutants);
        for t in 0..self.n_times {
            for &s in &kept {
                for d in 0..self.n_pollutants {
                    values.push(self.get(t, s, d));
                }
            }
        }
        Self {
            stations: kept.iter().map(|&s| self.stations[s].clone()).collect(),
            start: self.start,
            n_times: self.n_times,
            n_pollutants: self.n_pollutants,
            values,
        }
    }
}

#[derive(Debug, Clone)]
pub struct StationFilterResult {
    pub panel: StationPanel,
    pub removed: Vec<StationRemoval>,
}

/// Step one: a station is removed iff, for some pollutant, its missing
/// fraction over the full range is strictly greater than one half.
pub fn qc_station_filter(panel: &StationPanel) -> Result<StationFilterResult> {
    if panel.stations.is_empty() || panel.n_times == 0 {
        return Err(MvarError::EmptyDataset("no stations to filter".into()));
    }
    let mut keep = vec![true; panel.stations.len()];
    let mut removed = Vec::new();
    for (s, info) in panel.stations.iter().enumerate() {
        let fractions: Vec<f64> = (0..panel.n_pollutants).map(|d| panel.missing_fraction(s, d)).collect();
        if fractions.iter().any(|&f| f > STATION_MISSING_LIMIT) {
            keep[s] = false;
            removed.push(StationRemoval {
                station_id: info.station_id.clone(),
                city_id: info.city_id.clone(),
                missing_fraction: fractions,
            });
        }
    }
    Ok(StationFilterResult {
        panel: panel.retain(&keep),
        removed,
    })
}

/// Result of step two for one (timestep, pollutant) snapshot.
#[derive(Debug, Clone, PartialEq)]
pub enum FillOutcome {
    Filled {
        values: Vec<f64>,
        /// Indices that were interpolated.
        filled: Vec<usize>,
        /// Inverse-distance weighting replaced Kriging (too few stations or
        /// a singular system).
        idw_fallback: bool,
    },
    Dropped {
        missing_fraction: f64,
    },
}

/// Step two: fill a snapshot with ordinary Kriging, or drop it when more than
/// 20% of stations are missing.
pub fn qc_timestep_fill(snapshot: &[Option<f64>], stations: &[StationInfo], vario: &Variogram) -> Result<FillOutcome> {
    if snapshot.len() != stations.len() {
        return Err(MvarError::shape(format!(
            "snapshot has {} entries for {} stations",
            snapshot.len(),
            stations.len()
        )));
    }
    if snapshot.is_empty() {
        return Err(MvarError::EmptyDataset("empty snapshot".into()));
    }
    let missing: Vec<usize> = (0..snapshot.len()).filter(|&i| snapshot[i].is_none()).collect();
    let frac = missing.len() as f64 / snapshot.len() as f64;
    if frac > TIMESTEP_MISSING_LIMIT {
        return Ok(FillOutcome::Dropped { missing_fraction: frac });
    }
    let present: Vec<Sample> = snapshot
        .iter()
        .zip(stations)
        .filter_map(|(v, s)| v.map(|value| Sample { lat: s.lat, lon: s.lon, value }))
        .collect();
    let mut values: Vec<f64> = snapshot.iter().map(|v| v.unwrap_or(0.0)).collect();
    let mut idw_fallback = false;
    for &i in &missing {
        let st = &stations[i];
        let est = if present.len() >= 3 {
            match krige_estimate(st.lat, st.lon, &present, vario) {
                Ok(e) => e.value,
                Err(MvarError::DegenerateGeometry(_)) => {
                    idw_fallback = true;
                    idw_estimate(st.lat, st.lon, &present)?
                }
                Err(e) => return Err(e),
            }
        } else {
            idw_fallback = true;
            idw_estimate(st.lat, st.lon, &present)?
        };
        // concentrations are physically nonnegative
        values[i] = est.max(0.0);
    }
    Ok(FillOutcome::Filled {
        values,
        filled: missing,
        idw_fallback,
    })
}

/// Step three: per-city maximum over that city's stations. Returns one
/// entry per city in `cities` order; `None` for cities without stations.
pub fn city_aggregate(values: &[f64], stations: &[StationInfo], cities: &[String]) -> Vec<Option<f64>> {
    let index: BTreeMap<&str, usize> = cities.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();
    let mut out: Vec<Option<f64>> = vec![None; cities.len()];
    for (v, s) in values.iter().zip(stations) {
        if let Some(&ci) = index.get(s.city_id.as_str()) {
            out[ci] = Some(out[ci].map_or(*v, |m: f64| m.max(*v)));
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum VariogramChoice {
    /// Fit per pollutant on complete snapshots.
    Auto,
    Fixed(Variogram),
}

#[derive(Debug, Clone)]
pub struct QcConfig {
    pub variogram: VariogramChoice,
    /// Declared range; defaults to the span of the records.
    pub range: Option<(Timestamp, Timestamp)>,
}

impl Default for QcConfig {
    fn default() -> Self {
        Self {
            variogram: VariogramChoice::Auto,
            range: None,
        }
    }
}

/// Counts written to the city metadata sidecar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QcAuditSummary {
    pub stations_total: usize,
    pub stations_removed: usize,
    pub timesteps_total: usize,
    pub dropped_timesteps: Vec<usize>,
    pub filled_values: Vec<usize>,
    pub idw_fallbacks: Vec<usize>,
    pub cities_excluded: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QcAudit {
    pub range_start: Timestamp,
    pub range_end: Timestamp,
    pub pollutants: Vec<String>,
    pub stations_total: usize,
    pub removed: Vec<StationRemoval>,
    /// Per pollutant: number of timesteps dropped by the 20% rule.
    pub dropped_timesteps: Vec<usize>,
    /// Per pollutant: station values interpolated.
    pub filled_values: Vec<usize>,
    /// Per pollutant: snapshots that fell back to inverse-distance weighting.
    pub idw_fallbacks: Vec<usize>,
    pub cities_excluded: Vec<String>,
    pub variograms: Vec<VariogramFit>,
}

impl QcAudit {
    pub fn summary(&self) -> QcAuditSummary {
        QcAuditSummary {
            stations_total: self.stations_total,
            stations_removed: self.removed.len(),
            timesteps_total: (self.range_end.hours_since(self.range_start) + 1) as usize,
            dropped_timesteps: self.dropped_timesteps.clone(),
            filled_values: self.filled_values.clone(),
            idw_fallbacks: self.idw_fallbacks.clone(),
            cities_excluded: self.cities_excluded.len(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct QcOutput {
    pub series: CitySeries,
    pub audit: QcAudit,
}

fn fit_for_pollutant(panel: &StationPanel, d: usize) -> VariogramFit {
    let complete: Vec<usize> = (0..panel.n_times)
        .filter(|&t| (0..panel.stations.len()).all(|s| panel.get(t, s, d).is_some()))
        .collect();
    let step = complete.len().div_ceil(VARIOGRAM_SNAPSHOTS).max(1);
    let snapshots: Vec<Vec<Sample>> = complete
        .iter()
        .step_by(step)
        .map(|&t| {
            panel
                .stations
                .iter()
                .enumerate()
                .map(|(s, st)| Sample {
                    lat: st.lat,
                    lon: st.lon,
                    value: panel.get(t, s, d).expect("complete snapshot"),
                })
                .collect()
        })
        .collect();
    fit_variogram(&snapshots)
}

/// Runs all three steps over the records.
pub fn run_qc(records: &[StationObservation], config: &QcConfig) -> Result<QcOutput> {
    if records.is_empty() {
        return Err(MvarError::EmptyDataset("no station records".into()));
    }
    let (start, end) = match config.range {
        Some(r) => r,
        None => (
            records.iter().map(|r| r.time).min().expect("non-empty"),
            records.iter().map(|r| r.time).max().expect("non-empty"),
        ),
    };
    let panel = StationPanel::from_records(records, start, end)?;
    let stations_total = panel.stations.len();
    let filtered = qc_station_filter(&panel)?;
    let panel = filtered.panel;
    let d_count = panel.n_pollutants;

    let mut all_cities: Vec<String> = records.iter().map(|r| r.city_id.clone()).collect();
    all_cities.sort();
    all_cities.dedup();
    let mut coords: BTreeMap<&str, (f64, f64, usize)> = BTreeMap::new();
    for s in &panel.stations {
        let e = coords.entry(s.city_id.as_str()).or_insert((0.0, 0.0, 0));
        e.0 += s.lat;
        e.1 += s.lon;
        e.2 += 1;
    }
    let cities: Vec<CityInfo> = coords
        .iter()
        .map(|(id, (la, lo, n))| CityInfo {
            id: id.to_string(),
            lat: la / *n as f64,
            lon: lo / *n as f64,
        })
        .collect();
    let cities_excluded: Vec<String> = all_cities
        .into_iter()
        .filter(|c| !coords.contains_key(c.as_str()))
        .collect();
    if cities.is_empty() {
        return Err(MvarError::EmptyDataset("every station was removed by quality control".into()));
    }
    let city_ids: Vec<String> = cities.iter().map(|c| c.id.clone()).collect();

    let variograms: Vec<VariogramFit> = (0..d_count)
        .map(|d| match config.variogram {
            VariogramChoice::Auto => fit_for_pollutant(&panel, d),
            VariogramChoice::Fixed(v) => VariogramFit {
                variogram: v,
                used_defaults: false,
                degenerate: false,
                pair_count: 0,
                bins: Vec::new(),
            },
        })
        .collect();

    let pollutants: Vec<String> = if d_count == POLLUTANTS.len() {
        POLLUTANTS.iter().map(|s| s.to_string()).collect()
    } else {
        (0..d_count).map(|d| format!("p{d}")).collect()
    };
    let mut series = CitySeries::empty(cities, pollutants.clone(), start, panel.n_times);
    let mut dropped = vec![0; d_count];
    let mut filled_count = vec![0; d_count];
    let mut idw = vec![0; d_count];
    for t in 0..panel.n_times {
        for d in 0..d_count {
            match qc_timestep_fill(&panel.snapshot(t, d), &panel.stations, &variograms[d].variogram)? {
                FillOutcome::Dropped { .. } => dropped[d] += 1,
                FillOutcome::Filled {
                    values,
                    filled,
                    idw_fallback,
                } => {
                    filled_count[d] += filled.len();
                    idw[d] += usize::from(idw_fallback);
                    for (ci, v) in city_aggregate(&values, &panel.stations, &city_ids).into_iter().enumerate() {
                        series.set(t, ci, d, v);
                    }
                }
            }
        }
    }
    Ok(QcOutput {
        series,
        audit: QcAudit {
            range_start: start,
            range_end: end,
            pollutants,
            stations_total,
            removed: filtered.removed,
            dropped_timesteps: dropped,
            filled_values: filled_count,
            idw_fallbacks: idw,
            cities_excluded,
            variograms,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn station(id: &str, city: &str, lat: f64, lon: f64) -> StationInfo {
        StationInfo {
            station_id: id.into(),
            city_id: city.into(),
            lat,
            lon,
        }
    }

    fn obs(st: &StationInfo, t: i64, v: Option<f64>) -> StationObservation {
        StationObservation {
            station_id: st.station_id.clone(),
            city_id: st.city_id.clone(),
            lat: st.lat,
            lon: st.lon,
            time: Timestamp(t),
            values: vec![v],
        }
    }

    /// One-pollutant panel over 10 hours where station `k` misses the first `miss[k]` hours.
    fn panel_with_missing(miss: &[usize]) -> StationPanel {
        let mut recs = Vec::new();
        for (k, &m) in miss.iter().enumerate() {
            let st = station(&format!("s{k}"), "c", 40.0 + k as f64 * 0.1, 116.0);
            for t in 0..10 {
                recs.push(obs(&st, t, (t as usize >= m).then_some(1.0)));
            }
        }
        StationPanel::from_records(&recs, Timestamp(0), Timestamp(9)).unwrap()
    }

    #[test]
    fn station_rule_is_strict() {
        let p = panel_with_missing(&[6, 0, 5]);
        let r = qc_station_filter(&p).unwrap();
        assert_eq!(r.removed.len(), 1);
        assert_eq!(r.removed[0].station_id, "s0");
        assert!((r.removed[0].missing_fraction[0] - 0.6).abs() < 1e-12);
        let kept: Vec<_> = r.panel.stations.iter().map(|s| s.station_id.as_str()).collect();
        assert_eq!(kept, ["s1", "s2"]);
    }

    #[test]
    fn records_absent_from_the_range_count_as_missing() {
        let st = station("s0", "c", 40.0, 116.0);
        let recs: Vec<_> = (0..4).map(|t| obs(&st, t, Some(1.0))).collect();
        let p = StationPanel::from_records(&recs, Timestamp(0), Timestamp(9)).unwrap();
        assert!((p.missing_fraction(0, 0) - 0.6).abs() < 1e-12);
    }

    #[test]
    fn empty_records_are_an_error() {
        assert!(matches!(
            StationPanel::from_records(&[], Timestamp(0), Timestamp(1)),
            Err(MvarError::EmptyDataset(_))
        ));
        assert!(run_qc(&[], &QcConfig::default()).is_err());
    }

    fn ring(n: usize) -> Vec<StationInfo> {
        (0..n)
            .map(|k| {
                let a = k as f64 / n as f64 * std::f64::consts::TAU;
                station(&format!("s{k}"), "c", 40.0 + 0.3 * a.sin(), 116.0 + 0.3 * a.cos())
            })
            .collect()
    }

    #[test]
    fn timestep_rule() {
        let st = ring(8);
        let v = Variogram::new(1.0, 50.0, 0.0).unwrap();
        // 2 of 8 missing = 25% → dropped
        let mut snap: Vec<Option<f64>> = (0..8).map(|k| Some(k as f64)).collect();
        snap[0] = None;
        snap[3] = None;
        assert_eq!(
            qc_timestep_fill(&snap, &st, &v).unwrap(),
            FillOutcome::Dropped { missing_fraction: 0.25 }
        );
        // complete → unchanged
        let full: Vec<Option<f64>> = (0..8).map(|k| Some(k as f64)).collect();
        match qc_timestep_fill(&full, &st, &v).unwrap() {
            FillOutcome::Filled { values, filled, idw_fallback } => {
                assert_eq!(values, (0..8).map(|k| k as f64).collect::<Vec<_>>());
                assert!(filled.is_empty() && !idw_fallback);
            }
            other => panic!("{other:?}"),
        }
        // 1 of 8 missing = 12.5% → Kriged, result complete
        let mut one = full.clone();
        one[5] = None;
        match qc_timestep_fill(&one, &st, &v).unwrap() {
            FillOutcome::Filled { values, filled, .. } => {
                assert_eq!(filled, vec![5]);
                assert!(values.iter().all(|x| x.is_finite()));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn exactly_twenty_percent_is_filled() {
        let st = ring(5);
        let v = Variogram::new(1.0, 50.0, 0.0).unwrap();
        let snap = vec![Some(1.0), None, Some(3.0), Some(4.0), Some(5.0)];
        assert!(matches!(qc_timestep_fill(&snap, &st, &v).unwrap(), FillOutcome::Filled { .. }));
    }

    #[test]
    fn singular_kriging_falls_back_to_idw() {
        let mut st = ring(6);
        st[1].lat = st[0].lat;
        st[1].lon = st[0].lon;
        let v = Variogram::new(1.0, 50.0, 0.0).unwrap();
        let snap = vec![Some(1.0), Some(2.0), Some(3.0), Some(4.0), Some(5.0), None];
        match qc_timestep_fill(&snap, &st, &v).unwrap() {
            FillOutcome::Filled { idw_fallback, .. } => assert!(idw_fallback),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn city_max_includes_interpolated_values() {
        let st = vec![
            station("a1", "a", 40.0, 116.0),
            station("a2", "a", 40.1, 116.0),
            station("a3", "a", 40.2, 116.0),
            station("b1", "b", 39.0, 117.0),
        ];
        let cities = vec!["a".to_string(), "b".to_string(), "z".to_string()];
        assert_eq!(
            city_aggregate(&[12.0, 30.0, 7.0, 4.5], &st, &cities),
            vec![Some(30.0), Some(4.5), None]
        );
        // a1 was interpolated to 40 while observed max is 35
        assert_eq!(city_aggregate(&[40.0, 35.0, 7.0, 4.5], &st, &cities)[0], Some(40.0));
    }
}
