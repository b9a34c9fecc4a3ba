//! Horizon-bucketed RMSE, relative RMSE and the persistence reference.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::data::city::CitySeries;
use crate::data::time::Timestamp;
use crate::error::{MvarError, Result};
use crate::numerics::DenseMatrix;
use crate::scheduler::ForecastRow;

/// `(label, first hour, last hour)` of each reporting window.
pub const BUCKETS: [(&str, u32, u32); 4] = [("1-24h", 1, 24), ("25-48h", 25, 48), ("49-72h", 49, 72), ("97-120h", 97, 120)];

/// Local hours of day at which forecasts are initialized.
pub const INIT_LOCAL_HOURS: [u32; 2] = [8, 20];

/// Index into [`BUCKETS`] of lead hour `hour`, if any window contains it.
pub fn bucket_of_hour(hour: u32) -> Option<usize> {
    BUCKETS.iter().position(|&(_, lo, hi)| (lo..=hi).contains(&hour))
}

/// Forecasts for several init times at a fixed step spacing, physical units.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastSet {
    pub city_ids: Vec<String>,
    pub pollutants: Vec<String>,
    pub resolution_hours: u32,
    pub init_times: Vec<Timestamp>,
    /// `values[init][step − 1]` is an `N × D` snapshot.
    pub values: Vec<Vec<DenseMatrix>>,
}

impl ForecastSet {
    pub fn steps(&self) -> usize {
        self.values.first().map_or(0, |v| v.len())
    }

    pub fn to_rows(&self) -> Vec<ForecastRow> {
        let mut rows = Vec::new();
        for (init, steps) in self.init_times.iter().zip(&self.values) {
            for (s, snap) in steps.iter().enumerate() {
                for (i, city) in self.city_ids.iter().enumerate() {
                    for (d, p) in self.pollutants.iter().enumerate() {
                        rows.push(ForecastRow {
                            init_time: *init,
                            offset_hours: (s as i64 + 1) * self.resolution_hours as i64,
                            city_id: city.clone(),
                            pollutant: p.clone(),
                            value: snap.get(i, d),
                        });
                    }
                }
            }
        }
        rows
    }

    /// Rebuilds a set from forecast rows laid out for `city_ids` and
    /// `pollutants`. Offsets must be the multiples of the smallest offset.
    pub fn from_rows(rows: &[ForecastRow], city_ids: &[String], pollutants: &[String]) -> Result<Self> {
        let res = rows
            .iter()
            .map(|r| r.offset_hours)
            .min()
            .ok_or_else(|| MvarError::EmptyDataset("no forecast rows".into()))?;
        if res <= 0 {
            return Err(MvarError::invalid(format!("forecast offset {res} is not positive")));
        }
        let max = rows.iter().map(|r| r.offset_hours).max().expect("non-empty");
        if rows.iter().any(|r| r.offset_hours % res != 0) {
            return Err(MvarError::invalid(format!("forecast offsets are not multiples of {res} hours")));
        }
        let steps = (max / res) as usize;
        let ci: BTreeMap<&str, usize> = city_ids.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();
        let pi: BTreeMap<&str, usize> = pollutants.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();
        let mut by_init: BTreeMap<Timestamp, (Vec<DenseMatrix>, usize)> = BTreeMap::new();
        for r in rows {
            let (Some(&i), Some(&d)) = (ci.get(r.city_id.as_str()), pi.get(r.pollutant.as_str())) else {
                return Err(MvarError::invalid(format!(
                    "forecast row for unknown city {} or pollutant {}",
                    r.city_id, r.pollutant
                )));
            };
            let e = by_init
                .entry(r.init_time)
                .or_insert_with(|| (vec![DenseMatrix::filled(city_ids.len(), pollutants.len(), f64::NAN); steps], 0));
            let s = (r.offset_hours / res) as usize - 1;
            if e.0[s].get(i, d).is_nan() {
                e.1 += 1;
            }
            e.0[s].set(i, d, r.value);
        }
        let need = steps * city_ids.len() * pollutants.len();
        if let Some((t, _)) = by_init.iter().find(|(_, v)| v.1 != need) {
            return Err(MvarError::invalid(format!("forecast for init {t} is incomplete")));
        }
        Ok(Self {
            city_ids: city_ids.to_vec(),
            pollutants: pollutants.to_vec(),
            resolution_hours: res as u32,
            init_times: by_init.keys().copied().collect(),
            values: by_init.into_values().map(|v| v.0).collect(),
        })
    }
}

/// How squared errors are reduced inside a bucket.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    /// One square root over all (init, city, step) squared errors in the bucket.
    #[default]
    Pooled,
    /// Mean of the per-step RMSEs of the steps in the bucket.
    MeanOfSteps,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub pollutants: Vec<String>,
    pub resolution_hours: u32,
    pub init_times: Vec<Timestamp>,
    /// `[pollutant][bucket]`; `None` when no step of the bucket had truth.
    pub bucket_rmse: Vec<Vec<Option<f64>>>,
    /// Squared-error terms pooled into each bucket.
    pub bucket_counts: Vec<Vec<usize>>,
    /// `[pollutant][step − 1]`.
    pub step_rmse: Vec<Vec<Option<f64>>>,
    pub step_counts: Vec<Vec<usize>>,
}

/// RMSE of `preds` against `truth` per pollutant, per bucket and per step.
/// An (init, step) pair is skipped for a pollutant when any city lacks truth
/// for it at the target time.
pub fn rmse_buckets(preds: &ForecastSet, truth: &CitySeries, pooling: Pooling) -> Result<EvalReport> {
    let (n, d) = (truth.n_cities(), truth.n_pollutants());
    let truth_ids: Vec<&str> = truth.cities.iter().map(|c| c.id.as_str()).collect();
    if preds.city_ids.iter().map(String::as_str).ne(truth_ids.iter().copied()) || preds.pollutants != truth.pollutants {
        return Err(MvarError::shape("forecast cities or pollutants do not match the truth series"));
    }
    let steps = preds.steps();
    let mut step_sq = vec![vec![0.0; steps]; d];
    let mut step_n = vec![vec![0usize; steps]; d];
    for (init, snaps) in preds.init_times.iter().zip(&preds.values) {
        if snaps.len() != steps {
            return Err(MvarError::shape("forecasts have differing step counts"));
        }
        for (s, snap) in snaps.iter().enumerate() {
            if snap.shape() != (n, d) {
                return Err(MvarError::shape(format!("forecast snapshot is {:?}, truth is {n}x{d}", snap.shape())));
            }
            let target = init.plus_hours((s as i64 + 1) * preds.resolution_hours as i64);
            let Some(t) = truth.index_of(target) else {
                continue;
            };
            for p in 0..d {
                let mut sq = 0.0;
                let mut ok = true;
                for i in 0..n {
                    match truth.get(t, i, p) {
                        Some(v) => sq += (snap.get(i, p) - v).powi(2),
                        None => {
                            ok = false;
                            break;
                        }
                    }
                }
                if ok {
                    step_sq[p][s] += sq;
                    step_n[p][s] += n;
                }
            }
        }
    }
    let rmse = |sq: f64, cnt: usize| (cnt > 0).then(|| (sq / cnt as f64).sqrt());
    let step_rmse: Vec<Vec<Option<f64>>> = (0..d)
        .map(|p| (0..steps).map(|s| rmse(step_sq[p][s], step_n[p][s])).collect())
        .collect();
    let mut bucket_rmse = vec![vec![None; BUCKETS.len()]; d];
    let mut bucket_counts = vec![vec![0usize; BUCKETS.len()]; d];
    for p in 0..d {
        for (b, _) in BUCKETS.iter().enumerate() {
            let in_bucket: Vec<usize> = (0..steps)
                .filter(|&s| bucket_of_hour((s as u32 + 1) * preds.resolution_hours) == Some(b))
                .collect();
            let cnt: usize = in_bucket.iter().map(|&s| step_n[p][s]).sum();
            bucket_counts[p][b] = cnt;
            bucket_rmse[p][b] = match pooling {
                Pooling::Pooled => rmse(in_bucket.iter().map(|&s| step_sq[p][s]).sum(), cnt),
                Pooling::MeanOfSteps => {
                    let vals: Vec<f64> = in_bucket.iter().filter_map(|&s| step_rmse[p][s]).collect();
                    (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
                }
            };
        }
    }
    Ok(EvalReport {
        pollutants: truth.pollutants.clone(),
        resolution_hours: preds.resolution_hours,
        init_times: preds.init_times.clone(),
        bucket_rmse,
        bucket_counts,
        step_rmse,
        step_counts: step_n,
    })
}

/// Elementwise `report / baseline`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelativeReport {
    pub pollutants: Vec<String>,
    pub bucket_ratio: Vec<Vec<Option<f64>>>,
    pub step_ratio: Vec<Vec<Option<f64>>>,
}

fn ratio(a: &[Vec<Option<f64>>], b: &[Vec<Option<f64>>]) -> Result<Vec<Vec<Option<f64>>>> {
    if a.len() != b.len() || a.iter().zip(b).any(|(x, y)| x.len() != y.len()) {
        return Err(MvarError::shape("reports have different shapes"));
    }
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            x.iter()
                .zip(y)
                .map(|(u, v)| match (u, v) {
                    (Some(u), Some(v)) if *v == 0.0 => Err(MvarError::invalid(format!("baseline RMSE is zero (report {u})"))),
                    (Some(u), Some(v)) => Ok(Some(u / v)),
                    _ => Ok(None),
                })
                .collect()
        })
        .collect()
}

pub fn relative_rmse(report: &EvalReport, baseline: &EvalReport) -> Result<RelativeReport> {
    if report.pollutants != baseline.pollutants {
        return Err(MvarError::shape("reports cover different pollutants"));
    }
    Ok(RelativeReport {
        pollutants: report.pollutants.clone(),
        bucket_ratio: ratio(&report.bucket_rmse, &baseline.bucket_rmse)?,
        step_ratio: ratio(&report.step_rmse, &baseline.step_rmse)?,
    })
}

/// Forecasts `X_t` for every one of `steps` future steps.
pub fn persistence_baseline(
    series: &CitySeries,
    init_times: &[Timestamp],
    steps: usize,
    resolution_hours: u32,
) -> Result<ForecastSet> {
    let mut values = Vec::with_capacity(init_times.len());
    for &t in init_times {
        let idx = series
            .index_of(t)
            .filter(|&i| series.is_complete(i))
            .ok_or_else(|| MvarError::invalid(format!("init time {t} has no complete observation")))?;
        values.push(vec![series.snapshot(idx); steps]);
    }
    Ok(ForecastSet {
        city_ids: series.cities.iter().map(|c| c.id.clone()).collect(),
        pollutants: series.pollutants.clone(),
        resolution_hours,
        init_times: init_times.to_vec(),
        values,
    })
}

/// Which init times qualify for evaluation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InitSelection {
    /// Hours added to UTC to get local time (+8 for China).
    pub local_offset_hours: i64,
    /// Offsets relative to the init time (`≤ 0`) whose snapshots must be complete.
    pub required_inputs: Vec<i64>,
    /// The last target (`init + horizon_hours`) must lie inside the series.
    pub horizon_hours: u32,
}

impl InitSelection {
    /// Inputs `t − lead` and `t`, targets up to `horizon_hours`, Beijing time.
    pub fn new(lead_hours: u32, horizon_hours: u32) -> Self {
        Self {
            local_offset_hours: 8,
            required_inputs: vec![-(lead_hours as i64), 0],
            horizon_hours,
        }
    }
}

/// Every local 08:00 and 20:00 whose inputs are complete and whose horizon
/// fits in the series.
pub fn select_init_times(series: &CitySeries, sel: &InitSelection) -> Vec<Timestamp> {
    let mut out = Vec::new();
    for t in 0..series.n_times() {
        let ts = series.time(t);
        if !INIT_LOCAL_HOURS.contains(&ts.local_hour(sel.local_offset_hours)) {
            continue;
        }
        if t + sel.horizon_hours as usize >= series.n_times() {
            continue;
        }
        let inputs_ok = sel.required_inputs.iter().all(|&o| {
            let k = t as i64 + o;
            k >= 0 && series.is_complete(k as usize)
        });
        if inputs_ok {
            out.push(ts);
        }
    }
    out
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

/// Writes `pollutant,bucket,rmse,n`.
pub fn write_bucket_csv<W: Write>(w: W, report: &EvalReport) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["pollutant", "bucket", "rmse", "n"])?;
    for (p, name) in report.pollutants.iter().enumerate() {
        for (b, (label, _, _)) in BUCKETS.iter().enumerate() {
            out.write_record([
                name.clone(),
                label.to_string(),
                fmt_opt(report.bucket_rmse[p][b]),
                report.bucket_counts[p][b].to_string(),
            ])?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Writes `pollutant,step,lead_hours,rmse,n`.
pub fn write_step_csv<W: Write>(w: W, report: &EvalReport) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["pollutant", "step", "lead_hours", "rmse", "n"])?;
    for (p, name) in report.pollutants.iter().enumerate() {
        for (s, r) in report.step_rmse[p].iter().enumerate() {
            out.write_record([
                name.clone(),
                (s + 1).to_string(),
                ((s as u32 + 1) * report.resolution_hours).to_string(),
                fmt_opt(*r),
                report.step_counts[p][s].to_string(),
            ])?;
        }
    }
    out.flush()?;
    Ok(())
}
