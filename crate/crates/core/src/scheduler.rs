//! Greedy composition of fixed-lead models into hourly forecasts.
//!
//! A model with lead `ℓ` maps the states at `c − ℓ` and `c` to the state at
//! `c + ℓ`. A horizon is decomposed greedily into the largest leads that fit;
//! offsets a step needs as input but which the plan never visits are produced
//! by the greedy plan of that offset, so every offset has a single value.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::data::city::CitySeries;
use crate::data::meteo::MeteoGrid;
use crate::data::norm::NormStats;
use crate::data::time::Timestamp;
use crate::error::{MvarError, Result};
use crate::eval::ForecastSet;
use crate::model::{Checkpoint, MeteoInput};
use crate::numerics::DenseMatrix;

pub const DEFAULT_LEADS: [u32; 4] = [24, 6, 3, 1];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForecastPlan {
    pub horizon: u32,
    pub steps: Vec<u32>,
    pub invocations: usize,
}

/// Repeatedly takes the largest lead not exceeding the remaining horizon.
pub fn greedy_plan(horizon: u32, leads: &[u32]) -> Result<ForecastPlan> {
    if horizon < 1 {
        return Err(MvarError::invalid("forecast horizon must be at least one hour"));
    }
    let mut sorted: Vec<u32> = leads.iter().copied().filter(|&l| l > 0).collect();
    sorted.sort_unstable_by(|a, b| b.cmp(a));
    sorted.dedup();
    let mut steps = Vec::new();
    let mut rest = horizon;
    while rest > 0 {
        let l = *sorted.iter().find(|&&l| l <= rest).ok_or_else(|| {
            MvarError::invalid(format!("horizon {horizon} is not reachable with leads {sorted:?}"))
        })?;
        steps.push(l);
        rest -= l;
    }
    Ok(ForecastPlan {
        horizon,
        invocations: steps.len(),
        steps,
    })
}

/// Entry `h` is the number of model calls on the greedy path to hour `h`;
/// entry 0 is 0.
pub fn invocation_profile(max_horizon: u32, leads: &[u32]) -> Result<Vec<usize>> {
    let mut out = vec![0];
    for h in 1..=max_horizon {
        out.push(greedy_plan(h, leads)?.invocations);
    }
    Ok(out)
}

/// Meteorological frames for a forecast started at `init`.
#[derive(Debug, Clone, Copy)]
pub struct MeteoFeed<'a> {
    pub grid: &'a MeteoGrid,
    pub init: Timestamp,
}

/// Memoized greedy evaluation of forecast states, in normalized units.
pub struct Composer<'a> {
    models: &'a BTreeMap<u32, Checkpoint>,
    leads: Vec<u32>,
    timeline: BTreeMap<i64, DenseMatrix>,
    depth: BTreeMap<i64, usize>,
    calls: usize,
    meteo: Option<MeteoFeed<'a>>,
}

impl<'a> Composer<'a> {
    /// `history` maps offsets `≤ 0` to observed states; offsets `−max_lead..=0`
    /// must be present for every lead that will be used.
    pub fn new(
        models: &'a BTreeMap<u32, Checkpoint>,
        history: BTreeMap<i64, DenseMatrix>,
        meteo: Option<MeteoFeed<'a>>,
    ) -> Result<Self> {
        if let Some(o) = history.keys().find(|&&o| o > 0) {
            return Err(MvarError::invalid(format!("history contains future offset {o}")));
        }
        let leads: Vec<u32> = models.keys().copied().collect();
        let depth = history.keys().map(|&o| (o, 0)).collect();
        Ok(Self {
            models,
            leads,
            timeline: history,
            depth,
            calls: 0,
            meteo,
        })
    }

    /// Model invocations so far, including ones that filled intermediate offsets.
    pub fn calls(&self) -> usize {
        self.calls
    }

    /// Chained invocations behind the state at `offset`.
    pub fn depth(&self, offset: i64) -> Option<usize> {
        self.depth.get(&offset).copied()
    }

    pub fn timeline(&self) -> &BTreeMap<i64, DenseMatrix> {
        &self.timeline
    }

    fn meteo_frame(&self, ck: &Checkpoint, offset: i64) -> Result<DenseMatrix> {
        let feed = self
            .meteo
            .ok_or_else(|| MvarError::MissingMeteo("meteorology model needs a meteo grid".into()))?;
        let stats = ck
            .meteo_stats
            .as_ref()
            .ok_or_else(|| MvarError::MissingMeteo("checkpoint has no meteo statistics".into()))?;
        let ts = feed.init.plus_hours(offset);
        let idx = feed
            .grid
            .time_index(ts)
            .ok_or_else(|| MvarError::MissingMeteo(format!("no meteo frame at {ts}")))?;
        feed.grid.frame(idx, stats)
    }

    /// Applies the lead-`lead` model at `cursor`, storing the state at `cursor + lead`.
    fn apply(&mut self, cursor: i64, lead: u32) -> Result<()> {
        let l = lead as i64;
        if self.timeline.contains_key(&(cursor + l)) {
            return Ok(());
        }
        let prev = self.state_at(cursor - l)?;
        let curr = self.state_at(cursor)?;
        let ck = self.models.get(&lead).ok_or(MvarError::MissingCheckpoint(lead))?;
        let next = if ck.model.hyper.use_meteo {
            let (a, b) = (self.meteo_frame(ck, cursor)?, self.meteo_frame(ck, cursor + l)?);
            let time = self.meteo.expect("checked by meteo_frame").init.plus_hours(cursor);
            let mi = MeteoInput {
                current: &a,
                next: &b,
                time,
            };
            ck.model.predict(&ck.params, &prev, &curr, Some(&mi))?
        } else {
            ck.model.predict(&ck.params, &prev, &curr, None)?
        };
        self.calls += 1;
        let d = self.depth[&cursor] + 1;
        self.timeline.insert(cursor + l, next);
        self.depth.insert(cursor + l, d);
        Ok(())
    }

    /// State at `offset`, computing it along its greedy plan when needed.
    pub fn state_at(&mut self, offset: i64) -> Result<DenseMatrix> {
        if let Some(s) = self.timeline.get(&offset) {
            return Ok(s.clone());
        }
        if offset <= 0 {
            return Err(MvarError::MissingTimeline(offset));
        }
        let plan = greedy_plan(offset as u32, &self.leads)?;
        let lead = *plan.steps.last().expect("non-empty plan");
        self.apply(offset - lead as i64, lead)?;
        Ok(self.timeline[&offset].clone())
    }

    /// Walks `plan` from offset 0 and returns the states it visits.
    pub fn run_plan(&mut self, plan: &ForecastPlan) -> Result<Vec<(i64, DenseMatrix)>> {
        for &l in &plan.steps {
            if !self.models.contains_key(&l) {
                return Err(MvarError::MissingCheckpoint(l));
            }
        }
        let mut cursor = 0i64;
        let mut out = Vec::with_capacity(plan.steps.len());
        for &l in &plan.steps {
            self.apply(cursor, l)?;
            cursor += l as i64;
            out.push((cursor, self.timeline[&cursor].clone()));
        }
        Ok(out)
    }
}

/// Offsets produced by a plan with their states and invocation counts.
#[derive(Debug, Clone, PartialEq)]
pub struct ComposedForecast {
    pub states: Vec<(i64, DenseMatrix)>,
    pub invocations: Vec<usize>,
    /// Total model calls including intermediate fills.
    pub model_calls: usize,
}

pub fn compose_forecast(
    plan: &ForecastPlan,
    models: &BTreeMap<u32, Checkpoint>,
    history: BTreeMap<i64, DenseMatrix>,
    meteo: Option<MeteoFeed>,
) -> Result<ComposedForecast> {
    let mut c = Composer::new(models, history, meteo)?;
    let states = c.run_plan(plan)?;
    let invocations = states.iter().map(|(o, _)| c.depth(*o).expect("produced")).collect();
    Ok(ComposedForecast {
        states,
        invocations,
        model_calls: c.calls(),
    })
}

/// Normalization shared by every checkpoint in `models`.
pub fn shared_norm(models: &BTreeMap<u32, Checkpoint>) -> Result<&NormStats> {
    let mut it = models.values();
    let first = it
        .next()
        .ok_or_else(|| MvarError::Config("no checkpoints given".into()))?
        .norm
        .as_ref()
        .ok_or_else(|| MvarError::Config("checkpoint has no normalization statistics".into()))?;
    if it.any(|c| c.norm.as_ref() != Some(first)) {
        return Err(MvarError::Config("checkpoints disagree on normalization statistics".into()));
    }
    Ok(first)
}

/// Forecasts `steps` states at `resolution_hours` spacing from each init time
/// of `series`, composing the available leads. Inputs and outputs are in
/// physical units.
pub fn forecast_inits(
    models: &BTreeMap<u32, Checkpoint>,
    series: &CitySeries,
    init_times: &[Timestamp],
    steps: usize,
    resolution_hours: u32,
    meteo: Option<&MeteoGrid>,
) -> Result<ForecastSet> {
    let norm = shared_norm(models)?;
    let ids: Vec<&str> = series.cities.iter().map(|c| c.id.as_str()).collect();
    for ck in models.values() {
        if ck.model.cities.iter().map(|c| c.id.as_str()).ne(ids.iter().copied()) || ck.model.hyper.n_pollutants != series.n_pollutants() {
            return Err(MvarError::Config(format!("lead {}h checkpoint was trained on different cities or pollutants", ck.lead_hours)));
        }
    }
    let max_lead = *models.keys().last().expect("checked by shared_norm") as i64;
    let mut values = Vec::with_capacity(init_times.len());
    for &init in init_times {
        let t0 = series
            .index_of(init)
            .ok_or_else(|| MvarError::invalid(format!("init time {init} outside the series")))?;
        let mut history = BTreeMap::new();
        for o in -max_lead..=0 {
            let k = t0 as i64 + o;
            if k >= 0 && series.is_complete(k as usize) {
                history.insert(o, norm.normalize_matrix(&series.snapshot(k as usize))?);
            }
        }
        let feed = meteo.map(|grid| MeteoFeed { grid, init });
        let mut c = Composer::new(models, history, feed)?;
        let mut out = Vec::with_capacity(steps);
        for k in 1..=steps {
            out.push(norm.denormalize_matrix(&c.state_at(k as i64 * resolution_hours as i64)?)?);
        }
        values.push(out);
    }
    Ok(ForecastSet {
        city_ids: series.cities.iter().map(|c| c.id.clone()).collect(),
        pollutants: series.pollutants.clone(),
        resolution_hours,
        init_times: init_times.to_vec(),
        values,
    })
}

/// One physical-unit forecast value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastRow {
    pub init_time: Timestamp,
    pub offset_hours: i64,
    pub city_id: String,
    pub pollutant: String,
    pub value: f64,
}

pub fn write_forecast_csv<W: Write>(w: W, rows: &[ForecastRow]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_forecast_csv<R: std::io::Read>(r: R) -> Result<Vec<ForecastRow>> {
    let mut rdr = csv::Reader::from_reader(r);
    let mut out = Vec::new();
    for (k, row) in rdr.deserialize().enumerate() {
        out.push(row.map_err(|e: csv::Error| MvarError::Parse {
            line: k + 2,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::city::CityInfo;
    use crate::model::{HyperParams, Mvar};

    #[test]
    fn documented_decompositions() {
        assert_eq!(greedy_plan(80, &DEFAULT_LEADS).unwrap().steps, vec![24, 24, 24, 6, 1, 1]);
        let p = greedy_plan(23, &DEFAULT_LEADS).unwrap();
        assert_eq!((p.steps.clone(), p.invocations), (vec![6, 6, 6, 3, 1, 1], 6));
        assert_eq!(greedy_plan(24, &DEFAULT_LEADS).unwrap().invocations, 1);
        assert_eq!(greedy_plan(1, &DEFAULT_LEADS).unwrap().steps, vec![1]);
        assert!(greedy_plan(0, &DEFAULT_LEADS).is_err());
        assert!(greedy_plan(5, &[24, 6]).is_err());
    }

    #[test]
    fn profile_has_a_sawtooth() {
        let p = invocation_profile(48, &DEFAULT_LEADS).unwrap();
        assert_eq!((p[1], p[23], p[24]), (1, 6, 1));
        assert!(p[24] < p[23]);
        assert_eq!(p[48], 2);
    }

    fn identity_models(leads: &[u32]) -> (BTreeMap<u32, Checkpoint>, BTreeMap<i64, DenseMatrix>) {
        let mut h = HyperParams::new(2, 2).with_widths(8, 2);
        h.heads = 2;
        h.blocks = 1;
        let cities = vec![
            CityInfo { id: "a".into(), lat: 30.0, lon: 110.0 },
            CityInfo { id: "b".into(), lat: 31.0, lon: 111.0 },
        ];
        let model = Mvar::new(h, cities, None).unwrap();
        let mut models = BTreeMap::new();
        for &l in leads {
            let mut params = model.init_params(l as u64);
            *params.by_name_mut("head.w2").unwrap() = DenseMatrix::zeros(8, 2);
            models.insert(l, Checkpoint { model: model.clone(), params, lead_hours: l, norm: None, meteo_stats: None });
        }
        let history = (-24..=0)
            .map(|o| (o, DenseMatrix::from_fn(2, 2, |r, c| o as f64 + r as f64 * 0.5 - c as f64)))
            .collect();
        (models, history)
    }

    #[test]
    fn identity_models_repeat_the_last_observation() {
        let (models, history) = identity_models(&DEFAULT_LEADS);
        let x0 = history[&0].clone();
        let plan = greedy_plan(80, &DEFAULT_LEADS).unwrap();
        let out = compose_forecast(&plan, &models, history, None).unwrap();
        assert_eq!(out.states.iter().map(|s| s.0).collect::<Vec<_>>(), vec![24, 48, 72, 78, 79, 80]);
        assert_eq!(out.invocations, vec![1, 2, 3, 4, 5, 6]);
        assert!(out.model_calls > 6);
        for (_, s) in out.states {
            assert_eq!(s, x0);
        }
    }

    #[test]
    fn single_lead_horizon_adds_one_state() {
        let (models, history) = identity_models(&DEFAULT_LEADS);
        let mut c = Composer::new(&models, history, None).unwrap();
        let before = c.timeline().len();
        c.run_plan(&greedy_plan(24, &DEFAULT_LEADS).unwrap()).unwrap();
        assert_eq!(c.timeline().len(), before + 1);
        assert_eq!(c.calls(), 1);
    }

    #[test]
    fn missing_lead_checkpoint_is_reported() {
        let (models, history) = identity_models(&[24, 1]);
        let err = compose_forecast(&greedy_plan(7, &DEFAULT_LEADS).unwrap(), &models, history, None);
        assert!(matches!(err, Err(MvarError::MissingCheckpoint(6))));
    }

    #[test]
    fn short_history_is_reported() {
        let (models, mut history) = identity_models(&DEFAULT_LEADS);
        history.remove(&-24);
        let err = compose_forecast(&greedy_plan(24, &DEFAULT_LEADS).unwrap(), &models, history, None);
        assert!(matches!(err, Err(MvarError::MissingTimeline(-24))));
    }
}
