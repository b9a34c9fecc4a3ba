//! Rollout samples and the chained forward pass used for training.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::data::city::CitySeries;
use crate::data::meteo::{MeteoGrid, MeteoStats};
use crate::data::time::Timestamp;
use crate::error::{MvarError, Result};
use crate::model::{MeteoInput, Mvar};
use crate::numerics::{DenseMatrix, ParamStore, Tape, Var};

/// One training example: two observed snapshots `lead` hours apart and the
/// `τ` following snapshots at the same spacing, all normalized.
#[derive(Debug, Clone)]
pub struct RolloutSample {
    pub init: Timestamp,
    pub lead_hours: u32,
    /// `X_{t−lead}`.
    pub x_prev: DenseMatrix,
    /// `X_t`.
    pub x_curr: DenseMatrix,
    /// `X_{t+γ·lead}` for `γ = 1..=τ`.
    pub targets: Vec<DenseMatrix>,
    /// `M_{t+k·lead}` for `k = 0..=τ`, shared between overlapping samples.
    pub meteo: Option<Vec<Arc<DenseMatrix>>>,
}

impl RolloutSample {
    pub fn tau(&self) -> usize {
        self.targets.len()
    }

    /// Time of the input snapshot for rollout step `γ` (1-based).
    pub fn step_time(&self, gamma: usize) -> Timestamp {
        self.init.plus_hours((gamma as i64 - 1) * self.lead_hours as i64)
    }
}

/// Which rollout samples to cut from a series.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SampleSpec {
    pub tau: usize,
    pub lead_hours: u32,
    /// Hours between consecutive init times.
    pub stride_hours: u32,
    /// Init indices are restricted to `[from, to)` of the series; every
    /// snapshot a sample reads must also lie in this window.
    pub from: usize,
    pub to: usize,
}

/// Cuts every sample whose `τ + 2` snapshots are complete and, when a grid
/// is given, whose `τ + 1` meteo frames exist.
pub fn build_samples(
    series: &CitySeries,
    meteo: Option<(&MeteoGrid, &MeteoStats)>,
    spec: &SampleSpec,
) -> Result<Vec<RolloutSample>> {
    if spec.tau == 0 || spec.lead_hours == 0 || spec.stride_hours == 0 {
        return Err(MvarError::invalid("rollout length, lead and stride must be positive"));
    }
    let to = spec.to.min(series.n_times());
    let lead = spec.lead_hours as usize;
    let mut frames: BTreeMap<usize, Arc<DenseMatrix>> = BTreeMap::new();
    let mut out = Vec::new();
    let first = spec.from + lead;
    let span = spec.tau * lead;
    let mut t = first;
    while t + span < to {
        let complete = (0..spec.tau + 2).all(|k| series.is_complete(t + k * lead - lead));
        let meteo_frames = match meteo {
            None => Some(None),
            Some((grid, stats)) => {
                let mut fs = Vec::with_capacity(spec.tau + 1);
                for k in 0..=spec.tau {
                    let Some(mi) = grid.time_index(series.time(t + k * lead)) else {
                        break;
                    };
                    let f = match frames.get(&mi) {
                        Some(f) => f.clone(),
                        None => {
                            let f = Arc::new(grid.frame(mi, stats)?);
                            frames.insert(mi, f.clone());
                            f
                        }
                    };
                    fs.push(f);
                }
                (fs.len() == spec.tau + 1).then_some(Some(fs))
            }
        };
        if let (true, Some(m)) = (complete, meteo_frames) {
            out.push(RolloutSample {
                init: series.time(t),
                lead_hours: spec.lead_hours,
                x_prev: series.snapshot(t - lead),
                x_curr: series.snapshot(t),
                targets: (1..=spec.tau).map(|g| series.snapshot(t + g * lead)).collect(),
                meteo: m,
            });
        }
        t += spec.stride_hours as usize;
    }
    Ok(out)
}

/// Records the `τ`-step rollout on `tape`. Step `γ` reads the two previous
/// states (observations for the first two) and frames `γ−1`, `γ`.
pub fn rollout_on_tape(model: &Mvar, tape: &mut Tape, sample: &RolloutSample) -> Result<Vec<Var>> {
    rollout_steps(model, tape, sample, sample.tau())
}

fn rollout_steps(model: &Mvar, tape: &mut Tape, sample: &RolloutSample, steps: usize) -> Result<Vec<Var>> {
    if model.hyper.use_meteo {
        match &sample.meteo {
            Some(f) if f.len() > steps => {}
            _ => {
                return Err(MvarError::MissingMeteo(format!(
                    "sample at {} lacks meteo frames for {steps} steps",
                    sample.init
                )))
            }
        }
    }
    let mut prev = tape.input(sample.x_prev.clone());
    let mut curr = tape.input(sample.x_curr.clone());
    let mut preds = Vec::with_capacity(steps);
    for gamma in 1..=steps {
        let meteo = sample.meteo.as_ref().filter(|_| model.hyper.use_meteo).map(|f| MeteoInput {
            current: &f[gamma - 1],
            next: &f[gamma],
            time: sample.step_time(gamma),
        });
        let tr = model.step(tape, prev, curr, meteo.as_ref())?;
        preds.push(tr.prediction);
        prev = curr;
        curr = tr.prediction;
    }
    Ok(preds)
}

/// Plain evaluation of the rollout.
pub fn rollout(model: &Mvar, params: &ParamStore, sample: &RolloutSample) -> Result<Vec<DenseMatrix>> {
    let mut tape = Tape::new(params);
    let vars = rollout_on_tape(model, &mut tape, sample)?;
    Ok(vars.into_iter().map(|v| tape.value(v).clone()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::city::CityInfo;
    use crate::model::HyperParams;

    fn series(n_times: usize) -> CitySeries {
        let cities = (0..2)
            .map(|i| CityInfo { id: format!("c{i}"), lat: 39.0 + i as f64, lon: 116.0 })
            .collect();
        let mut s = CitySeries::empty(cities, vec!["a".into(), "b".into()], Timestamp(1000), n_times);
        for t in 0..n_times {
            for i in 0..2 {
                for d in 0..2 {
                    s.set(t, i, d, Some(((t as f64) * 0.3 + i as f64 + d as f64 * 0.5).sin()));
                }
            }
        }
        s
    }

    fn spec(tau: usize, lead: u32, stride: u32, to: usize) -> SampleSpec {
        SampleSpec { tau, lead_hours: lead, stride_hours: stride, from: 0, to }
    }

    #[test]
    fn samples_respect_lead_and_completeness() {
        let mut s = series(40);
        let all = build_samples(&s, None, &spec(3, 6, 1, 40)).unwrap();
        // init t needs t-6 >= 0 and t+18 < 40
        assert_eq!(all.len(), 40 - 18 - 6);
        let first = &all[0];
        assert_eq!(first.init, Timestamp(1006));
        assert_eq!(first.x_prev, s.snapshot(0));
        assert_eq!(first.targets[2], s.snapshot(24));
        s.set(12, 0, 0, None);
        let holes = build_samples(&s, None, &spec(3, 6, 1, 40)).unwrap();
        // snapshot 12 is read by inits 6, 12 and 18 only
        assert_eq!(holes.len(), all.len() - 3);
        let strided = build_samples(&series(40), None, &spec(3, 6, 6, 40)).unwrap();
        assert_eq!(strided.iter().map(|x| x.init.0).collect::<Vec<_>>(), vec![1006, 1012, 1018]);
    }

    fn model() -> (Mvar, ParamStore) {
        let mut h = HyperParams::new(2, 2).with_widths(8, 2);
        h.heads = 2;
        h.blocks = 1;
        let m = Mvar::new(h, series(1).cities, None).unwrap();
        let p = m.init_params(4);
        (m, p)
    }

    #[test]
    fn rollout_chains_single_steps() {
        let (m, p) = model();
        let s = build_samples(&series(40), None, &spec(3, 1, 1, 40)).unwrap().remove(0);
        let preds = rollout(&m, &p, &s).unwrap();
        let a = m.predict(&p, &s.x_prev, &s.x_curr, None).unwrap();
        let b = m.predict(&p, &s.x_curr, &a, None).unwrap();
        let c = m.predict(&p, &a, &b, None).unwrap();
        assert!(preds[0].max_abs_diff(&a) <= 1e-12);
        assert!(preds[1].max_abs_diff(&b) <= 1e-12);
        assert!(preds[2].max_abs_diff(&c) <= 1e-12);
    }

    #[test]
    fn rollout_never_reads_targets() {
        let (m, p) = model();
        let s = build_samples(&series(40), None, &spec(3, 1, 1, 40)).unwrap().remove(0);
        let mut poisoned = s.clone();
        for t in &mut poisoned.targets {
            *t = DenseMatrix::filled(2, 2, f64::NAN);
        }
        assert_eq!(rollout(&m, &p, &s).unwrap(), rollout(&m, &p, &poisoned).unwrap());
    }

    #[test]
    fn identity_model_repeats_the_last_observation() {
        let (m, mut p) = model();
        *p.by_name_mut("head.w2").unwrap() = DenseMatrix::zeros(8, 2);
        let s = build_samples(&series(40), None, &spec(4, 2, 1, 40)).unwrap().remove(3);
        for pred in rollout(&m, &p, &s).unwrap() {
            assert_eq!(pred, s.x_curr);
        }
    }
}
