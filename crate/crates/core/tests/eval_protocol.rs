mod common;

use mvar_core::data::{CitySeries, Timestamp};
use mvar_core::eval::{rmse_buckets, select_init_times, ForecastSet, InitSelection, Pooling, BUCKETS};
use mvar_core::numerics::DenseMatrix;

fn zero_truth(hours: usize) -> CitySeries {
    let mut s = CitySeries::empty(common::cities(2), vec!["a".into()], Timestamp::from_ymdh(2021, 5, 1, 0).unwrap(), hours);
    for t in 0..hours {
        for i in 0..2 {
            s.set(t, i, 0, Some(0.0));
        }
    }
    s
}

/// Step `s` (1-based) is off by `s` everywhere.
fn ramp(truth: &CitySeries, steps: usize, poison: impl Fn(usize) -> bool) -> ForecastSet {
    let values = (1..=steps)
        .map(|s| DenseMatrix::filled(2, 1, if poison(s) { 1e6 } else { s as f64 }))
        .collect();
    ForecastSet {
        city_ids: truth.cities.iter().map(|c| c.id.clone()).collect(),
        pollutants: truth.pollutants.clone(),
        resolution_hours: 6,
        init_times: vec![truth.time(0)],
        values: vec![values],
    }
}

#[test]
fn six_hour_steps_fill_the_four_windows() {
    let truth = zero_truth(200);
    let r = rmse_buckets(&ramp(&truth, 20, |_| false), &truth, Pooling::Pooled).unwrap();
    let mean_sq = |lo: usize| (lo..lo + 4).map(|s| (s * s) as f64).sum::<f64>() / 4.0;
    let expect = [mean_sq(1), mean_sq(5), mean_sq(9), mean_sq(17)];
    for (b, e) in expect.iter().enumerate() {
        assert!((r.bucket_rmse[0][b].unwrap() - e.sqrt()).abs() < 1e-12, "{}", BUCKETS[b].0);
        assert_eq!(r.bucket_counts[0][b], 8);
    }
}

#[test]
fn steps_thirteen_to_sixteen_never_reach_a_bucket() {
    let truth = zero_truth(200);
    let clean = rmse_buckets(&ramp(&truth, 20, |_| false), &truth, Pooling::Pooled).unwrap();
    let poisoned = rmse_buckets(&ramp(&truth, 20, |s| (13..=16).contains(&s)), &truth, Pooling::Pooled).unwrap();
    assert_eq!(clean.bucket_rmse, poisoned.bucket_rmse);
    assert_ne!(clean.step_rmse, poisoned.step_rmse);
    let other = rmse_buckets(&ramp(&truth, 20, |s| s == 12), &truth, Pooling::Pooled).unwrap();
    assert_ne!(clean.bucket_rmse[0][2], other.bucket_rmse[0][2]);
}

#[test]
fn mean_of_steps_differs_from_pooling() {
    let truth = zero_truth(200);
    let r = rmse_buckets(&ramp(&truth, 4, |_| false), &truth, Pooling::MeanOfSteps).unwrap();
    assert!((r.bucket_rmse[0][0].unwrap() - 2.5).abs() < 1e-12);
    assert!(r.bucket_rmse[0][1].is_none());
}

#[test]
fn missing_truth_drops_the_whole_step() {
    let mut truth = zero_truth(200);
    truth.set(12, 1, 0, None);
    let r = rmse_buckets(&ramp(&truth, 4, |_| false), &truth, Pooling::Pooled).unwrap();
    assert_eq!(r.step_counts[0], vec![2, 0, 2, 2]);
    assert!((r.bucket_rmse[0][0].unwrap() - ((1.0 + 9.0 + 16.0) / 3.0f64).sqrt()).abs() < 1e-12);
}

#[test]
fn init_times_skip_incomplete_inputs_and_short_horizons() {
    let mut truth = zero_truth(72);
    // 00 UTC is 08 local and 12 UTC is 20 local; hour 0 lacks its t-6 input
    // and hour 48 runs past the end
    assert_eq!(select_init_times(&truth, &InitSelection::new(6, 24)).len(), 3);
    truth.set(30, 0, 0, None);
    let inits = select_init_times(&truth, &InitSelection::new(6, 24));
    assert_eq!(inits.iter().map(|t| t.hours_since(truth.start)).collect::<Vec<_>>(), vec![12, 24]);
}
