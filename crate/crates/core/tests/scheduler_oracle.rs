mod common;

use std::collections::BTreeMap;

use common::{cities, min_invocations, random_matrix};
use mvar_core::model::{Checkpoint, HyperParams, Mvar};
use mvar_core::numerics::DenseMatrix;
use mvar_core::scheduler::{compose_forecast, greedy_plan, invocation_profile, Composer, DEFAULT_LEADS};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn greedy_counts_equal_the_minimum_number_of_calls() {
    let profile = invocation_profile(120, &DEFAULT_LEADS).unwrap();
    let dp = min_invocations(120, &DEFAULT_LEADS);
    assert_eq!(profile, dp);
    for h in 1..=120u32 {
        let plan = greedy_plan(h, &DEFAULT_LEADS).unwrap();
        assert_eq!(plan.steps.iter().sum::<u32>(), h);
        assert!(plan.steps.windows(2).all(|w| w[0] >= w[1]));
    }
}

fn random_models() -> (BTreeMap<u32, Checkpoint>, BTreeMap<i64, DenseMatrix>) {
    let mut h = HyperParams::new(3, 2).with_widths(8, 2);
    h.heads = 2;
    h.blocks = 1;
    h.d_t = 4;
    let model = Mvar::new(h, cities(3), None).unwrap();
    let models = DEFAULT_LEADS
        .iter()
        .map(|&l| {
            let ck = Checkpoint {
                model: model.clone(),
                params: model.init_params(l as u64),
                lead_hours: l,
                norm: None,
                meteo_stats: None,
            };
            (l, ck)
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let history = (-24..=0).map(|o| (o, random_matrix(&mut rng, 3, 2))).collect();
    (models, history)
}

#[test]
fn every_offset_has_one_value_regardless_of_the_requested_horizon() {
    let (models, history) = random_models();
    let mut long = Composer::new(&models, history.clone(), None).unwrap();
    long.run_plan(&greedy_plan(120, &DEFAULT_LEADS).unwrap()).unwrap();
    let mut reference = Composer::new(&models, history.clone(), None).unwrap();
    for h in (1..=60).step_by(7) {
        let out = compose_forecast(&greedy_plan(h, &DEFAULT_LEADS).unwrap(), &models, history.clone(), None).unwrap();
        for (o, state) in &out.states {
            assert_eq!(state, &reference.state_at(*o).unwrap(), "offset {o} in plan {h}");
        }
        assert_eq!(out.invocations.last().copied(), Some(min_invocations(h, &DEFAULT_LEADS)[h as usize]));
    }
    for (o, s) in long.timeline().iter().filter(|(o, _)| **o > 0 && **o <= 60) {
        assert_eq!(s, &reference.state_at(*o).unwrap());
    }
}
