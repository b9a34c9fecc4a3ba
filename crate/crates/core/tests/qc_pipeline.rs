use mvar_core::data::qc::{run_qc, QcConfig};
use mvar_core::data::{CitySeries, StationObservation};
use mvar_core::synthetic::{generate, SynthConfig};

fn as_stations(series: &CitySeries) -> Vec<StationObservation> {
    let mut out = Vec::new();
    for t in 0..series.n_times() {
        for (i, c) in series.cities.iter().enumerate() {
            out.push(StationObservation {
                station_id: c.id.clone(),
                city_id: c.id.clone(),
                lat: c.lat,
                lon: c.lon,
                time: series.time(t),
                values: (0..series.n_pollutants()).map(|d| series.get(t, i, d)).collect(),
            });
        }
    }
    out
}

fn gappy() -> SynthConfig {
    SynthConfig {
        n_cities: 5,
        stations_per_city: 3,
        days: 10,
        grid_height: 4,
        grid_width: 4,
        channels: vec!["u10".into()],
        station_missing_rate: 0.08,
        timestep_missing_rate: 0.05,
        ..SynthConfig::default()
    }
}

#[test]
fn qc_of_qc_output_is_unchanged() {
    let data = generate(&gappy()).unwrap();
    let first = run_qc(&data.stations, &QcConfig::default()).unwrap();
    assert!(first.audit.summary().filled_values.iter().sum::<usize>() > 0);
    assert!(first.audit.summary().dropped_timesteps.iter().all(|&n| n > 0));
    let second = run_qc(&as_stations(&first.series), &QcConfig::default()).unwrap();
    assert_eq!(second.series, first.series);
    let s = second.audit.summary();
    assert_eq!(s.filled_values.iter().sum::<usize>(), 0);
    assert_eq!(s.stations_removed, 0);
}

#[test]
fn filled_series_has_no_gaps_outside_dropped_timesteps() {
    let data = generate(&gappy()).unwrap();
    let out = run_qc(&data.stations, &QcConfig::default()).unwrap();
    let dropped = out.audit.summary().dropped_timesteps;
    for d in 0..6 {
        let gaps = (0..out.series.n_times()).filter(|&t| out.series.get(t, 0, d).is_none()).count();
        assert_eq!(gaps, dropped[d]);
        for t in 0..out.series.n_times() {
            let present = (0..5).filter(|&i| out.series.get(t, i, d).is_some()).count();
            assert!(present == 0 || present == 5);
        }
    }
}
