use std::f64::consts::TAU;

use crate::data::time::Timestamp;
use crate::numerics::DenseMatrix;

/// Sinusoidal features of hour-of-day (first half) and day-of-year (second
/// half), harmonics `1..=width/4`, as a `1 × width` row.
pub fn time_encoding(ts: Timestamp, width: usize) -> DenseMatrix {
    let hour = ts.hour_of_day_utc() as f64 / 24.0;
    let day = ts.day_of_year() as f64 / 365.25;
    let harmonics = width / 4;
    let mut out = Vec::with_capacity(width);
    for phase in [hour, day] {
        for k in 1..=harmonics {
            let a = TAU * k as f64 * phase;
            out.push(a.sin());
            out.push(a.cos());
        }
    }
    out.resize(width, 0.0);
    DenseMatrix::new(1, width, out).expect("time encoding width")
}
