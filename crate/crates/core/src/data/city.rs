//! City-level concentration series, their CSV form and the metadata sidecar.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::data::time::Timestamp;
use crate::error::{MvarError, Result};
use crate::numerics::DenseMatrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CityInfo {
    pub id: String,
    pub lat: f64,
    pub lon: f64,
}

/// Hourly `T × N × D` concentrations on a uniform grid starting at `start`.
/// Entries whose mask is false are missing (dropped by QC or never observed).
#[derive(Debug, Clone, PartialEq)]
pub struct CitySeries {
    pub cities: Vec<CityInfo>,
    pub pollutants: Vec<String>,
    pub start: Timestamp,
    n_times: usize,
    values: Vec<f64>,
    mask: Vec<bool>,
}

impl CitySeries {
    /// All-missing series.
    pub fn empty(cities: Vec<CityInfo>, pollutants: Vec<String>, start: Timestamp, n_times: usize) -> Self {
        let len = n_times * cities.len() * pollutants.len();
        Self {
            cities,
            pollutants,
            start,
            n_times,
            values: vec![0.0; len],
            mask: vec![false; len],
        }
    }

    pub fn n_times(&self) -> usize {
        self.n_times
    }

    pub fn n_cities(&self) -> usize {
        self.cities.len()
    }

    pub fn n_pollutants(&self) -> usize {
        self.pollutants.len()
    }

    pub fn time(&self, t: usize) -> Timestamp {
        self.start.plus_hours(t as i64)
    }

    pub fn end(&self) -> Timestamp {
        self.start.plus_hours(self.n_times as i64 - 1)
    }

    /// Index of a timestamp, if it lies on the series grid.
    pub fn index_of(&self, ts: Timestamp) -> Option<usize> {
        let off = ts.hours_since(self.start);
        (off >= 0 && (off as usize) < self.n_times).then_some(off as usize)
    }

    #[inline]
    fn idx(&self, t: usize, i: usize, d: usize) -> usize {
        (t * self.cities.len() + i) * self.pollutants.len() + d
    }

    pub fn get(&self, t: usize, i: usize, d: usize) -> Option<f64> {
        let k = self.idx(t, i, d);
        self.mask[k].then_some(self.values[k])
    }

    pub fn raw(&self, t: usize, i: usize, d: usize) -> f64 {
        self.values[self.idx(t, i, d)]
    }

    pub fn set(&mut self, t: usize, i: usize, d: usize, v: Option<f64>) {
        let k = self.idx(t, i, d);
        match v {
            Some(x) => {
                self.values[k] = x;
                self.mask[k] = true;
            }
            None => {
                self.values[k] = 0.0;
                self.mask[k] = false;
            }
        }
    }

    /// Whether every city and pollutant is present at step `t`.
    pub fn is_complete(&self, t: usize) -> bool {
        let w = self.cities.len() * self.pollutants.len();
        self.mask[t * w..(t + 1) * w].iter().all(|&m| m)
    }

    /// `N × D` snapshot at step `t` (missing entries read as 0).
    pub fn snapshot(&self, t: usize) -> DenseMatrix {
        let w = self.cities.len() * self.pollutants.len();
        DenseMatrix::new(self.cities.len(), self.pollutants.len(), self.values[t * w..(t + 1) * w].to_vec())
            .expect("series dims")
    }

    pub fn valid_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub(crate) fn map_valid(&self, mut f: impl FnMut(usize, usize, f64) -> f64) -> Self {
        let mut out = self.clone();
        for t in 0..self.n_times {
            for i in 0..self.n_cities() {
                for d in 0..self.n_pollutants() {
                    let k = self.idx(t, i, d);
                    if self.mask[k] {
                        out.values[k] = f(i, d, self.values[k]);
                    }
                }
            }
        }
        out
    }

    /// Sub-series over steps `[from, to)`.
    pub fn slice_time(&self, from: usize, to: usize) -> Result<Self> {
        if from >= to || to > self.n_times {
            return Err(MvarError::invalid(format!(
                "time slice {from}..{to} out of range for {} steps",
                self.n_times
            )));
        }
        let w = self.cities.len() * self.pollutants.len();
        Ok(Self {
            cities: self.cities.clone(),
            pollutants: self.pollutants.clone(),
            start: self.time(from),
            n_times: to - from,
            values: self.values[from * w..to * w].to_vec(),
            mask: self.mask[from * w..to * w].to_vec(),
        })
    }

    pub fn city_coords(&self) -> Vec<(f64, f64)> {
        self.cities.iter().map(|c| (c.lat, c.lon)).collect()
    }
}

/// Writes `time,city_id,<pollutants…>`; one row per (time, city), missing as empty.
pub fn write_city_csv<W: Write>(writer: W, series: &CitySeries) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["time".to_string(), "city_id".to_string()];
    header.extend(series.pollutants.iter().cloned());
    w.write_record(&header)?;
    for t in 0..series.n_times() {
        let ts = series.time(t).to_string();
        for (i, c) in series.cities.iter().enumerate() {
            let mut row = vec![ts.clone(), c.id.clone()];
            for d in 0..series.n_pollutants() {
                row.push(series.get(t, i, d).map(|v| format!("{v}")).unwrap_or_default());
            }
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a city CSV; coordinates come from the metadata sidecar. Times must
/// lie on an hourly grid; absent (time, city) rows are treated as missing.
pub fn read_city_csv<R: Read>(reader: R, cities: &[CityInfo]) -> Result<CitySeries> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    if header.len() < 3 || header[0] != "time" || header[1] != "city_id" {
        return Err(MvarError::Parse {
            line: 1,
            message: format!("expected header time,city_id,<pollutants>, found {}", header.join(",")),
        });
    }
    let pollutants: Vec<String> = header[2..].to_vec();
    let city_index: BTreeMap<&str, usize> = cities.iter().enumerate().map(|(i, c)| (c.id.as_str(), i)).collect();
    let mut rows = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let line = k + 2;
        let rec = rec.map_err(|e| MvarError::Parse { line, message: e.to_string() })?;
        let ts = Timestamp::parse(&rec[0]).map_err(|e| MvarError::Parse { line, message: e.to_string() })?;
        let ci = *city_index.get(rec[1].trim()).ok_or_else(|| MvarError::Parse {
            line,
            message: format!("unknown city {:?}", &rec[1]),
        })?;
        let mut vals = Vec::with_capacity(pollutants.len());
        for d in 0..pollutants.len() {
            let cell = rec.get(d + 2).unwrap_or("").trim();
            if cell.is_empty() {
                vals.push(None);
            } else {
                let v: f64 = cell.parse().map_err(|_| MvarError::Parse {
                    line,
                    message: format!("bad number {cell:?}"),
                })?;
                if !v.is_finite() {
                    return Err(MvarError::Parse { line, message: format!("non-finite value {cell}") });
                }
                vals.push(Some(v));
            }
        }
        rows.push((ts, ci, vals));
    }
    let start = rows
        .iter()
        .map(|r| r.0)
        .min()
        .ok_or_else(|| MvarError::EmptyDataset("city CSV has no rows".into()))?;
    let end = rows.iter().map(|r| r.0).max().expect("non-empty");
    let n_times = (end.hours_since(start) + 1) as usize;
    let mut series = CitySeries::empty(cities.to_vec(), pollutants, start, n_times);
    for (ts, ci, vals) in rows {
        let t = series.index_of(ts).expect("within range");
        for (d, v) in vals.into_iter().enumerate() {
            series.set(t, ci, d, v);
        }
    }
    Ok(series)
}

/// Sidecar written next to a city CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CityMetadata {
    pub cities: Vec<CityInfo>,
    pub pollutants: Vec<String>,
    pub start: Timestamp,
    pub n_times: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audit: Option<crate::data::qc::QcAuditSummary>,
}

impl CityMetadata {
    pub fn for_series(series: &CitySeries) -> Self {
        Self {
            cities: series.cities.clone(),
            pollutants: series.pollutants.clone(),
            start: series.start,
            n_times: series.n_times(),
            audit: None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series() -> CitySeries {
        let cities = vec![
            CityInfo { id: "a".into(), lat: 39.9, lon: 116.4 },
            CityInfo { id: "b".into(), lat: 39.1, lon: 117.2 },
        ];
        let mut s = CitySeries::empty(cities, vec!["pm25".into(), "o3".into()], Timestamp(450_000), 3);
        for t in 0..3 {
            for i in 0..2 {
                for d in 0..2 {
                    s.set(t, i, d, Some((t * 100 + i * 10 + d) as f64 + 0.125));
                }
            }
        }
        s.set(1, 1, 0, None);
        s
    }

    #[test]
    fn csv_round_trip_preserves_mask() {
        let s = series();
        let mut buf = Vec::new();
        write_city_csv(&mut buf, &s).unwrap();
        let back = read_city_csv(buf.as_slice(), &s.cities).unwrap();
        assert_eq!(back, s);
        assert!(!back.is_complete(1));
        assert!(back.is_complete(0));
    }

    #[test]
    fn unknown_city_is_a_parse_error() {
        let s = series();
        let csv = "time,city_id,pm25,o3\n2021-05-01T00:00:00Z,zzz,1,2\n";
        assert!(matches!(read_city_csv(csv.as_bytes(), &s.cities), Err(MvarError::Parse { line: 2, .. })));
    }

    #[test]
    fn slicing_and_snapshots() {
        let s = series();
        let sub = s.slice_time(1, 3).unwrap();
        assert_eq!(sub.n_times(), 2);
        assert_eq!(sub.start, s.time(1));
        assert_eq!(sub.get(1, 0, 1), s.get(2, 0, 1));
        let snap = s.snapshot(2);
        assert_eq!(snap.shape(), (2, 2));
        assert_eq!(snap.get(1, 1), 211.125);
        assert!(s.slice_time(2, 2).is_err());
    }
}
