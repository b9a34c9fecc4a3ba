//! Station-level observations and their CSV form.

use std::io::{Read, Write};

use crate::data::time::Timestamp;
use crate::error::{MvarError, Result};

/// Pollutant columns in file order. CO is in mg/m³, the rest in µg/m³.
pub const POLLUTANTS: [&str; 6] = ["pm25", "pm10", "so2", "no2", "co", "o3"];

pub const STATION_HEADER: [&str; 11] = [
    "time", "station_id", "city_id", "lat", "lon", "pm25", "pm10", "so2", "no2", "co", "o3",
];

#[derive(Debug, Clone, PartialEq)]
pub struct StationObservation {
    pub station_id: String,
    pub city_id: String,
    pub lat: f64,
    pub lon: f64,
    pub time: Timestamp,
    /// One entry per pollutant; `None` is missing.
    pub values: Vec<Option<f64>>,
}

impl StationObservation {
    pub fn validate(&self) -> Result<()> {
        if !(-90.0..=90.0).contains(&self.lat) || !(-180.0..=180.0).contains(&self.lon) {
            return Err(MvarError::invalid(format!(
                "station {} has coordinates ({}, {}) outside the valid range",
                self.station_id, self.lat, self.lon
            )));
        }
        for v in self.values.iter().flatten() {
            if !v.is_finite() || *v < 0.0 {
                return Err(MvarError::invalid(format!(
                    "station {} reports invalid concentration {v}",
                    self.station_id
                )));
            }
        }
        Ok(())
    }
}

fn parse_err(line: usize, message: impl Into<String>) -> MvarError {
    MvarError::Parse {
        line,
        message: message.into(),
    }
}

/// Reads the station CSV. Empty cells are missing values. Errors carry the
/// 1-based line number of the offending row.
pub fn read_station_csv<R: Read>(reader: R) -> Result<Vec<StationObservation>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    if header != STATION_HEADER {
        return Err(parse_err(
            1,
            format!("expected header {}, found {}", STATION_HEADER.join(","), header.join(",")),
        ));
    }
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| parse_err(line, e.to_string()))?;
        if rec.len() != STATION_HEADER.len() {
            return Err(parse_err(line, format!("expected 11 fields, found {}", rec.len())));
        }
        let time = Timestamp::parse(&rec[0]).map_err(|e| parse_err(line, e.to_string()))?;
        let num = |idx: usize| -> Result<f64> {
            rec[idx]
                .trim()
                .parse::<f64>()
                .map_err(|_| parse_err(line, format!("bad number {:?} in {}", &rec[idx], STATION_HEADER[idx])))
        };
        let lat = num(3)?;
        let lon = num(4)?;
        let mut values = Vec::with_capacity(POLLUTANTS.len());
        for idx in 5..11 {
            if rec[idx].trim().is_empty() {
                values.push(None);
            } else {
                values.push(Some(num(idx)?));
            }
        }
        let obs = StationObservation {
            station_id: rec[1].trim().to_string(),
            city_id: rec[2].trim().to_string(),
            lat,
            lon,
            time,
            values,
        };
        obs.validate().map_err(|e| parse_err(line, e.to_string()))?;
        out.push(obs);
    }
    Ok(out)
}

pub fn write_station_csv<W: Write>(writer: W, records: &[StationObservation]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(STATION_HEADER)?;
    for r in records {
        let mut row = vec![
            r.time.to_string(),
            r.station_id.clone(),
            r.city_id.clone(),
            format!("{}", r.lat),
            format!("{}", r.lon),
        ];
        row.extend(r.values.iter().map(|v| v.map(|x| format!("{x}")).unwrap_or_default()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "time,station_id,city_id,lat,lon,pm25,pm10,so2,no2,co,o3
2023-01-01T00:00:00Z,s1,beijing,39.9,116.4,35,60,,40,0.8,20
2023-01-01T01:00:00Z,s1,beijing,39.9,116.4,,,,,,
";

    #[test]
    fn reads_empty_cells_as_missing() {
        let recs = read_station_csv(SAMPLE.as_bytes()).unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[0].values[0], Some(35.0));
        assert_eq!(recs[0].values[2], None);
        assert!(recs[1].values.iter().all(Option::is_none));
    }

    #[test]
    fn malformed_row_reports_line() {
        let bad = "time,station_id,city_id,lat,lon,pm25,pm10,so2,no2,co,o3
2023-01-01T00:00:00Z,s1,beijing,39.9,116.4,35,60,,40,0.8,20
2023-01-01T01:00:00Z,s1,beijing,abc,116.4,1,1,1,1,1,1
";
        match read_station_csv(bad.as_bytes()) {
            Err(MvarError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn negative_concentration_is_rejected() {
        let bad = "time,station_id,city_id,lat,lon,pm25,pm10,so2,no2,co,o3
2023-01-01T00:00:00Z,s1,beijing,39.9,116.4,-3,60,,40,0.8,20
";
        assert!(matches!(read_station_csv(bad.as_bytes()), Err(MvarError::Parse { line: 2, .. })));
    }

    #[test]
    fn wrong_header_is_rejected() {
        assert!(read_station_csv("a,b\n1,2\n".as_bytes()).is_err());
    }

    #[test]
    fn write_then_read_is_lossless() {
        let recs = read_station_csv(SAMPLE.as_bytes()).unwrap();
        let mut buf = Vec::new();
        write_station_csv(&mut buf, &recs).unwrap();
        assert_eq!(read_station_csv(buf.as_slice()).unwrap(), recs);
    }
}
