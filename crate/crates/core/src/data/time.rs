use std::fmt;

use chrono::{DateTime, Datelike, NaiveDateTime, TimeZone, Timelike, Utc};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{MvarError, Result};

/// Whole hours since the Unix epoch, UTC.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Timestamp(pub i64);

impl Timestamp {
    pub fn from_ymdh(year: i32, month: u32, day: u32, hour: u32) -> Result<Self> {
        let dt = Utc
            .with_ymd_and_hms(year, month, day, hour, 0, 0)
            .single()
            .ok_or_else(|| MvarError::invalid(format!("invalid date {year}-{month}-{day} {hour}h")))?;
        Ok(Self(dt.timestamp().div_euclid(3600)))
    }

    /// Accepts RFC 3339 (`2023-05-08T12:00:00Z`, `…+08:00`) or a naive
    /// `YYYY-MM-DDTHH:MM[:SS]` / `YYYY-MM-DD HH:MM[:SS]`, which is read as UTC.
    /// Minutes and seconds must be zero.
    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        let dt: DateTime<Utc> = if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
            dt.with_timezone(&Utc)
        } else {
            let naive = ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M"]
                .iter()
                .find_map(|f| NaiveDateTime::parse_from_str(s, f).ok())
                .ok_or_else(|| MvarError::invalid(format!("unparseable timestamp {s:?}")))?;
            Utc.from_utc_datetime(&naive)
        };
        if dt.minute() != 0 || dt.second() != 0 || dt.nanosecond() != 0 {
            return Err(MvarError::invalid(format!("timestamp {s:?} is not on the hour")));
        }
        Ok(Self(dt.timestamp().div_euclid(3600)))
    }

    pub fn to_datetime(self) -> DateTime<Utc> {
        Utc.timestamp_opt(self.0 * 3600, 0)
            .single()
            .expect("hour count within chrono range")
    }

    pub fn plus_hours(self, h: i64) -> Self {
        Self(self.0 + h)
    }

    pub fn hours_since(self, other: Timestamp) -> i64 {
        self.0 - other.0
    }

    pub fn hour_of_day_utc(self) -> u32 {
        self.0.rem_euclid(24) as u32
    }

    /// Hour of day at a fixed UTC offset (hours).
    pub fn local_hour(self, utc_offset_hours: i64) -> u32 {
        (self.0 + utc_offset_hours).rem_euclid(24) as u32
    }

    /// Zero-based day of year in UTC.
    pub fn day_of_year(self) -> u32 {
        self.to_datetime().ordinal0()
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_datetime().format("%Y-%m-%dT%H:%M:%SZ"))
    }
}

impl Serialize for Timestamp {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Timestamp {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Timestamp::parse(&s).map_err(serde::de::Error::custom)
    }
}
