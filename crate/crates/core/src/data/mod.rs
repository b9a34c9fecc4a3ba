//! Station and city data, quality control, normalization and meteorological grids.

pub mod city;
pub mod kriging;
pub mod meteo;
pub mod norm;
pub mod qc;
pub mod station;
pub mod time;
pub mod variogram;

pub use city::{read_city_csv, write_city_csv, CityInfo, CityMetadata, CitySeries};
pub use kriging::{haversine_km, idw_estimate, krige_estimate, KrigingEstimate, Sample, Variogram};
pub use meteo::{GridSpec, MeteoGrid, MeteoStats};
pub use norm::{compute_norm_stats, NormStats};
pub use qc::{city_aggregate, qc_station_filter, qc_timestep_fill, run_qc, FillOutcome, QcAudit, QcConfig, QcOutput};
pub use station::{read_station_csv, write_station_csv, StationObservation, POLLUTANTS};
pub use time::Timestamp;
pub use variogram::{fit_variogram, VariogramFit};
