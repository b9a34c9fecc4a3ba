//! Multivariate autoregressive air-pollutant forecasting.
//!
//! The crate is organized bottom-up:
//!
//! - [`numerics`]: dense matrices, a reverse-mode tape and a finite-difference oracle
//! - [`data`]: station ingestion, quality control with ordinary Kriging, city
//!   aggregation, normalization and the gridded meteorology format
//! - [`model`]: the meteorology-coupled spatial transformer and its checkpoints
//! - [`train`]: multi-step rollout training with the step-weighted loss
//! - [`scheduler`]: greedy composition of fixed-lead models into hourly forecasts
//! - [`eval`]: horizon-bucketed RMSE and the persistence reference
//! - [`synthetic`]: seeded desk-scale datasets with known structure

pub mod data;
pub mod error;
pub mod eval;
pub mod model;
pub mod numerics;
pub mod scheduler;
pub mod synthetic;
pub mod train;

pub use error::{MvarError, Result};
