//! The meteorology-coupled spatial transformer.

pub mod checkpoint;
pub mod hyper;
pub mod network;
pub mod time_encoding;

pub use checkpoint::Checkpoint;
pub use hyper::HyperParams;
pub use network::{param_layout, AttentionMap, AttentionStage, MeteoInput, Mvar, StepTrace};
pub use time_encoding::time_encoding;
