//! Multi-step rollout training with the step-weighted loss.

pub mod adam;
pub mod loss;
pub mod rollout;
pub mod trainer;

pub use adam::{adam_step, clip_global_norm, AdamConfig, AdamState};
pub use loss::{make_sw_weights, sw_loss, sw_loss_on_tape, LossKind};
pub use rollout::{build_samples, rollout, rollout_on_tape, RolloutSample, SampleSpec};
pub use trainer::{batch_gradients, evaluate_loss, train, write_loss_log, LossRecord, Split, TrainConfig, TrainOutcome};
