use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{MvarError, Result};
use crate::model::Mvar;
use crate::numerics::{DenseMatrix, ParamStore, Tape};
use crate::train::adam::{adam_step, clip_global_norm, AdamConfig, AdamState};
use crate::train::loss::{make_sw_weights, sw_loss, sw_loss_on_tape, LossKind};
use crate::train::rollout::{rollout, rollout_on_tape, RolloutSample};

/// Optimization settings; keys mirror the config file exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub tau: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub w_max: f64,
    pub w_min: f64,
    pub seed: u64,
    pub loss: LossKind,
    /// Global gradient-norm cap; off when absent.
    pub clip_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            tau: 8,
            lr: 1e-4,
            weight_decay: 1e-2,
            epochs: 20,
            batch_size: 64,
            w_max: 5.0,
            w_min: 0.1,
            seed: 0,
            loss: LossKind::Mse,
            clip_norm: None,
        }
    }
}

impl TrainConfig {
    /// Defaults for the meteorology-coupled model.
    pub fn with_meteo() -> Self {
        Self {
            epochs: 10,
            batch_size: 8,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(MvarError::Config(m));
        if self.tau == 0 {
            return fail("tau must be at least 1".into());
        }
        if !(self.w_min > 0.0 && self.w_max >= self.w_min) {
            return fail(format!("need w_max >= w_min > 0, got {} and {}", self.w_max, self.w_min));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) || !(self.weight_decay >= 0.0) {
            return fail("lr must be positive and weight_decay nonnegative".into());
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return fail("batch_size and epochs must be positive".into());
        }
        if self.clip_norm.is_some_and(|c| !(c > 0.0)) {
            return fail("clip_norm must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub epoch: usize,
    pub split: Split,
    pub loss: f64,
}

pub fn write_loss_log<W: Write>(w: W, log: &[LossRecord]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["epoch", "split", "loss"])?;
    for r in log {
        let split = match r.split {
            Split::Train => "train",
            Split::Val => "val",
        };
        out.write_record([r.epoch.to_string(), split.to_string(), format!("{:e}", r.loss)])?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ParamStore,
    pub best_params: ParamStore,
    pub best_epoch: usize,
    /// Mean loss of the initial parameters on the training samples.
    pub initial_loss: f64,
    /// One `train` row per epoch (mean over the epoch's batches), plus a
    /// `val` row when validation samples exist.
    pub log: Vec<LossRecord>,
}

/// Mean step-weighted loss of `params` over `samples`.
pub fn evaluate_loss(model: &Mvar, params: &ParamStore, samples: &[RolloutSample], cfg: &TrainConfig) -> Result<f64> {
    if samples.is_empty() {
        return Err(MvarError::EmptyDataset("no samples to evaluate".into()));
    }
    let weights = make_sw_weights(cfg.tau, cfg.w_max, cfg.w_min)?;
    let mut total = 0.0;
    for s in samples {
        check_tau(s, cfg)?;
        total += sw_loss(&rollout(model, params, s)?, &s.targets, &weights, cfg.loss)?;
    }
    Ok(total / samples.len() as f64)
}

fn check_tau(s: &RolloutSample, cfg: &TrainConfig) -> Result<()> {
    if s.tau() != cfg.tau {
        return Err(MvarError::Config(format!(
            "sample at {} has {} targets, config tau is {}",
            s.init,
            s.tau(),
            cfg.tau
        )));
    }
    Ok(())
}

/// Loss and parameter gradients of one batch (mean over its samples).
pub fn batch_gradients(
    model: &Mvar,
    params: &ParamStore,
    batch: &[&RolloutSample],
    weights: &[f64],
    kind: LossKind,
) -> Result<(f64, Vec<DenseMatrix>)> {
    let mut grads = params.zeros_like();
    let mut loss = 0.0;
    for s in batch {
        let mut tape = Tape::new(params);
        let preds = rollout_on_tape(model, &mut tape, s)?;
        let l = sw_loss_on_tape(&mut tape, &preds, &s.targets, weights, kind)?;
        loss += tape.value(l).get(0, 0);
        let g = tape.backward(l)?;
        for (k, acc) in grads.iter_mut().enumerate() {
            if let Some(d) = g.param(crate::numerics::ParamId(k)) {
                acc.add_assign(d);
            }
        }
    }
    let inv = 1.0 / batch.len() as f64;
    for g in &mut grads {
        g.values_mut().iter_mut().for_each(|x| *x *= inv);
    }
    Ok((loss * inv, grads))
}

/// Mini-batch Adam over seeded shuffles of `train`. The best parameters are
/// chosen by validation loss, or by training loss without validation data.
pub fn train(
    model: &Mvar,
    init: ParamStore,
    train: &[RolloutSample],
    val: &[RolloutSample],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    model.check_params(&init)?;
    if train.is_empty() {
        return Err(MvarError::EmptyDataset("no training samples".into()));
    }
    for s in train.iter().chain(val) {
        check_tau(s, cfg)?;
    }
    let weights = make_sw_weights(cfg.tau, cfg.w_max, cfg.w_min)?;
    let adam = AdamConfig::new(cfg.lr, cfg.weight_decay);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let initial_loss = evaluate_loss(model, &init, train, cfg)?;
    let mut params = init;
    let mut state = AdamState::new(&params);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut log = Vec::new();
    let mut best = (f64::INFINITY, 0, params.clone());
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&RolloutSample> = chunk.iter().map(|&i| &train[i]).collect();
            let (loss, mut grads) = batch_gradients(model, &params, &batch, &weights, cfg.loss)?;
            if let Some(c) = cfg.clip_norm {
                clip_global_norm(&mut grads, c);
            }
            adam_step(&mut params, &grads, &mut state, &adam)?;
            epoch_loss += loss;
            batches += 1;
        }
        let train_loss = epoch_loss / batches as f64;
        if !train_loss.is_finite() {
            return Err(MvarError::NonFinite(format!("training loss diverged at epoch {epoch}")));
        }
        log.push(LossRecord {
            epoch,
            split: Split::Train,
            loss: train_loss,
        });
        let score = if val.is_empty() {
            train_loss
        } else {
            let v = evaluate_loss(model, &params, val, cfg)?;
            log.push(LossRecord {
                epoch,
                split: Split::Val,
                loss: v,
            });
            v
        };
        if score < best.0 {
            best = (score, epoch, params.clone());
        }
    }
    Ok(TrainOutcome {
        params,
        best_params: best.2,
        best_epoch: best.1,
        initial_loss,
        log,
    })
}
