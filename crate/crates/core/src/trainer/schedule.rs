use std::f64::consts::PI;

use super::config::TrainConfig;
use crate::error::{Error, Result};

/// Learning rate at optimizer step `step`: linear warmup from 0 to
/// `peak_lr` over the warmup epochs, then cosine decay to 0 over the decay
/// epochs. `step` may equal the total step count (the schedule endpoint).
pub fn lr_at(step: usize, steps_per_epoch: usize, cfg: &TrainConfig) -> Result<f64> {
    if steps_per_epoch == 0 {
        return Err(Error::Validation("steps_per_epoch must be positive".into()));
    }
    let warmup = cfg.warmup_epochs * steps_per_epoch;
    let decay = cfg.decay_epochs * steps_per_epoch;
    let total = warmup + decay;
    if step > total {
        return Err(Error::Validation(format!("step {step} is outside the schedule [0, {total}]")));
    }
    if step < warmup {
        return Ok(cfg.peak_lr * step as f64 / warmup as f64);
    }
    if decay == 0 {
        return Ok(cfg.peak_lr);
    }
    let t = (step - warmup) as f64 / decay as f64;
    Ok(cfg.peak_lr * 0.5 * (1.0 + (PI * t).cos()))
}
