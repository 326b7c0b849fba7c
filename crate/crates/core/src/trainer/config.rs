use serde::{Deserialize, Serialize};

use crate::datasets::PreprocessConfig;
use crate::error::{Error, Result};
use crate::modelzoo::Tier;
use crate::nn::AdamWConfig;

/// Optimisation protocol. [`TrainConfig::full`] is the full 100-epoch recipe;
/// [`TrainConfig::desk`] a shortened CPU schedule for the synthetic data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub weight_decay: f64,
    pub peak_lr: f64,
    pub warmup_epochs: usize,
    pub decay_epochs: usize,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Only horizontal and vertical flips are ever applied.
    pub augmentation: String,
    /// Inverse-frequency class weights in the loss (off by default).
    #[serde(default)]
    pub class_weighting: bool,
    pub preprocess: PreprocessConfig,
}

pub const FLIPS_ONLY: &str = "flips";

impl TrainConfig {
    pub fn full() -> Self {
        Self {
            weight_decay: 0.005,
            peak_lr: 1e-4,
            warmup_epochs: 10,
            decay_epochs: 90,
            batch_size: 32,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            augmentation: FLIPS_ONLY.into(),
            class_weighting: false,
            preprocess: PreprocessConfig::default(),
        }
    }

    pub fn desk() -> Self {
        Self {
            peak_lr: 2e-3,
            warmup_epochs: 1,
            decay_epochs: 11,
            preprocess: PreprocessConfig::with_size(32),
            ..Self::full()
        }
    }

    pub fn for_tier(tier: Tier) -> Self {
        match tier {
            Tier::Desk => Self::desk(),
            Tier::Full => Self::full(),
        }
    }

    pub fn epochs(&self) -> usize {
        self.warmup_epochs + self.decay_epochs
    }

    pub fn adamw(&self) -> AdamWConfig {
        AdamWConfig {
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
            weight_decay: self.weight_decay,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if !(self.peak_lr > 0.0 && self.peak_lr.is_finite()) {
            problems.push("peak_lr must be positive".to_string());
        }
        if !(self.weight_decay >= 0.0) {
            problems.push("weight_decay must be nonnegative".to_string());
        }
        if self.batch_size == 0 {
            problems.push("batch_size must be positive".to_string());
        }
        if self.epochs() == 0 {
            problems.push("at least one epoch is required".to_string());
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            problems.push("Adam betas must lie in [0, 1)".to_string());
        }
        if self.augmentation != FLIPS_ONLY {
            problems.push(format!("augmentation policy {:?} is not supported (only \"flips\")", self.augmentation));
        }
        if let Err(e) = self.preprocess.validate() {
            problems.push(e.to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(format!("invalid training config: {}", problems.join("; "))))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_protocol_is_100_epochs() {
        let p = TrainConfig::full();
        assert_eq!(p.epochs(), 100);
        assert_eq!((p.peak_lr, p.weight_decay, p.batch_size), (1e-4, 0.005, 32));
        p.validate().unwrap();
        TrainConfig::desk().validate().unwrap();
    }

    #[test]
    fn rejects_bad_values() {
        let mut c = TrainConfig::full();
        c.peak_lr = 0.0;
        c.batch_size = 0;
        let msg = c.validate().unwrap_err().to_string();
        assert!(msg.contains("peak_lr") && msg.contains("batch_size"), "{msg}");
    }
}
