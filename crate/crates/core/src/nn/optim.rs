use serde::{Deserialize, Serialize};

use super::{Module, Param, VisitorMut};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// AdamW with decoupled weight decay. Only trainable parameters that
/// received a gradient are touched.
#[derive(Debug, Clone)]
pub struct AdamW {
    cfg: AdamWConfig,
    steps: u64,
}

impl AdamW {
    pub fn new(cfg: AdamWConfig) -> Self {
        Self { cfg, steps: 0 }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Apply one update at learning rate `lr`; returns how many parameter
    /// tensors were updated.
    pub fn step(&mut self, model: &mut dyn Module, lr: f64) -> usize {
        self.steps += 1;
        let mut upd = Update {
            cfg: self.cfg,
            lr,
            bc1: 1.0 - self.cfg.beta1.powi(self.steps as i32),
            bc2: 1.0 - self.cfg.beta2.powi(self.steps as i32),
            updated: 0,
        };
        model.visit_mut("", &mut upd);
        upd.updated
    }
}

struct Update {
    cfg: AdamWConfig,
    lr: f64,
    bc1: f64,
    bc2: f64,
    updated: usize,
}

impl VisitorMut for Update {
    fn param(&mut self, _path: &str, p: &mut Param) {
        if !p.trainable {
            return;
        }
        let Some(grad) = p.grad().map(|g| g.data().to_vec()) else {
            return;
        };
        let n = p.numel();
        let (m, v) = p.moments.get_or_insert_with(|| (vec![0.0; n], vec![0.0; n]));
        let decay = (1.0 - self.lr * self.cfg.weight_decay) as f32;
        let (b1, b2) = (self.cfg.beta1 as f32, self.cfg.beta2 as f32);
        let step = (self.lr / self.bc1) as f32;
        let bc2_sqrt = self.bc2.sqrt() as f32;
        let eps = self.cfg.eps as f32;
        for (((w, g), mi), vi) in p.value.data_mut().iter_mut().zip(&grad).zip(m.iter_mut()).zip(v.iter_mut()) {
            *w *= decay;
            *mi = b1 * *mi + (1.0 - b1) * g;
            *vi = b2 * *vi + (1.0 - b2) * g * g;
            *w -= step * *mi / (vi.sqrt() / bc2_sqrt + eps);
        }
        self.updated += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Linear, Tensor, TrainCtx};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn first_step_moves_each_weight_by_lr_against_gradient_sign() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut lin = Linear::new(2, 1, &mut rng);
        let before = lin.weight.value.clone();
        let x = Tensor::new(&[1, 2], vec![1.0, -2.0]).unwrap();
        let mut ctx = TrainCtx { rng };
        lin.forward_train(&x, &mut ctx).unwrap();
        lin.backward(&Tensor::new(&[1, 1], vec![1.0]).unwrap()).unwrap();
        let mut opt = AdamW::new(AdamWConfig { weight_decay: 0.0, ..Default::default() });
        assert_eq!(opt.step(&mut lin, 0.1), 2);
        // bias-corrected first step has magnitude ~lr
        let d: Vec<f32> = lin.weight.value.data().iter().zip(before.data()).map(|(a, b)| a - b).collect();
        assert!((d[0] + 0.1).abs() < 1e-5 && (d[1] - 0.1).abs() < 1e-5, "{d:?}");
    }

    #[test]
    fn frozen_params_are_untouched() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut lin = Linear::new(2, 1, &mut rng);
        lin.weight.trainable = false;
        let before = lin.weight.value.clone();
        let x = Tensor::new(&[1, 2], vec![1.0, -2.0]).unwrap();
        let mut ctx = TrainCtx { rng };
        lin.forward_train(&x, &mut ctx).unwrap();
        lin.backward(&Tensor::new(&[1, 1], vec![1.0]).unwrap()).unwrap();
        let mut opt = AdamW::new(AdamWConfig::default());
        assert_eq!(opt.step(&mut lin, 0.1), 1);
        assert_eq!(lin.weight.value, before);
    }
}
