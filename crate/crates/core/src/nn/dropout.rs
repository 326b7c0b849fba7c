use rand::Rng;

use super::{missing_cache, Module, Tensor, TrainCtx, Visitor, VisitorMut};
use crate::error::Result;

/// Inverted dropout; identity at inference.
#[derive(Debug, Clone)]
pub struct Dropout {
    p: f32,
    mask: Option<Vec<f32>>,
}

impl Dropout {
    pub fn new(p: f32) -> Self {
        assert!((0.0..1.0).contains(&p));
        Self { p, mask: None }
    }
}

impl Module for Dropout {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(x.clone())
    }

    fn forward_train(&mut self, x: &Tensor, ctx: &mut TrainCtx) -> Result<Tensor> {
        let keep = 1.0 - self.p;
        let mask: Vec<f32> = (0..x.numel())
            .map(|_| {
                if self.p == 0.0 || ctx.rng.random::<f32>() < keep {
                    1.0 / keep
                } else {
                    0.0
                }
            })
            .collect();
        let mut y = x.clone();
        for (v, m) in y.data_mut().iter_mut().zip(&mask) {
            *v *= m;
        }
        self.mask = Some(mask);
        Ok(y)
    }

    fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let mask = self.mask.take().ok_or_else(|| missing_cache("dropout"))?;
        let mut g = grad.clone();
        for (v, m) in g.data_mut().iter_mut().zip(&mask) {
            *v *= m;
        }
        Ok(g)
    }

    fn visit(&self, _: &str, _: &mut dyn Visitor) {}
    fn visit_mut(&mut self, _: &str, _: &mut dyn VisitorMut) {}
}
