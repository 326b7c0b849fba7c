use super::{missing_cache, Module, Tensor, TrainCtx, Visitor, VisitorMut};
use crate::error::Result;

#[derive(Debug, Clone, Default)]
pub struct Relu {
    mask: Option<Vec<bool>>,
}

impl Relu {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Module for Relu {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(x.map(|v| v.max(0.0)))
    }

    fn forward_train(&mut self, x: &Tensor, _ctx: &mut TrainCtx) -> Result<Tensor> {
        self.mask = Some(x.data().iter().map(|&v| v > 0.0).collect());
        self.forward(x)
    }

    fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let mask = self.mask.take().ok_or_else(|| missing_cache("relu"))?;
        let mut g = grad.clone();
        for (v, keep) in g.data_mut().iter_mut().zip(mask) {
            if !keep {
                *v = 0.0;
            }
        }
        Ok(g)
    }

    fn visit(&self, _: &str, _: &mut dyn Visitor) {}
    fn visit_mut(&mut self, _: &str, _: &mut dyn VisitorMut) {}
}

/// Exact (erf-based) GELU.
#[derive(Debug, Clone, Default)]
pub struct Gelu {
    input: Option<Tensor>,
}

impl Gelu {
    pub fn new() -> Self {
        Self::default()
    }
}

const FRAC_1_SQRT_2PI: f32 = 0.398_942_3;

fn gelu(x: f32) -> f32 {
    0.5 * x * (1.0 + libm::erff(x * std::f32::consts::FRAC_1_SQRT_2))
}

fn gelu_grad(x: f32) -> f32 {
    let cdf = 0.5 * (1.0 + libm::erff(x * std::f32::consts::FRAC_1_SQRT_2));
    cdf + x * FRAC_1_SQRT_2PI * (-0.5 * x * x).exp()
}

impl Module for Gelu {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(x.map(gelu))
    }

    fn forward_train(&mut self, x: &Tensor, _ctx: &mut TrainCtx) -> Result<Tensor> {
        self.input = Some(x.clone());
        self.forward(x)
    }

    fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let x = self.input.take().ok_or_else(|| missing_cache("gelu"))?;
        let mut g = grad.clone();
        for (v, &xi) in g.data_mut().iter_mut().zip(x.data()) {
            *v *= gelu_grad(xi);
        }
        Ok(g)
    }

    fn visit(&self, _: &str, _: &mut dyn Visitor) {}
    fn visit_mut(&mut self, _: &str, _: &mut dyn VisitorMut) {}
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gelu_derivative_matches_finite_difference() {
        for x in [-3.0f32, -0.5, 0.0, 0.7, 2.5] {
            let h = 1e-3;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-3);
        }
        assert!((gelu(1.0) - 0.841_344_7).abs() < 1e-6);
    }
}
