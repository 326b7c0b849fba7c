use rand::Rng;

use super::gemm::{gemm, MatRef};
use super::{init, join, missing_cache, Module, Param, Tensor, TrainCtx, Visitor, VisitorMut};
use crate::error::{Error, Result};

/// Fully-connected layer acting on the last axis.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Param,
    pub bias: Option<Param>,
    input: Option<Tensor>,
}

impl Linear {
    pub fn new(fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Self {
        Self {
            weight: Param::new(init::uniform_fan_in(&[fan_out, fan_in], fan_in, rng)),
            bias: Some(Param::new(init::uniform_fan_in(&[fan_out], fan_in, rng))),
            input: None,
        }
    }

    pub fn in_features(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_features(&self) -> usize {
        self.weight.shape()[0]
    }

    fn forward_impl(&self, x: &Tensor) -> Result<Tensor> {
        let (rows, cols) = x.rows_cols();
        if cols != self.in_features() {
            return Err(Error::Shape(format!(
                "linear expects {} features, got {:?}",
                self.in_features(),
                x.shape()
            )));
        }
        let out_f = self.out_features();
        let mut shape = x.shape().to_vec();
        *shape.last_mut().expect("rank >= 1") = out_f;
        let mut out = Tensor::zeros(&shape);
        gemm(
            MatRef::new(x.data(), rows, cols),
            MatRef::new(self.weight.value.data(), out_f, cols).t(),
            out.data_mut(),
            false,
        );
        if let Some(b) = &self.bias {
            for row in out.data_mut().chunks_mut(out_f) {
                for (v, bb) in row.iter_mut().zip(b.value.data()) {
                    *v += bb;
                }
            }
        }
        Ok(out)
    }
}

impl Module for Linear {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.forward_impl(x)
    }

    fn forward_train(&mut self, x: &Tensor, _ctx: &mut TrainCtx) -> Result<Tensor> {
        let y = self.forward_impl(x)?;
        self.input = Some(x.clone());
        Ok(y)
    }

    fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let x = self.input.take().ok_or_else(|| missing_cache("linear"))?;
        let (rows, in_f) = x.rows_cols();
        let out_f = self.out_features();
        if grad.numel() != rows * out_f {
            return Err(Error::Shape(format!(
                "linear gradient {:?} does not match {rows} rows x {out_f}",
                grad.shape()
            )));
        }
        let gm = MatRef::new(grad.data(), rows, out_f);
        if self.weight.trainable {
            gemm(gm.t(), MatRef::new(x.data(), rows, in_f), self.weight.grad_mut(), true);
        }
        if let Some(b) = self.bias.as_mut().filter(|b| b.trainable) {
            let bg = b.grad_mut();
            for row in grad.data().chunks(out_f) {
                for (a, g) in bg.iter_mut().zip(row) {
                    *a += g;
                }
            }
        }
        let mut dx = Tensor::zeros(x.shape());
        gemm(gm, MatRef::new(self.weight.value.data(), out_f, in_f), dx.data_mut(), false);
        Ok(dx)
    }

    fn visit(&self, path: &str, v: &mut dyn Visitor) {
        v.weight_layer(path);
        v.param(&join(path, "weight"), &self.weight);
        if let Some(b) = &self.bias {
            v.param(&join(path, "bias"), b);
        }
    }

    fn visit_mut(&mut self, path: &str, v: &mut dyn VisitorMut) {
        v.weight_layer(path);
        v.param(&join(path, "weight"), &mut self.weight);
        if let Some(b) = &mut self.bias {
            v.param(&join(path, "bias"), b);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut lin = Linear::new(4, 3, &mut rng);
        let x = init::normal(&[2, 5, 4], 1.0, &mut rng);
        let w = init::normal(&[2, 5, 3], 1.0, &mut rng);
        let mut ctx = TrainCtx { rng: ChaCha8Rng::seed_from_u64(0) };
        lin.forward_train(&x, &mut ctx).unwrap();
        let dx = lin.backward(&w).unwrap();
        let f = |l: &Linear, t: &Tensor| -> f64 {
            l.forward(t).unwrap().data().iter().zip(w.data()).map(|(a, b)| (*a as f64) * (*b as f64)).sum()
        };
        let h = 1e-2;
        for i in [0, 17, 39] {
            let mut xp = x.clone();
            xp.data_mut()[i] += h;
            let mut xm = x.clone();
            xm.data_mut()[i] -= h;
            let fd = (f(&lin, &xp) - f(&lin, &xm)) / (2.0 * h as f64);
            assert!((fd - dx.data()[i] as f64).abs() < 1e-3);
        }
        let dw = lin.weight.grad().unwrap().clone();
        for i in 0..12 {
            let mut lp = lin.clone();
            lp.weight.value.data_mut()[i] += h;
            let mut lm = lin.clone();
            lm.weight.value.data_mut()[i] -= h;
            let fd = (f(&lp, &x) - f(&lm, &x)) / (2.0 * h as f64);
            assert!((fd - dw.data()[i] as f64).abs() < 1e-3);
        }
    }
}
