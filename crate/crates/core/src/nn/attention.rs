use rand::Rng;

use super::gemm::{gemm_strided, MatRef};
use super::{join, missing_cache, Linear, Module, Tensor, TrainCtx, Visitor, VisitorMut};
use crate::error::{Error, Result};

/// Multi-head self-attention over `[N, L, D]` token tensors with a packed
/// query/key/value input projection.
#[derive(Debug, Clone)]
pub struct MultiheadAttention {
    pub in_proj: Linear,
    pub out_proj: Linear,
    heads: usize,
    cache: Option<(Tensor, Vec<f32>)>,
}

impl MultiheadAttention {
    pub fn new(dim: usize, heads: usize, rng: &mut impl Rng) -> Self {
        assert!(dim % heads == 0);
        let mut in_proj = Linear::new(dim, 3 * dim, rng);
        // xavier-uniform packed projection, zero bias
        let bound = (6.0 / (dim + 3 * dim) as f32).sqrt();
        in_proj
            .weight
            .value
            .data_mut()
            .iter_mut()
            .for_each(|v| *v = rng.random_range(-bound..bound));
        if let Some(b) = in_proj.bias.as_mut() {
            b.value.data_mut().fill(0.0);
        }
        let mut out_proj = Linear::new(dim, dim, rng);
        if let Some(b) = out_proj.bias.as_mut() {
            b.value.data_mut().fill(0.0);
        }
        Self {
            in_proj,
            out_proj,
            heads,
            cache: None,
        }
    }

    fn dims(&self, x: &Tensor) -> Result<(usize, usize, usize)> {
        match x.shape() {
            &[n, l, d] if d == self.in_proj.in_features() => Ok((n, l, d)),
            s => Err(Error::Shape(format!("attention expects [N, L, {}], got {s:?}", self.in_proj.in_features()))),
        }
    }

    /// Attention context `[N, L, D]` and the softmax probabilities.
    fn attend(&self, qkv: &Tensor, n: usize, l: usize, d: usize) -> (Tensor, Vec<f32>) {
        let dh = d / self.heads;
        let scale = 1.0 / (dh as f32).sqrt();
        let mut ctx = Tensor::zeros(&[n, l, d]);
        let mut probs = vec![0.0f32; n * self.heads * l * l];
        let q = qkv.data();
        for s in 0..n {
            let base = s * l * 3 * d;
            for h in 0..self.heads {
                let p = &mut probs[(s * self.heads + h) * l * l..][..l * l];
                let qm = MatRef::with_stride(&q[base + h * dh..], l, dh, 3 * d);
                let km = MatRef::with_stride(&q[base + d + h * dh..], l, dh, 3 * d);
                gemm_strided(qm, km.t(), p, l, scale, 0.0);
                for row in p.chunks_mut(l) {
                    let max = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
                    let mut sum = 0.0f32;
                    for v in row.iter_mut() {
                        *v = (*v - max).exp();
                        sum += *v;
                    }
                    row.iter_mut().for_each(|v| *v /= sum);
                }
                let vm = MatRef::with_stride(&q[base + 2 * d + h * dh..], l, dh, 3 * d);
                let out = &mut ctx.data_mut()[s * l * d + h * dh..];
                gemm_strided(MatRef::new(p, l, l), vm, out, d, 1.0, 0.0);
            }
        }
        (ctx, probs)
    }
}

impl Module for MultiheadAttention {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (n, l, d) = self.dims(x)?;
        let qkv = self.in_proj.forward(x)?;
        let (ctx, _) = self.attend(&qkv, n, l, d);
        self.out_proj.forward(&ctx)
    }

    fn forward_train(&mut self, x: &Tensor, tctx: &mut TrainCtx) -> Result<Tensor> {
        let (n, l, d) = self.dims(x)?;
        let qkv = self.in_proj.forward_train(x, tctx)?;
        let (ctx, probs) = self.attend(&qkv, n, l, d);
        self.cache = Some((qkv, probs));
        self.out_proj.forward_train(&ctx, tctx)
    }

    fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let (qkv, probs) = self.cache.take().ok_or_else(|| missing_cache("attention"))?;
        let dctx = self.out_proj.backward(grad)?;
        let (n, l, d) = match dctx.shape() {
            &[n, l, d] => (n, l, d),
            s => return Err(Error::Shape(format!("attention gradient {s:?}"))),
        };
        let dh = d / self.heads;
        let scale = 1.0 / (dh as f32).sqrt();
        let mut dqkv = Tensor::zeros(&[n, l, 3 * d]);
        let q = qkv.data();
        let dc = dctx.data();
        let mut dp = vec![0.0f32; l * l];
        for s in 0..n {
            let base = s * l * 3 * d;
            for h in 0..self.heads {
                let p = &probs[(s * self.heads + h) * l * l..][..l * l];
                let pm = MatRef::new(p, l, l);
                let dcm = MatRef::with_stride(&dc[s * l * d + h * dh..], l, dh, d);
                let vm = MatRef::with_stride(&q[base + 2 * d + h * dh..], l, dh, 3 * d);
                // dV = P^T dC
                gemm_strided(pm.t(), dcm, &mut dqkv.data_mut()[base + 2 * d + h * dh..], 3 * d, 1.0, 0.0);
                // dP = dC V^T
                gemm_strided(dcm, vm.t(), &mut dp, l, 1.0, 0.0);
                for (drow, prow) in dp.chunks_mut(l).zip(p.chunks(l)) {
                    let dot: f32 = drow.iter().zip(prow).map(|(a, b)| a * b).sum();
                    for (dv, pv) in drow.iter_mut().zip(prow) {
                        *dv = pv * (*dv - dot);
                    }
                }
                let dsm = MatRef::new(&dp, l, l);
                let qm = MatRef::with_stride(&q[base + h * dh..], l, dh, 3 * d);
                let km = MatRef::with_stride(&q[base + d + h * dh..], l, dh, 3 * d);
                gemm_strided(dsm, km, &mut dqkv.data_mut()[base + h * dh..], 3 * d, scale, 0.0);
                gemm_strided(dsm.t(), qm, &mut dqkv.data_mut()[base + d + h * dh..], 3 * d, scale, 0.0);
            }
        }
        self.in_proj.backward(&dqkv)
    }

    fn visit(&self, path: &str, v: &mut dyn Visitor) {
        v.weight_layer(&join(path, "in_proj"));
        v.param(&join(path, "in_proj_weight"), &self.in_proj.weight);
        if let Some(b) = &self.in_proj.bias {
            v.param(&join(path, "in_proj_bias"), b);
        }
        self.out_proj.visit(&join(path, "out_proj"), v);
    }

    fn visit_mut(&mut self, path: &str, v: &mut dyn VisitorMut) {
        v.weight_layer(&join(path, "in_proj"));
        v.param(&join(path, "in_proj_weight"), &mut self.in_proj.weight);
        if let Some(b) = &mut self.in_proj.bias {
            v.param(&join(path, "in_proj_bias"), b);
        }
        self.out_proj.visit_mut(&join(path, "out_proj"), v);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::init;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn input_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut att = MultiheadAttention::new(8, 2, &mut rng);
        let x = init::normal(&[2, 5, 8], 1.0, &mut rng);
        let w = init::normal(&[2, 5, 8], 1.0, &mut rng);
        let mut ctx = TrainCtx { rng: ChaCha8Rng::seed_from_u64(0) };
        att.forward_train(&x, &mut ctx).unwrap();
        let dx = att.backward(&w).unwrap();
        let f = |t: &Tensor| -> f64 {
            att.forward(t).unwrap().data().iter().zip(w.data()).map(|(a, b)| (*a as f64) * (*b as f64)).sum()
        };
        let h = 1e-2;
        for i in [0, 9, 33, 79] {
            let mut xp = x.clone();
            xp.data_mut()[i] += h;
            let mut xm = x.clone();
            xm.data_mut()[i] -= h;
            let fd = (f(&xp) - f(&xm)) / (2.0 * h as f64);
            assert!((fd - dx.data()[i] as f64).abs() < 5e-3, "{fd} vs {}", dx.data()[i]);
        }
    }
}
