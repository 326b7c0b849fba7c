use super::DEFAULT_EPS;
use crate::error::{Error, Result};
use crate::nn::{Param, Tensor};

/// Group-normalization parameters. There are no running statistics: the
/// layer behaves identically during training and evaluation.
#[derive(Debug, Clone)]
pub struct GnParams {
    num_groups: usize,
    pub gamma: Param,
    pub beta: Param,
    pub eps: f32,
}

impl GnParams {
    /// Identity-affine parameters; fails when `channels` is not divisible by
    /// `num_groups`.
    pub fn new(channels: usize, num_groups: usize) -> Result<Self> {
        if num_groups == 0 || channels % num_groups != 0 {
            return Err(Error::Validation(format!(
                "{channels} channels cannot be split into {num_groups} groups"
            )));
        }
        Ok(Self {
            num_groups,
            gamma: Param::new(Tensor::full(&[channels], 1.0)),
            beta: Param::new(Tensor::zeros(&[channels])),
            eps: DEFAULT_EPS,
        })
    }

    pub fn num_groups(&self) -> usize {
        self.num_groups
    }

    pub fn channels(&self) -> usize {
        self.gamma.numel()
    }
}

/// Layer normalization over every non-batch axis: group norm with one group.
pub fn layer_norm_params(channels: usize) -> GnParams {
    GnParams::new(channels, 1).expect("one group always divides")
}

#[derive(Debug, Clone)]
pub struct GnCache {
    x_hat: Vec<f32>,
    inv_std: Vec<f32>,
    shape: (usize, usize, usize, usize),
}

pub fn group_norm_forward(x: &Tensor, params: &GnParams) -> Result<Tensor> {
    group_norm_forward_cached(x, params).map(|(y, _)| y)
}

pub fn group_norm_forward_cached(x: &Tensor, params: &GnParams) -> Result<(Tensor, GnCache)> {
    let (n, c, h, w) = x.dims4()?;
    if c != params.channels() {
        return Err(Error::Shape(format!(
            "group norm over {} channels got input with {c}",
            params.channels()
        )));
    }
    let g = params.num_groups;
    let slab = c / g * h * w;
    let hw = h * w;
    let src = x.data();
    let gamma = params.gamma.value.data();
    let beta = params.beta.value.data();
    let mut out = Tensor::zeros(x.shape());
    let mut x_hat = vec![0.0f32; src.len()];
    let mut inv_std = vec![0.0f32; n * g];
    let dst = out.data_mut();
    for (k, chunk) in src.chunks(slab.max(1)).enumerate().take(n * g) {
        let mean = chunk.iter().map(|&v| v as f64).sum::<f64>() / slab as f64;
        let var = chunk
            .iter()
            .map(|&v| {
                let d = v as f64 - mean;
                d * d
            })
            .sum::<f64>()
            / slab as f64;
        let istd = 1.0 / (var + params.eps as f64).sqrt();
        inv_std[k] = istd as f32;
        let base = k * slab;
        let first_channel = (k % g) * (c / g);
        for (j, &v) in chunk.iter().enumerate() {
            let ch = first_channel + j / hw;
            let xh = ((v as f64 - mean) * istd) as f32;
            x_hat[base + j] = xh;
            dst[base + j] = xh * gamma[ch] + beta[ch];
        }
    }
    Ok((
        out,
        GnCache {
            x_hat,
            inv_std,
            shape: (n, c, h, w),
        },
    ))
}

pub fn group_norm_backward(grad: &Tensor, cache: &GnCache, params: &mut GnParams) -> Result<Tensor> {
    let (n, c, h, w) = cache.shape;
    if grad.shape() != [n, c, h, w] {
        return Err(Error::Shape(format!(
            "group-norm gradient {:?} does not match cached input {:?}",
            grad.shape(),
            [n, c, h, w]
        )));
    }
    let g = params.num_groups;
    let hw = h * w;
    let slab = c / g * hw;
    let gamma = params.gamma.value.data().to_vec();
    let gd = grad.data();
    let mut dx = Tensor::zeros(grad.shape());
    let mut dgamma = vec![0.0f64; c];
    let mut dbeta = vec![0.0f64; c];
    let dst = dx.data_mut();
    for k in 0..n * g {
        let base = k * slab;
        let first_channel = (k % g) * (c / g);
        let mut sum_d = 0.0f64;
        let mut sum_dx = 0.0f64;
        for j in 0..slab {
            let ch = first_channel + j / hw;
            let gi = gd[base + j] as f64;
            let xh = cache.x_hat[base + j] as f64;
            dgamma[ch] += gi * xh;
            dbeta[ch] += gi;
            let d = gi * gamma[ch] as f64;
            sum_d += d;
            sum_dx += d * xh;
        }
        let mean_d = sum_d / slab as f64;
        let mean_dx = sum_dx / slab as f64;
        let istd = cache.inv_std[k] as f64;
        for j in 0..slab {
            let ch = first_channel + j / hw;
            let d = gd[base + j] as f64 * gamma[ch] as f64;
            let xh = cache.x_hat[base + j] as f64;
            dst[base + j] = (istd * (d - mean_d - xh * mean_dx)) as f32;
        }
    }
    if params.gamma.trainable {
        for (acc, d) in params.gamma.grad_mut().iter_mut().zip(&dgamma) {
            *acc += *d as f32;
        }
    }
    if params.beta.trainable {
        for (acc, d) in params.beta.grad_mut().iter_mut().zip(&dbeta) {
            *acc += *d as f32;
        }
    }
    Ok(dx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(shape, |_| rng.random_range(-1.0..2.0))
    }

    #[test]
    fn indivisible_channels_fail_at_construction() {
        assert!(GnParams::new(10, 4).is_err());
        assert!(GnParams::new(8, 0).is_err());
        assert!(GnParams::new(8, 4).is_ok());
    }

    #[test]
    fn constant_input_normalizes_to_zero() {
        let p = GnParams::new(4, 2).unwrap();
        let y = group_norm_forward(&Tensor::full(&[2, 4, 3, 3], -4.0), &p).unwrap();
        assert!(y.data().iter().all(|v| v.abs() < 1e-6));
    }

    #[test]
    fn backward_matches_finite_differences() {
        let x = random(&[2, 4, 2, 3], 3);
        let w = random(&[2, 4, 2, 3], 4);
        let mut p = GnParams::new(4, 2).unwrap();
        p.gamma.value.data_mut().copy_from_slice(&[0.5, 1.5, -1.0, 2.0]);
        let (_, cache) = group_norm_forward_cached(&x, &p).unwrap();
        let dx = group_norm_backward(&w, &cache, &mut p).unwrap();
        let loss = |t: &Tensor| -> f64 {
            let y = group_norm_forward(t, &p).unwrap();
            y.data().iter().zip(w.data()).map(|(a, b)| (*a as f64) * (*b as f64)).sum()
        };
        let h = 1e-2f32;
        for i in [0usize, 7, 20, 47] {
            let mut xp = x.clone();
            xp.data_mut()[i] += h;
            let mut xm = x.clone();
            xm.data_mut()[i] -= h;
            let fd = (loss(&xp) - loss(&xm)) / (2.0 * h as f64);
            assert!((fd - dx.data()[i] as f64).abs() < 2e-3, "{fd} vs {}", dx.data()[i]);
        }
    }
}
