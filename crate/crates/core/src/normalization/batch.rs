use super::{NormMode, DEFAULT_EPS, DEFAULT_MOMENTUM};
use crate::error::{Error, Result};
use crate::nn::{Param, Tensor};

/// Per-channel batch-normalization state.
#[derive(Debug, Clone)]
pub struct BnState {
    pub running_mean: Vec<f32>,
    pub running_var: Vec<f32>,
    pub gamma: Param,
    pub beta: Param,
    pub momentum: f32,
    pub eps: f32,
    /// When set, training-mode forwards use the running statistics and
    /// nothing in the state is updated.
    pub frozen: bool,
}

impl BnState {
    /// Fresh state: zero mean, unit variance, identity affine.
    pub fn new(channels: usize) -> Self {
        Self {
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            gamma: Param::new(Tensor::full(&[channels], 1.0)),
            beta: Param::new(Tensor::zeros(&[channels])),
            momentum: DEFAULT_MOMENTUM,
            eps: DEFAULT_EPS,
            frozen: false,
        }
    }

    pub fn channels(&self) -> usize {
        self.running_mean.len()
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.channels();
        if self.running_var.len() != c || self.gamma.numel() != c || self.beta.numel() != c {
            return Err(Error::Validation(
                "batch-norm state vectors have inconsistent lengths".into(),
            ));
        }
        if !(self.eps > 0.0) {
            return Err(Error::Validation("batch-norm eps must be positive".into()));
        }
        if !(self.momentum > 0.0 && self.momentum < 1.0) {
            return Err(Error::Validation(
                "batch-norm momentum must lie in (0, 1)".into(),
            ));
        }
        if self.running_var.iter().any(|&v| !(v >= 0.0)) {
            return Err(Error::Validation(
                "batch-norm running variance must be nonnegative".into(),
            ));
        }
        Ok(())
    }

    fn uses_batch_stats(&self, mode: NormMode) -> bool {
        mode == NormMode::Train && !self.frozen
    }
}

#[derive(Debug, Clone, Copy)]
pub struct FreezeOptions {
    /// Also exclude gamma/beta from training.
    pub affine: bool,
}

impl Default for FreezeOptions {
    fn default() -> Self {
        Self { affine: true }
    }
}

/// Freeze running statistics and the affine parameters.
pub fn freeze_bn_state(state: BnState) -> BnState {
    freeze_bn_state_with(state, FreezeOptions::default())
}

pub fn freeze_bn_state_with(mut state: BnState, options: FreezeOptions) -> BnState {
    state.frozen = true;
    if options.affine {
        state.gamma.trainable = false;
        state.beta.trainable = false;
        state.gamma.release_buffers();
        state.beta.release_buffers();
    }
    state
}

/// Values kept from a training-mode forward for the backward pass.
#[derive(Debug, Clone)]
pub struct BnCache {
    x_hat: Vec<f32>,
    inv_std: Vec<f32>,
    shape: (usize, usize, usize, usize),
    batch_stats: bool,
}

pub fn batch_norm_forward(x: &Tensor, state: &mut BnState, mode: NormMode) -> Result<Tensor> {
    if state.uses_batch_stats(mode) {
        batch_norm_forward_cached(x, state, mode).map(|(y, _)| y)
    } else {
        normalize_running(x, state)
    }
}

fn check_channels(x: &Tensor, state: &BnState) -> Result<(usize, usize, usize, usize)> {
    let dims = x.dims4()?;
    if dims.1 != state.channels() {
        return Err(Error::Shape(format!(
            "batch norm over {} channels got input with {}",
            state.channels(),
            dims.1
        )));
    }
    Ok(dims)
}

/// Normalization with the running statistics; never mutates `state`.
pub fn batch_norm_inference(x: &Tensor, state: &BnState) -> Result<Tensor> {
    normalize_running(x, state)
}

fn normalize_running(x: &Tensor, state: &BnState) -> Result<Tensor> {
    let (n, c, h, w) = check_channels(x, state)?;
    let hw = h * w;
    let mut out = Tensor::zeros(x.shape());
    let gamma = state.gamma.value.data();
    let beta = state.beta.value.data();
    let src = x.data();
    let dst = out.data_mut();
    for ch in 0..c {
        let inv_std = 1.0 / (state.running_var[ch] + state.eps).sqrt();
        let scale = gamma[ch] * inv_std;
        let shift = beta[ch] - state.running_mean[ch] * scale;
        for s in 0..n {
            let base = (s * c + ch) * hw;
            for i in base..base + hw {
                dst[i] = src[i] * scale + shift;
            }
        }
    }
    Ok(out)
}

/// Forward pass that also returns what [`batch_norm_backward`] needs.
///
/// In training mode on an unfrozen state the batch's biased variance is used
/// for normalization and the unbiased variance enters the running average.
pub fn batch_norm_forward_cached(
    x: &Tensor,
    state: &mut BnState,
    mode: NormMode,
) -> Result<(Tensor, BnCache)> {
    let (n, c, h, w) = check_channels(x, state)?;
    let hw = h * w;
    let count = n * hw;
    let batch_stats = state.uses_batch_stats(mode);
    if batch_stats && count < 2 {
        return Err(Error::Validation(format!(
            "batch statistics need at least two values per channel, got N*H*W = {count}"
        )));
    }
    let src = x.data();
    let mut x_hat = vec![0.0f32; src.len()];
    let mut inv_stds = vec![0.0f32; c];
    for ch in 0..c {
        let (mean, inv_std) = if batch_stats {
            let mut sum = 0.0f64;
            for s in 0..n {
                let base = (s * c + ch) * hw;
                sum += src[base..base + hw].iter().map(|&v| v as f64).sum::<f64>();
            }
            let mean = sum / count as f64;
            let mut sq = 0.0f64;
            for s in 0..n {
                let base = (s * c + ch) * hw;
                sq += src[base..base + hw]
                    .iter()
                    .map(|&v| {
                        let d = v as f64 - mean;
                        d * d
                    })
                    .sum::<f64>();
            }
            let var = sq / count as f64;
            let unbiased = sq / (count - 1) as f64;
            let m = state.momentum as f64;
            state.running_mean[ch] = ((1.0 - m) * state.running_mean[ch] as f64 + m * mean) as f32;
            state.running_var[ch] =
                ((1.0 - m) * state.running_var[ch] as f64 + m * unbiased) as f32;
            (mean, 1.0 / (var + state.eps as f64).sqrt())
        } else {
            (
                state.running_mean[ch] as f64,
                1.0 / (state.running_var[ch] as f64 + state.eps as f64).sqrt(),
            )
        };
        inv_stds[ch] = inv_std as f32;
        for s in 0..n {
            let base = (s * c + ch) * hw;
            for i in base..base + hw {
                x_hat[i] = ((src[i] as f64 - mean) * inv_std) as f32;
            }
        }
    }
    let gamma = state.gamma.value.data();
    let beta = state.beta.value.data();
    let mut out = Tensor::zeros(x.shape());
    let dst = out.data_mut();
    for s in 0..n {
        for ch in 0..c {
            let base = (s * c + ch) * hw;
            for i in base..base + hw {
                dst[i] = x_hat[i] * gamma[ch] + beta[ch];
            }
        }
    }
    Ok((
        out,
        BnCache {
            x_hat,
            inv_std: inv_stds,
            shape: (n, c, h, w),
            batch_stats,
        },
    ))
}

/// Gradient with respect to the input; accumulates gamma/beta gradients
/// when those parameters are trainable.
pub fn batch_norm_backward(grad: &Tensor, cache: &BnCache, state: &mut BnState) -> Result<Tensor> {
    let (n, c, h, w) = cache.shape;
    if grad.shape() != [n, c, h, w] {
        return Err(Error::Shape(format!(
            "batch-norm gradient {:?} does not match cached input {:?}",
            grad.shape(),
            [n, c, h, w]
        )));
    }
    let hw = h * w;
    let count = (n * hw) as f64;
    let g = grad.data();
    let mut dx = Tensor::zeros(grad.shape());
    let gamma = state.gamma.value.data().to_vec();
    let mut dgamma = vec![0.0f64; c];
    let mut dbeta = vec![0.0f64; c];
    {
        let dst = dx.data_mut();
        for ch in 0..c {
            let mut sum_g = 0.0f64;
            let mut sum_gx = 0.0f64;
            for s in 0..n {
                let base = (s * c + ch) * hw;
                for i in base..base + hw {
                    sum_g += g[i] as f64;
                    sum_gx += g[i] as f64 * cache.x_hat[i] as f64;
                }
            }
            dgamma[ch] = sum_gx;
            dbeta[ch] = sum_g;
            let k = gamma[ch] as f64 * cache.inv_std[ch] as f64;
            if cache.batch_stats {
                let mean_g = sum_g / count;
                let mean_gx = sum_gx / count;
                for s in 0..n {
                    let base = (s * c + ch) * hw;
                    for i in base..base + hw {
                        dst[i] = (k * (g[i] as f64 - mean_g - cache.x_hat[i] as f64 * mean_gx))
                            as f32;
                    }
                }
            } else {
                for s in 0..n {
                    let base = (s * c + ch) * hw;
                    for i in base..base + hw {
                        dst[i] = (k * g[i] as f64) as f32;
                    }
                }
            }
        }
    }
    if state.gamma.trainable {
        for (acc, d) in state.gamma.grad_mut().iter_mut().zip(&dgamma) {
            *acc += *d as f32;
        }
    }
    if state.beta.trainable {
        for (acc, d) in state.beta.grad_mut().iter_mut().zip(&dbeta) {
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
        Tensor::from_fn(shape, |_| rng.random_range(-2.0..3.0))
    }

    #[test]
    fn constant_input_normalizes_to_zero() {
        let x = Tensor::full(&[4, 3, 2, 2], 7.5);
        let mut st = BnState::new(3);
        let y = batch_norm_forward(&x, &mut st, NormMode::Train).unwrap();
        assert!(y.data().iter().all(|v| v.abs() < 1e-6));
    }

    #[test]
    fn identity_stats_in_eval_divide_by_sqrt_one_plus_eps() {
        let x = random(&[2, 3, 4, 4], 1);
        let mut st = BnState::new(3);
        let y = batch_norm_forward(&x, &mut st, NormMode::Eval).unwrap();
        let k = 1.0 / (1.0f32 + 1e-5).sqrt();
        for (a, b) in y.data().iter().zip(x.data()) {
            assert!((a - b * k).abs() < 1e-6);
        }
    }

    #[test]
    fn single_value_batch_is_rejected_in_train_mode() {
        let x = Tensor::zeros(&[1, 2, 1, 1]);
        let mut st = BnState::new(2);
        assert!(batch_norm_forward(&x, &mut st, NormMode::Train).is_err());
        assert!(batch_norm_forward(&x, &mut st, NormMode::Eval).is_ok());
        let mut frozen = freeze_bn_state(BnState::new(2));
        assert!(batch_norm_forward(&x, &mut frozen, NormMode::Train).is_ok());
    }

    #[test]
    fn running_update_uses_unbiased_variance() {
        let x = Tensor::new(&[2, 1, 1, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let mut st = BnState::new(1);
        batch_norm_forward(&x, &mut st, NormMode::Train).unwrap();
        // mean 2.5, unbiased var 5/3
        assert!((st.running_mean[0] - 0.25).abs() < 1e-6);
        assert!((st.running_var[0] - (0.9 + 0.1 * 5.0 / 3.0)).abs() < 1e-6);
    }

    #[test]
    fn channel_mismatch_is_a_shape_error() {
        let mut st = BnState::new(4);
        let err = batch_norm_forward(&Tensor::zeros(&[2, 3, 2, 2]), &mut st, NormMode::Eval);
        assert!(matches!(err, Err(Error::Shape(_))));
    }

    fn loss(y: &Tensor, w: &Tensor) -> f64 {
        y.data()
            .iter()
            .zip(w.data())
            .map(|(a, b)| *a as f64 * *b as f64)
            .sum()
    }

    #[test]
    fn backward_matches_finite_differences() {
        let x = random(&[3, 2, 2, 3], 5);
        let w = random(&[3, 2, 2, 3], 6);
        let mut st = BnState::new(2);
        st.gamma.value.data_mut().copy_from_slice(&[1.3, -0.7]);
        let (_, cache) = batch_norm_forward_cached(&x, &mut st.clone(), NormMode::Train).unwrap();
        let dx = batch_norm_backward(&w, &cache, &mut st).unwrap();
        let h = 1e-2f32;
        for i in [0usize, 5, 17, 30] {
            let mut xp = x.clone();
            xp.data_mut()[i] += h;
            let mut xm = x.clone();
            xm.data_mut()[i] -= h;
            let yp = batch_norm_forward(&xp, &mut BnState::new(2).with_gamma(&[1.3, -0.7]), NormMode::Train).unwrap();
            let ym = batch_norm_forward(&xm, &mut BnState::new(2).with_gamma(&[1.3, -0.7]), NormMode::Train).unwrap();
            let fd = (loss(&yp, &w) - loss(&ym, &w)) / (2.0 * h as f64);
            assert!((fd - dx.data()[i] as f64).abs() < 2e-3, "{fd} vs {}", dx.data()[i]);
        }
        // gamma gradient = sum(g * x_hat)
        assert!(st.gamma.grad().is_some());
    }

    impl BnState {
        fn with_gamma(mut self, g: &[f32]) -> Self {
            self.gamma.value.data_mut().copy_from_slice(g);
            self
        }
    }
}
