//! Parameter initialisers. All draw from a caller-supplied seeded generator.

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use super::Tensor;

/// He-normal with fan-out scaling, as used for ResNet/VGG convolutions.
pub fn kaiming_normal_fan_out(shape: &[usize], rng: &mut impl Rng) -> Tensor {
    let fan_out = shape[0] * shape[2..].iter().product::<usize>();
    let std = (2.0 / fan_out.max(1) as f32).sqrt();
    normal(shape, std, rng)
}

pub fn normal(shape: &[usize], std: f32, rng: &mut impl Rng) -> Tensor {
    let d = Normal::new(0.0f32, std).expect("finite std");
    Tensor::from_fn(shape, |_| d.sample(rng))
}

/// Truncated normal on `[-2 std, 2 std]` by rejection.
pub fn trunc_normal(shape: &[usize], std: f32, rng: &mut impl Rng) -> Tensor {
    let d = Normal::new(0.0f32, std).expect("finite std");
    Tensor::from_fn(shape, |_| loop {
        let v = d.sample(rng);
        if v.abs() <= 2.0 * std {
            break v;
        }
    })
}

/// `U(-bound, bound)` with `bound = 1 / sqrt(fan_in)`.
pub fn uniform_fan_in(shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> Tensor {
    let bound = 1.0 / (fan_in.max(1) as f32).sqrt();
    let d = Uniform::new_inclusive(-bound, bound).expect("valid bounds");
    Tensor::from_fn(shape, |_| d.sample(rng))
}
