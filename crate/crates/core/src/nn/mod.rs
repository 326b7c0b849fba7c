//! Minimal CPU neural-network engine: tensors, layers with hand-written
//! backward passes, cross-entropy loss and AdamW.
//!
//! Every layer has two forward paths. [`Module::forward`] is the inference
//! path: it takes `&self`, caches nothing and never mutates state, so a model
//! in evaluation mode can be shared across threads. [`Module::forward_train`]
//! caches what [`Module::backward`] needs and may update running statistics.

mod activation;
mod attention;
mod conv;
mod dropout;
mod gemm;
pub mod init;
mod linear;
mod loss;
mod norm;
mod optim;
mod param;
mod pool;
mod sequential;
mod tensor;

pub use activation::{Gelu, Relu};
pub use attention::MultiheadAttention;
pub use conv::Conv2d;
pub use dropout::Dropout;
pub use gemm::{gemm, gemm_strided, MatRef};
pub use linear::Linear;
pub use loss::{cross_entropy, CrossEntropy};
pub use norm::{BatchNorm2d, ChannelLayerNorm, GroupNorm, LayerNorm, Norm, NormKind};
pub use optim::{AdamW, AdamWConfig};
pub use param::Param;
pub use pool::{AdaptiveAvgPool2d, Flatten, MaxPool2d};
pub use sequential::Sequential;
pub use tensor::Tensor;

use rand_chacha::ChaCha8Rng;

use crate::error::Result;

/// Randomness consumed by training-mode layers (dropout).
pub struct TrainCtx {
    pub rng: ChaCha8Rng,
}

pub trait Module: Send + Sync {
    fn forward(&self, x: &Tensor) -> Result<Tensor>;
    fn forward_train(&mut self, x: &Tensor, ctx: &mut TrainCtx) -> Result<Tensor>;
    fn backward(&mut self, grad: &Tensor) -> Result<Tensor>;
    fn visit(&self, path: &str, v: &mut dyn Visitor);
    fn visit_mut(&mut self, path: &str, v: &mut dyn VisitorMut);
}

/// Read-only walk over a module tree in forward (topological) order.
pub trait Visitor {
    /// Called once per convolution / fully-connected layer, before its params.
    fn weight_layer(&mut self, _path: &str) {}
    fn param(&mut self, _path: &str, _p: &Param) {}
    fn buffer(&mut self, _path: &str, _b: &[f32]) {}
    /// Called for every normalization slot before its params and buffers.
    fn norm(&mut self, _path: &str, _n: &Norm) {}
}

pub trait VisitorMut {
    fn weight_layer(&mut self, _path: &str) {}
    fn param(&mut self, _path: &str, _p: &mut Param) {}
    fn buffer(&mut self, _path: &str, _b: &mut Vec<f32>) {}
    /// The visitor may replace the norm in place; the walk then continues
    /// into the replacement.
    fn norm(&mut self, _path: &str, _n: &mut Norm) {}
}

/// `prefix.name`, or `name` at the root.
pub fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else if name.is_empty() {
        prefix.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Zero every gradient buffer in the tree.
pub fn zero_grad(m: &mut dyn Module) {
    struct Z;
    impl VisitorMut for Z {
        fn param(&mut self, _: &str, p: &mut Param) {
            p.zero_grad();
        }
    }
    m.visit_mut("", &mut Z);
}

/// Total number of scalar parameters.
pub fn param_count(m: &dyn Module) -> usize {
    struct C(usize);
    impl Visitor for C {
        fn param(&mut self, _: &str, p: &Param) {
            self.0 += p.numel();
        }
    }
    let mut c = C(0);
    m.visit("", &mut c);
    c.0
}

pub(crate) fn missing_cache(layer: &str) -> crate::error::Error {
    crate::error::Error::Validation(format!("{layer}: backward called without a training forward"))
}
