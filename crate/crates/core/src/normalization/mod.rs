//! Batch, group and layer normalization with explicit train/eval semantics.
//!
//! These functions are both the layers used inside the model zoo and the
//! objects of study: batch normalization keeps running statistics that are
//! fitted to the training domain, while group normalization computes its
//! statistics per sample and carries no state across batches.

mod batch;
mod group;

pub use batch::{
    batch_norm_backward, batch_norm_forward, batch_norm_inference, batch_norm_forward_cached, freeze_bn_state,
    freeze_bn_state_with, BnCache, BnState, FreezeOptions,
};
pub use group::{
    group_norm_backward, group_norm_forward, group_norm_forward_cached, layer_norm_params,
    GnCache, GnParams,
};

/// Default numerical stabiliser added to variances.
pub const DEFAULT_EPS: f32 = 1e-5;
/// Default exponential-moving-average coefficient for running statistics.
pub const DEFAULT_MOMENTUM: f32 = 0.1;
/// Default group count, matching published GN-pretrained ResNet weights.
pub const DEFAULT_GROUPS: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormMode {
    Train,
    Eval,
}
