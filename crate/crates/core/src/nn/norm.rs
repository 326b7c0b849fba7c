//! Layer wrappers around the functions in [`crate::normalization`].

use super::{join, missing_cache, Module, Tensor, TrainCtx, Visitor, VisitorMut};
use crate::error::Result;
use crate::normalization::{
    batch_norm_backward, batch_norm_forward_cached, batch_norm_inference, group_norm_backward, group_norm_forward,
    group_norm_forward_cached, layer_norm_params, BnCache, BnState, GnCache, GnParams, NormMode,
};

#[derive(Debug, Clone)]
pub struct BatchNorm2d {
    pub state: BnState,
    cache: Option<BnCache>,
}

impl BatchNorm2d {
    pub fn new(channels: usize) -> Self {
        Self::from_state(BnState::new(channels))
    }

    pub fn from_state(state: BnState) -> Self {
        Self { state, cache: None }
    }
}

#[derive(Debug, Clone)]
pub struct GroupNorm {
    pub params: GnParams,
    cache: Option<GnCache>,
}

impl GroupNorm {
    pub fn new(channels: usize, groups: usize) -> Result<Self> {
        Ok(Self::from_params(GnParams::new(channels, groups)?))
    }

    pub fn from_params(params: GnParams) -> Self {
        Self {
            params,
            cache: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormKind {
    Batch,
    Group(usize),
}

/// A normalization slot inside a convolutional network. Model surgery swaps
/// the variant in place.
#[derive(Debug, Clone)]
pub enum Norm {
    Batch(BatchNorm2d),
    Group(GroupNorm),
}

impl Norm {
    pub fn new(kind: NormKind, channels: usize) -> Result<Self> {
        Ok(match kind {
            NormKind::Batch => Norm::Batch(BatchNorm2d::new(channels)),
            NormKind::Group(g) => Norm::Group(GroupNorm::new(channels, g)?),
        })
    }

    pub fn channels(&self) -> usize {
        match self {
            Norm::Batch(b) => b.state.channels(),
            Norm::Group(g) => g.params.channels(),
        }
    }

    pub fn is_batch(&self) -> bool {
        matches!(self, Norm::Batch(_))
    }
}

impl Module for Norm {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        match self {
            Norm::Batch(b) => batch_norm_inference(x, &b.state),
            Norm::Group(g) => group_norm_forward(x, &g.params),
        }
    }

    fn forward_train(&mut self, x: &Tensor, _ctx: &mut TrainCtx) -> Result<Tensor> {
        match self {
            Norm::Batch(b) => {
                let (y, cache) = batch_norm_forward_cached(x, &mut b.state, NormMode::Train)?;
                b.cache = Some(cache);
                Ok(y)
            }
            Norm::Group(g) => {
                let (y, cache) = group_norm_forward_cached(x, &g.params)?;
                g.cache = Some(cache);
                Ok(y)
            }
        }
    }

    fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        match self {
            Norm::Batch(b) => {
                let cache = b.cache.take().ok_or_else(|| missing_cache("batch_norm"))?;
                batch_norm_backward(grad, &cache, &mut b.state)
            }
            Norm::Group(g) => {
                let cache = g.cache.take().ok_or_else(|| missing_cache("group_norm"))?;
                group_norm_backward(grad, &cache, &mut g.params)
            }
        }
    }

    fn visit(&self, path: &str, v: &mut dyn Visitor) {
        v.norm(path, self);
        match self {
            Norm::Batch(b) => {
                v.param(&join(path, "weight"), &b.state.gamma);
                v.param(&join(path, "bias"), &b.state.beta);
                v.buffer(&join(path, "running_mean"), &b.state.running_mean);
                v.buffer(&join(path, "running_var"), &b.state.running_var);
            }
            Norm::Group(g) => {
                v.param(&join(path, "weight"), &g.params.gamma);
                v.param(&join(path, "bias"), &g.params.beta);
            }
        }
    }

    fn visit_mut(&mut self, path: &str, v: &mut dyn VisitorMut) {
        v.norm(path, self);
        match self {
            Norm::Batch(b) => {
                v.param(&join(path, "weight"), &mut b.state.gamma);
                v.param(&join(path, "bias"), &mut b.state.beta);
                v.buffer(&join(path, "running_mean"), &mut b.state.running_mean);
                v.buffer(&join(path, "running_var"), &mut b.state.running_var);
            }
            Norm::Group(g) => {
                v.param(&join(path, "weight"), &mut g.params.gamma);
                v.param(&join(path, "bias"), &mut g.params.beta);
            }
        }
    }
}

/// Layer norm over the last axis of a `[.., D]` tensor.
#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub params: GnParams,
    cache: Option<GnCache>,
}

impl LayerNorm {
    pub fn new(dim: usize, eps: f32) -> Self {
        let mut params = layer_norm_params(dim);
        params.eps = eps;
        Self {
            params,
            cache: None,
        }
    }

    fn as_4d(&self, x: &Tensor) -> Result<Tensor> {
        let (rows, cols) = x.rows_cols();
        x.clone().reshape(&[rows, cols, 1, 1])
    }
}

impl Module for LayerNorm {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        group_norm_forward(&self.as_4d(x)?, &self.params)?.reshape(x.shape())
    }

    fn forward_train(&mut self, x: &Tensor, _ctx: &mut TrainCtx) -> Result<Tensor> {
        let (y, cache) = group_norm_forward_cached(&self.as_4d(x)?, &self.params)?;
        self.cache = Some(cache);
        y.reshape(x.shape())
    }

    fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let cache = self.cache.take().ok_or_else(|| missing_cache("layer_norm"))?;
        let g4 = self.as_4d(grad)?;
        group_norm_backward(&g4, &cache, &mut self.params)?.reshape(grad.shape())
    }

    fn visit(&self, path: &str, v: &mut dyn Visitor) {
        v.param(&join(path, "weight"), &self.params.gamma);
        v.param(&join(path, "bias"), &self.params.beta);
    }

    fn visit_mut(&mut self, path: &str, v: &mut dyn VisitorMut) {
        v.param(&join(path, "weight"), &mut self.params.gamma);
        v.param(&join(path, "bias"), &mut self.params.beta);
    }
}

/// Layer norm over the channel axis of an `N x C x H x W` tensor, applied
/// independently at every spatial position.
#[derive(Debug, Clone)]
pub struct ChannelLayerNorm {
    inner: LayerNorm,
}

impl ChannelLayerNorm {
    pub fn new(channels: usize, eps: f32) -> Self {
        Self {
            inner: LayerNorm::new(channels, eps),
        }
    }
}

fn to_channels_last(x: &Tensor) -> Tensor {
    x.permute(&[0, 2, 3, 1])
}

fn to_channels_first(x: &Tensor) -> Tensor {
    x.permute(&[0, 3, 1, 2])
}

impl Module for ChannelLayerNorm {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        x.dims4()?;
        Ok(to_channels_first(&self.inner.forward(&to_channels_last(x))?))
    }

    fn forward_train(&mut self, x: &Tensor, ctx: &mut TrainCtx) -> Result<Tensor> {
        x.dims4()?;
        Ok(to_channels_first(&self.inner.forward_train(&to_channels_last(x), ctx)?))
    }

    fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        Ok(to_channels_first(&self.inner.backward(&to_channels_last(grad))?))
    }

    fn visit(&self, path: &str, v: &mut dyn Visitor) {
        self.inner.visit(path, v);
    }

    fn visit_mut(&mut self, path: &str, v: &mut dyn VisitorMut) {
        self.inner.visit_mut(path, v);
    }
}
