//! VGG-16 with and without batch norm, plus the desk-scale tiny networks.

use rand::Rng;

use crate::error::Result;
use crate::nn::{AdaptiveAvgPool2d, Conv2d, Flatten, MaxPool2d, Norm, NormKind, Relu, Sequential};

const VGG16_CFG: [Option<usize>; 18] = [
    Some(64),
    Some(64),
    None,
    Some(128),
    Some(128),
    None,
    Some(256),
    Some(256),
    Some(256),
    None,
    Some(512),
    Some(512),
    Some(512),
    None,
    Some(512),
    Some(512),
    Some(512),
    None,
];

pub const VGG16_FEATURES: usize = 512 * 7 * 7;

/// torchvision `features` indexing: conv, [bn], relu per entry, maxpool on `None`.
fn conv_stack(cfg: &[Option<usize>], norm: Option<NormKind>, rng: &mut impl Rng) -> Result<Sequential> {
    let mut seq = Sequential::new();
    let mut idx = 0;
    let mut cin = 3;
    for entry in cfg {
        match entry {
            None => {
                seq.push(idx.to_string(), MaxPool2d::new(2, 2, 0));
                idx += 1;
            }
            Some(cout) => {
                let mut conv = Conv2d::new(cin, *cout, 3, 1, 1, 1, true, rng);
                if let Some(b) = conv.bias.as_mut() {
                    b.value.data_mut().fill(0.0);
                }
                seq.push(idx.to_string(), conv);
                idx += 1;
                if let Some(kind) = norm {
                    seq.push(idx.to_string(), Norm::new(kind, *cout)?);
                    idx += 1;
                }
                seq.push(idx.to_string(), Relu::new());
                idx += 1;
                cin = *cout;
            }
        }
    }
    Ok(seq)
}

/// `features`, 7x7 adaptive pooling and flattening (25088-d output).
pub fn vgg16_backbone(batch_norm: bool, rng: &mut impl Rng) -> Result<Sequential> {
    Ok(Sequential::new()
        .with("features", conv_stack(&VGG16_CFG, batch_norm.then_some(NormKind::Batch), rng)?)
        .with("avgpool", AdaptiveAvgPool2d::new(7, 7))
        .with("flatten", Flatten::new()))
}

pub const TINY_WIDTHS: [usize; 3] = [16, 32, 64];

/// Three conv/norm/relu blocks (pooling after the first two) and global
/// average pooling; 64-d output on 32x32 input.
pub fn tiny_cnn_backbone(rng: &mut impl Rng) -> Result<Sequential> {
    let [w1, w2, w3] = TINY_WIDTHS;
    let cfg = [Some(w1), None, Some(w2), None, Some(w3)];
    Ok(Sequential::new()
        .with("features", conv_stack(&cfg, Some(NormKind::Batch), rng)?)
        .with("avgpool", AdaptiveAvgPool2d::global())
        .with("flatten", Flatten::new()))
}

pub const TINY_VGG_POOL: usize = 4;

/// VGG-shaped tiny network: three conv blocks each followed by pooling,
/// flattened 4x4 maps (1024-d).
pub fn tiny_vgg_backbone(batch_norm: bool, rng: &mut impl Rng) -> Result<Sequential> {
    let [w1, w2, w3] = TINY_WIDTHS;
    let cfg = [Some(w1), None, Some(w2), None, Some(w3), None];
    Ok(Sequential::new()
        .with("features", conv_stack(&cfg, batch_norm.then_some(NormKind::Batch), rng)?)
        .with("avgpool", AdaptiveAvgPool2d::new(TINY_VGG_POOL, TINY_VGG_POOL))
        .with("flatten", Flatten::new()))
}
