//! Network variants and model surgery.
//!
//! Architectures follow torchvision parameter naming so that published
//! ImageNet weights converted to safetensors load without renaming.

mod model;
mod reported;
mod resnet;
mod spec;
mod transformer;
mod vgg;
mod weights;

pub use model::{
    add_vgg_fc_head, apply_freeze_policy, build_model, pretrained_file, replace_bn_with_gn, FreezeSummary, Model,
    NormCounts, GN_RESNET50_URL,
};
pub use reported::{reported, reported_range, ReportSource, Reported, REPORTED};
pub use resnet::{RESNET50_BLOCKS, RESNET50_FEATURES};
pub use spec::{
    BaseNet, HeadKind, ModelSpec, NormStrategy, Tier, VariantId, DESK_FC_HIDDEN, DESK_GROUPS, DESK_LAST_K,
    FULL_FC_HIDDEN, HEAD_DROPOUT,
};
pub use vgg::TINY_WIDTHS;
pub use weights::TensorStore;
