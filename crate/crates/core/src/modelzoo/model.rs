use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::resnet::{resnet50_backbone, RESNET50_FEATURES};
use super::spec::{BaseNet, HeadKind, ModelSpec, NormStrategy, HEAD_DROPOUT};
use super::transformer::{convnext_tiny_backbone, VitBackbone, CONVNEXT_TINY_DIM, VIT_B16_DIM};
use super::vgg::{tiny_cnn_backbone, tiny_vgg_backbone, vgg16_backbone, TINY_VGG_POOL, TINY_WIDTHS, VGG16_FEATURES};
use super::weights::TensorStore;
use crate::error::{Error, Result};
use crate::nn::{
    join, Dropout, GroupNorm, Linear, Module, Norm, NormKind, Param, Relu, Sequential, Tensor, TrainCtx, Visitor,
    VisitorMut,
};
use crate::normalization::freeze_bn_state;

/// Where the GN-pretrained ResNet-50 weights are published.
pub const GN_RESNET50_URL: &str = "https://dl.fbaipublicfiles.com/detectron/ImageNetPretrained/47261647/R-50-GN.pkl";

const CHECKPOINT_SPEC_KEY: &str = "model_spec";
const CHECKPOINT_FORMAT_KEY: &str = "format";
const CHECKPOINT_FORMAT: &str = "wbc-bench-checkpoint-1";

/// A built network: backbone, optional hidden fully-connected stack and the
/// classifier. The feature tap is the classifier input.
pub struct Model {
    spec: ModelSpec,
    backbone: Box<dyn Module>,
    hidden: Option<(String, Sequential)>,
    classifier: Linear,
    classifier_path: String,
    hidden_path: String,
    backbone_tap: String,
}

impl Model {
    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    /// Width of the penultimate activation.
    pub fn feature_dim(&self) -> usize {
        self.classifier.in_features()
    }

    /// Name of the layer whose output [`Model::extract_features`] returns.
    pub fn feature_tap(&self) -> String {
        match &self.hidden {
            Some((path, _)) => join(path, "4"),
            None => self.backbone_tap.clone(),
        }
    }

    pub fn classifier_path(&self) -> &str {
        &self.classifier_path
    }

    pub fn has_fc_head(&self) -> bool {
        self.hidden.is_some()
    }

    /// Penultimate activations `[N, D]` in evaluation mode.
    pub fn extract_features(&self, images: &Tensor) -> Result<Tensor> {
        let f = self.backbone.forward(images)?;
        match &self.hidden {
            Some((_, h)) => h.forward(&f),
            None => Ok(f),
        }
    }

    /// Paths of every conv / fully-connected layer in forward order.
    pub fn weight_layers(&self) -> Vec<String> {
        struct W(Vec<String>);
        impl Visitor for W {
            fn weight_layer(&mut self, path: &str) {
                self.0.push(path.to_string());
            }
        }
        let mut w = W(Vec::new());
        self.visit("", &mut w);
        w.0
    }

    /// `(path, trainable)` for every parameter in forward order.
    pub fn trainable_mask(&self) -> Vec<(String, bool)> {
        struct M(Vec<(String, bool)>);
        impl Visitor for M {
            fn param(&mut self, path: &str, p: &Param) {
                self.0.push((path.to_string(), p.trainable));
            }
        }
        let mut m = M(Vec::new());
        self.visit("", &mut m);
        m.0
    }

    pub fn count_norms(&self) -> NormCounts {
        struct C(NormCounts);
        impl Visitor for C {
            fn norm(&mut self, _: &str, n: &Norm) {
                match n {
                    Norm::Batch(b) => {
                        self.0.batch += 1;
                        if b.state.frozen {
                            self.0.frozen_batch += 1;
                        }
                    }
                    Norm::Group(_) => self.0.group += 1,
                }
            }
        }
        let mut c = C(NormCounts::default());
        self.visit("", &mut c);
        c.0
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        let mut store = TensorStore::from_module(self);
        store.metadata.insert(CHECKPOINT_SPEC_KEY.into(), self.spec.to_json()?);
        store.metadata.insert(CHECKPOINT_FORMAT_KEY.into(), CHECKPOINT_FORMAT.into());
        store.write(path)
    }

    pub fn load_checkpoint(path: &Path) -> Result<Model> {
        let store = TensorStore::read(path)?;
        let text = store.metadata.get(CHECKPOINT_SPEC_KEY).ok_or_else(|| {
            Error::Checkpoint(format!("{} has no embedded model spec", path.display()))
        })?;
        let spec = ModelSpec::from_json(text)?;
        let mut model = build_architecture(&spec, 0)?;
        store.load_into(&mut model, &path.display().to_string(), &|_| false)?;
        Ok(model)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct NormCounts {
    pub batch: usize,
    pub frozen_batch: usize,
    pub group: usize,
}

impl Module for Model {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.classifier.forward(&self.extract_features(x)?)
    }

    fn forward_train(&mut self, x: &Tensor, ctx: &mut TrainCtx) -> Result<Tensor> {
        let mut f = self.backbone.forward_train(x, ctx)?;
        if let Some((_, h)) = &mut self.hidden {
            f = h.forward_train(&f, ctx)?;
        }
        self.classifier.forward_train(&f, ctx)
    }

    fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let mut g = self.classifier.backward(grad)?;
        if let Some((_, h)) = &mut self.hidden {
            g = h.backward(&g)?;
        }
        self.backbone.backward(&g)
    }

    fn visit(&self, path: &str, v: &mut dyn Visitor) {
        self.backbone.visit(path, v);
        if let Some((p, h)) = &self.hidden {
            h.visit(&join(path, p), v);
        }
        self.classifier.visit(&join(path, &self.classifier_path), v);
    }

    fn visit_mut(&mut self, path: &str, v: &mut dyn VisitorMut) {
        self.backbone.visit_mut(path, v);
        if let Some((p, h)) = &mut self.hidden {
            h.visit_mut(&join(path, p), v);
        }
        self.classifier.visit_mut(&join(path, &self.classifier_path), v);
    }
}

/// File expected in the weights cache for a pretrained base.
pub fn pretrained_file(base: BaseNet, norm: NormStrategy) -> Option<&'static str> {
    match (base, norm) {
        (BaseNet::Resnet50, NormStrategy::ReplaceBnWithGn) => Some("resnet50_gn.safetensors"),
        (BaseNet::Resnet50, _) => Some("resnet50.safetensors"),
        (BaseNet::Vgg16, _) => Some("vgg16.safetensors"),
        (BaseNet::Vgg16Bn, _) => Some("vgg16_bn.safetensors"),
        (BaseNet::VitB16, _) => Some("vit_b16.safetensors"),
        (BaseNet::ConvnextTiny, _) => Some("convnext_tiny.safetensors"),
        _ => None,
    }
}

fn missing_weights(file: &str, dir: Option<&Path>) -> Error {
    let origin = if file == "resnet50_gn.safetensors" {
        format!("the group-norm ResNet-50 published at {GN_RESNET50_URL}")
    } else {
        "the torchvision IMAGENET1K_V1 weights of the same architecture".to_string()
    };
    let location = match dir {
        Some(d) => format!("{} was not found", d.join(file).display()),
        None => format!("no --weights-cache directory given (need {file})"),
    };
    Error::MissingWeights(format!(
        "{location}. Convert {origin} to safetensors with torchvision parameter names and place it in the weights cache \
         (see the README section \"Pretrained weights\")"
    ))
}

fn bare(spec: &ModelSpec, rng: &mut ChaCha8Rng) -> Result<Model> {
    let (backbone, dim, tap, hidden_path, classifier_path): (Box<dyn Module>, usize, &str, &str, &str) = match spec.base
    {
        BaseNet::Resnet50 => (Box::new(resnet50_backbone(NormKind::Batch, rng)?), RESNET50_FEATURES, "avgpool", "fc_hidden", "fc"),
        BaseNet::Vgg16 | BaseNet::Vgg16Bn => (
            Box::new(vgg16_backbone(spec.base == BaseNet::Vgg16Bn, rng)?),
            VGG16_FEATURES,
            "avgpool",
            "classifier",
            "classifier.6",
        ),
        BaseNet::VitB16 => (Box::new(VitBackbone::new(rng)), VIT_B16_DIM, "encoder.ln", "", "heads.head"),
        BaseNet::ConvnextTiny => (Box::new(convnext_tiny_backbone(rng)), CONVNEXT_TINY_DIM, "classifier.0", "", "classifier.2"),
        BaseNet::TinyCnn => (Box::new(tiny_cnn_backbone(rng)?), TINY_WIDTHS[2], "avgpool", "fc_hidden", "fc"),
        BaseNet::TinyVgg | BaseNet::TinyVggBn => (
            Box::new(tiny_vgg_backbone(spec.base == BaseNet::TinyVggBn, rng)?),
            TINY_WIDTHS[2] * TINY_VGG_POOL * TINY_VGG_POOL,
            "avgpool",
            "classifier",
            "classifier.6",
        ),
    };
    // a plain linear classifier on a VGG body sits where the first FC would
    let classifier_path = if spec.head == HeadKind::Linear && hidden_path == "classifier" {
        "classifier.0"
    } else {
        classifier_path
    };
    Ok(Model {
        spec: spec.clone(),
        backbone,
        hidden: None,
        classifier: Linear::new(dim, spec.num_classes, rng),
        classifier_path: classifier_path.to_string(),
        hidden_path: hidden_path.to_string(),
        backbone_tap: tap.to_string(),
    })
}

/// Structure only: random init, surgery and freeze policy applied, no
/// pretrained weights loaded.
fn build_architecture(spec: &ModelSpec, seed: u64) -> Result<Model> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = bare(spec, &mut rng)?;
    if spec.head == HeadKind::VggFc {
        add_vgg_fc_head_with(&mut model, spec.fc_hidden, &mut rng)?;
    }
    if spec.norm_strategy == NormStrategy::ReplaceBnWithGn {
        replace_bn_with_gn(&mut model, spec.num_groups)?;
    }
    apply_freeze_policy(&mut model)?;
    model.spec = spec.clone();
    Ok(model)
}

/// Build `spec`. Pretrained weights come from `weights_cache`; the classifier
/// (and a newly inserted FC head) keep their fresh initialisation, drawn
/// from `seed`.
pub fn build_model(spec: &ModelSpec, weights_cache: Option<&Path>, seed: u64) -> Result<Model> {
    let mut model = build_architecture(spec, seed)?;
    if spec.pretrained {
        let file = pretrained_file(spec.base, spec.norm_strategy)
            .ok_or_else(|| Error::Validation(format!("{:?} has no pretrained weights", spec.base)))?;
        let path: PathBuf = match weights_cache {
            Some(d) if d.join(file).is_file() => d.join(file),
            _ => return Err(missing_weights(file, weights_cache)),
        };
        let store = TensorStore::read(&path)?;
        let classifier = model.classifier_path.clone();
        let new_hidden = match spec.base {
            BaseNet::Resnet50 => Some(model.hidden_path.clone()),
            _ => None,
        };
        let skip = |p: &str| {
            p.starts_with(&format!("{classifier}."))
                || new_hidden.as_ref().is_some_and(|h| p.starts_with(&format!("{h}.")))
        };
        let n = store.load_into(&mut model, &path.display().to_string(), &skip)?;
        log::info!("loaded {n} pretrained tensors from {}", path.display());
    }
    Ok(model)
}

/// Swap every batch-norm layer for group norm with `num_groups` groups.
/// Returns the number of swapped layers; fails before modifying anything
/// when some layer's channel count is not divisible.
pub fn replace_bn_with_gn(model: &mut Model, num_groups: usize) -> Result<usize> {
    struct Check {
        groups: usize,
        bad: Vec<String>,
    }
    impl Visitor for Check {
        fn norm(&mut self, path: &str, n: &Norm) {
            if n.is_batch() && (self.groups == 0 || n.channels() % self.groups != 0) {
                self.bad.push(format!("{path} ({} channels)", n.channels()));
            }
        }
    }
    let mut check = Check {
        groups: num_groups,
        bad: Vec::new(),
    };
    model.visit("", &mut check);
    if !check.bad.is_empty() {
        return Err(Error::Validation(format!(
            "cannot split into {num_groups} groups: {}",
            check.bad.join(", ")
        )));
    }
    struct Swap(usize, usize);
    impl VisitorMut for Swap {
        fn norm(&mut self, _: &str, n: &mut Norm) {
            if n.is_batch() {
                *n = Norm::Group(GroupNorm::new(n.channels(), self.1).expect("checked divisibility"));
                self.0 += 1;
            }
        }
    }
    let mut swap = Swap(0, num_groups);
    model.visit_mut("", &mut swap);
    if swap.0 > 0 {
        model.spec.norm_strategy = NormStrategy::ReplaceBnWithGn;
        model.spec.num_groups = num_groups;
    }
    Ok(swap.0)
}

/// Replace the linear classifier by two hidden layers (ReLU, dropout 0.5)
/// and a fresh classifier.
pub fn add_vgg_fc_head(model: &mut Model, hidden: usize, seed: u64) -> Result<()> {
    add_vgg_fc_head_with(model, hidden, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn add_vgg_fc_head_with(model: &mut Model, hidden: usize, rng: &mut ChaCha8Rng) -> Result<()> {
    if model.hidden.is_some() {
        return Err(Error::Validation("model already has a VGG_FC head".into()));
    }
    if model.hidden_path.is_empty() {
        return Err(Error::Validation(format!("{:?} does not support a VGG_FC head", model.spec.base)));
    }
    let dim = model.feature_dim();
    let classes = model.classifier.out_features();
    let stack = Sequential::new()
        .with("0", Linear::new(dim, hidden, rng))
        .with("1", Relu::new())
        .with("2", Dropout::new(HEAD_DROPOUT))
        .with("3", Linear::new(hidden, hidden, rng))
        .with("4", Relu::new())
        .with("5", Dropout::new(HEAD_DROPOUT));
    model.hidden = Some((model.hidden_path.clone(), stack));
    model.classifier = Linear::new(hidden, classes, rng);
    if model.classifier_path == "classifier.0" {
        model.classifier_path = "classifier.6".into();
    }
    model.spec.head = HeadKind::VggFc;
    model.spec.fc_hidden = hidden;
    Ok(())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FreezeSummary {
    pub frozen_bn: usize,
    pub trainable_layers: usize,
    pub trainable_params: usize,
    pub frozen_params: usize,
}

/// Freeze batch norm (statistics and affine) for `FREEZE_BN`, and when
/// `trainable_last_k = k` exclude everything but the last k conv/FC layers
/// from training, the classifier counted as one of them.
pub fn apply_freeze_policy(model: &mut Model) -> Result<FreezeSummary> {
    let spec = model.spec.clone();
    let mut summary = FreezeSummary::default();
    if spec.norm_strategy == NormStrategy::FreezeBn {
        struct Freeze(usize);
        impl VisitorMut for Freeze {
            fn norm(&mut self, _: &str, n: &mut Norm) {
                if let Norm::Batch(b) = n {
                    b.state = freeze_bn_state(b.state.clone());
                    self.0 += 1;
                }
            }
        }
        let mut f = Freeze(0);
        model.visit_mut("", &mut f);
        summary.frozen_bn = f.0;
    }
    let layers = model.weight_layers();
    let trainable: BTreeSet<String> = match spec.trainable_last_k {
        Some(k) if k > layers.len() => {
            return Err(Error::Validation(format!(
                "trainable_last_k = {k} exceeds the {} weight-bearing layers of {:?}",
                layers.len(),
                spec.base
            )))
        }
        Some(k) => layers[layers.len() - k..].iter().cloned().collect(),
        None => layers.iter().cloned().collect(),
    };
    summary.trainable_layers = trainable.len();
    if spec.trainable_last_k.is_some() {
        struct Mask<'a>(&'a BTreeSet<String>);
        impl VisitorMut for Mask<'_> {
            fn param(&mut self, path: &str, p: &mut Param) {
                let owned = self
                    .0
                    .iter()
                    .any(|l| path.strip_prefix(l.as_str()).is_some_and(|r| r.starts_with('.') || r.starts_with('_')));
                if !owned {
                    p.trainable = false;
                    p.release_buffers();
                }
            }
        }
        model.visit_mut("", &mut Mask(&trainable));
    }
    for (_, t) in model.trainable_mask() {
        if t {
            summary.trainable_params += 1;
        } else {
            summary.frozen_params += 1;
        }
    }
    Ok(summary)
}
