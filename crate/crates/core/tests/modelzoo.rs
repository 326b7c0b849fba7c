use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use wbc_core::modelzoo::{
    add_vgg_fc_head, build_model, replace_bn_with_gn, BaseNet, HeadKind, Model, ModelSpec, NormStrategy, TensorStore,
    Tier, VariantId, RESNET50_BLOCKS,
};
use wbc_core::nn::{cross_entropy, init, param_count, zero_grad, AdamW, AdamWConfig, Module, Tensor, TrainCtx};
use wbc_core::Error;

fn random_spec(variant: VariantId) -> ModelSpec {
    ModelSpec {
        pretrained: false,
        ..variant.spec(Tier::Full).unwrap()
    }
}

fn one_step(model: &mut Model, size: usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = init::normal(&[2, 3, size, size], 1.0, &mut rng);
    let mut ctx = TrainCtx { rng };
    zero_grad(model);
    let logits = model.forward_train(&x, &mut ctx).unwrap();
    let ce = cross_entropy(&logits, &[0, 3], None).unwrap();
    model.backward(&ce.grad).unwrap();
    AdamW::new(AdamWConfig::default()).step(model, 1e-3);
}

/// Conv layers with a norm after them in a torchvision ResNet-50: the stem,
/// three per bottleneck and one projection shortcut per stage.
fn resnet50_norm_oracle() -> usize {
    let bottlenecks: usize = RESNET50_BLOCKS.iter().sum();
    1 + 3 * bottlenecks + RESNET50_BLOCKS.len()
}

#[test]
fn resnet50_matches_torchvision_shape() {
    let model = build_model(&random_spec(VariantId::A), None, 0).unwrap();
    // torchvision resnet50: 25,557,032 parameters with a 1000-way fc
    assert_eq!(param_count(&model), 25_557_032 - 2048 * 995 - 995);
    assert_eq!(model.feature_dim(), 2048);
    assert_eq!(model.weight_layers().len(), resnet50_norm_oracle() + 1);
    assert_eq!(model.count_norms().batch, resnet50_norm_oracle());
    let x = init::normal(&[1, 3, 224, 224], 1.0, &mut ChaCha8Rng::seed_from_u64(1));
    assert_eq!(model.forward(&x).unwrap().shape(), &[1, 5]);
    let f1 = model.extract_features(&x).unwrap();
    assert_eq!(f1.shape(), &[1, 2048]);
    assert_eq!(f1, model.extract_features(&x).unwrap());
}

#[test]
fn gn_swap_count_matches_oracle() {
    let mut model = build_model(&random_spec(VariantId::A), None, 0).unwrap();
    let x = init::normal(&[2, 3, 64, 64], 1.0, &mut ChaCha8Rng::seed_from_u64(1));
    assert_eq!(replace_bn_with_gn(&mut model, 32).unwrap(), resnet50_norm_oracle());
    let counts = model.count_norms();
    assert_eq!((counts.batch, counts.group), (0, resnet50_norm_oracle()));
    assert_eq!(model.forward(&x).unwrap().shape(), &[2, 5]);
    assert_eq!(replace_bn_with_gn(&mut model, 32).unwrap(), 0);

    let gn = build_model(&random_spec(VariantId::I), None, 0).unwrap();
    assert_eq!(gn.count_norms().group, resnet50_norm_oracle());
}

#[test]
fn indivisible_groups_name_the_layer() {
    let mut model = build_model(&random_spec(VariantId::A), None, 0).unwrap();
    let err = replace_bn_with_gn(&mut model, 48).unwrap_err().to_string();
    assert!(err.contains("bn1 (64 channels)"), "{err}");
    assert_eq!(model.count_norms().group, 0, "nothing swapped on failure");
}

#[test]
fn vgg_fc_head_grows_params_and_rejects_second_call() {
    let mut model = build_model(&random_spec(VariantId::A), None, 0).unwrap();
    let before = param_count(&model);
    add_vgg_fc_head(&mut model, 4096, 1).unwrap();
    assert!(param_count(&model) > before);
    assert_eq!(model.spec().head, HeadKind::VggFc);
    let x = init::normal(&[1, 3, 64, 64], 1.0, &mut ChaCha8Rng::seed_from_u64(1));
    assert_eq!(model.forward(&x).unwrap().shape(), &[1, 5]);
    assert!(matches!(add_vgg_fc_head(&mut model, 4096, 1), Err(Error::Validation(_))));
}

#[test]
fn last_16_layers_counted_from_output() {
    let model = build_model(&random_spec(VariantId::Iii), None, 0).unwrap();
    let layers = model.weight_layers();
    let mask = model.trainable_mask();
    let trainable: Vec<&String> = mask.iter().filter(|(_, t)| *t).map(|(p, _)| p).collect();
    assert_eq!(trainable.first().map(|s| s.as_str()), Some("layer3.4.conv2.weight"));
    assert_eq!(trainable.last().map(|s| s.as_str()), Some("fc.bias"));
    let owners: std::collections::BTreeSet<&str> =
        trainable.iter().map(|p| p.rsplit_once('.').unwrap().0).collect();
    assert_eq!(owners.len(), 16);
    assert!(owners.iter().all(|o| layers[layers.len() - 16..].iter().any(|l| l == o)));
    let counts = model.count_norms();
    assert_eq!(counts.frozen_batch, counts.batch);
    assert!(mask.iter().filter(|(p, _)| p.contains("bn")).all(|(_, t)| !t));
}

#[test]
fn k_beyond_layer_count_is_rejected() {
    let mut spec = VariantId::Iii.spec(Tier::Desk).unwrap();
    spec.variant_id = None;
    spec.trainable_last_k = Some(99);
    assert!(matches!(build_model(&spec, None, 0), Err(Error::Validation(_))));
    spec.trainable_last_k = Some(4);
    let model = build_model(&spec, None, 0).unwrap();
    assert_eq!(model.trainable_mask().iter().filter(|(_, t)| *t).count(), 8);
}

#[test]
fn frozen_weights_survive_a_training_step() {
    let mut model = build_model(&random_spec(VariantId::Iii), None, 0).unwrap();
    let before = TensorStore::from_module(&model);
    one_step(&mut model, 64);
    let after = TensorStore::from_module(&model);
    let mask: std::collections::HashMap<String, bool> = model.trainable_mask().into_iter().collect();
    let mut moved = 0;
    for (name, t) in &before.tensors {
        let same = after.tensors[name] == *t;
        if mask.get(name) == Some(&true) {
            moved += usize::from(!same);
        } else {
            assert!(same, "{name} changed");
        }
    }
    assert!(moved > 0);
}

#[test]
fn desk_variants_build_and_run() {
    let x = init::normal(&[2, 3, 32, 32], 1.0, &mut ChaCha8Rng::seed_from_u64(1));
    for v in &VariantId::ALL[..7] {
        let spec = v.spec(Tier::Desk).unwrap();
        let mut model = build_model(&spec, None, 3).unwrap();
        assert_eq!(model.forward(&x).unwrap().shape(), &[2, 5], "{v}");
        one_step(&mut model, 32);
        assert!(model.forward(&x).unwrap().is_finite());
    }
    let b = build_model(&VariantId::B.spec(Tier::Desk).unwrap(), None, 0).unwrap();
    assert_eq!(b.count_norms().batch, 0);
    let i = build_model(&VariantId::I.spec(Tier::Desk).unwrap(), None, 0).unwrap();
    assert_eq!((i.count_norms().batch, i.count_norms().group), (0, 3));
}

#[test]
fn same_seed_same_init() {
    let spec = VariantId::A.spec(Tier::Desk).unwrap();
    let a = TensorStore::from_module(&build_model(&spec, None, 7).unwrap());
    let b = TensorStore::from_module(&build_model(&spec, None, 7).unwrap());
    let c = TensorStore::from_module(&build_model(&spec, None, 8).unwrap());
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn checkpoint_round_trip_restores_spec_and_weights() {
    let dir = tempfile::tempdir().unwrap();
    let spec = VariantId::Iii.spec(Tier::Desk).unwrap();
    let mut model = build_model(&spec, None, 1).unwrap();
    one_step(&mut model, 32);
    let path = dir.path().join("iii/seed0/model.ckpt");
    model.save_checkpoint(&path).unwrap();
    let back = Model::load_checkpoint(&path).unwrap();
    assert_eq!(back.spec(), model.spec());
    assert_eq!(TensorStore::from_module(&back), TensorStore::from_module(&model));
    assert_eq!(back.trainable_mask(), model.trainable_mask());
    let x = init::normal(&[2, 3, 32, 32], 1.0, &mut ChaCha8Rng::seed_from_u64(1));
    assert_eq!(back.forward(&x).unwrap(), model.forward(&x).unwrap());
}

#[test]
fn pretrained_weights_load_except_classifier() {
    let dir = tempfile::tempdir().unwrap();
    let donor = build_model(&random_spec(VariantId::A), None, 42).unwrap();
    let mut store = TensorStore::from_module(&donor);
    store.tensors.remove("fc.weight");
    store.tensors.insert("fc.weight".into(), Tensor::zeros(&[1000, 2048]));
    store.write(&dir.path().join("resnet50.safetensors")).unwrap();

    let spec = VariantId::Ii.spec(Tier::Full).unwrap();
    let model = build_model(&spec, Some(dir.path()), 0).unwrap();
    let got = TensorStore::from_module(&model);
    let want = TensorStore::from_module(&donor);
    for (name, t) in &got.tensors {
        if name.starts_with("fc.") {
            assert_eq!(t.shape()[0], 5);
        } else {
            assert_eq!(t, &want.tensors[name], "{name}");
        }
    }

    match build_model(&random_spec(VariantId::I).clone_with_pretrained(), Some(dir.path()), 0) {
        Err(Error::MissingWeights(msg)) => assert!(msg.contains("resnet50_gn.safetensors") && msg.contains("R-50-GN")),
        other => panic!("expected missing weights, got {:?}", other.err()),
    }
}

trait Pretrained {
    fn clone_with_pretrained(&self) -> ModelSpec;
}

impl Pretrained for ModelSpec {
    fn clone_with_pretrained(&self) -> ModelSpec {
        ModelSpec {
            pretrained: true,
            ..self.clone()
        }
    }
}

#[test]
fn transformer_bases_match_torchvision_sizes() {
    let vit = build_model(&random_spec(VariantId::C), None, 0).unwrap();
    // torchvision vit_b_16: 86,567,656 parameters with a 1000-way head
    assert_eq!(param_count(&vit), 86_567_656 - 768 * 995 - 995);
    assert_eq!(vit.feature_dim(), 768);
    let cnx = build_model(&random_spec(VariantId::D), None, 0).unwrap();
    // torchvision convnext_tiny: 28,589,128
    assert_eq!(param_count(&cnx), 28_589_128 - 768 * 995 - 995);
    let x = init::normal(&[1, 3, 64, 64], 1.0, &mut ChaCha8Rng::seed_from_u64(1));
    assert_eq!(cnx.forward(&x).unwrap().shape(), &[1, 5]);
    assert!(vit.forward(&x).is_err(), "ViT needs 224x224 input");
}

#[test]
fn vgg16_sizes() {
    let b = build_model(&random_spec(VariantId::B), None, 0).unwrap();
    // torchvision vgg16: 138,357,544
    assert_eq!(param_count(&b), 138_357_544 - 4096 * 995 - 995);
    assert_eq!(b.weight_layers().len(), 16);
    assert_eq!(b.feature_tap(), "classifier.4");
    drop(b);
    let bn = build_model(&random_spec(VariantId::BPrime), None, 0).unwrap();
    assert_eq!(bn.count_norms().batch, 13);
    let spec_bad = ModelSpec {
        norm_strategy: NormStrategy::FreezeBn,
        variant_id: None,
        ..random_spec(VariantId::B)
    };
    assert!(build_model(&spec_bad, None, 0).is_err());
    assert_eq!(random_spec(VariantId::B).base, BaseNet::Vgg16);
}
