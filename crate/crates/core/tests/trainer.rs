use std::f64::consts::PI;

use wbc_core::datasets::{make_synthetic_domain_pair, ShiftParams, SynthConfig, SynthPair};
use wbc_core::modelzoo::{Tier, VariantId};
use wbc_core::trainer::{collect_results, lr_at, result_path, run_benchmark, train, BenchmarkOptions, TrainConfig, TrainOptions};

fn oracle_lr(step: f64, spe: f64, cfg: &TrainConfig) -> f64 {
    let w = cfg.warmup_epochs as f64 * spe;
    let d = cfg.decay_epochs as f64 * spe;
    if step < w {
        cfg.peak_lr * step / w
    } else {
        cfg.peak_lr * (1.0 + (PI * (step - w) / d).cos()) / 2.0
    }
}

#[test]
fn schedule_matches_warmup_cosine_oracle() {
    let cfg = TrainConfig::full();
    let spe = 63;
    let total = cfg.epochs() * spe;
    assert_eq!(lr_at(0, spe, &cfg).unwrap(), 0.0);
    assert_eq!(lr_at(10 * spe, spe, &cfg).unwrap(), 1e-4);
    assert!((lr_at(55 * spe, spe, &cfg).unwrap() - 5e-5).abs() < 1e-15);
    assert!(lr_at(total, spe, &cfg).unwrap() < 1e-12);
    assert!(lr_at(total + 1, spe, &cfg).is_err());
    let mut prev = lr_at(0, spe, &cfg).unwrap();
    for s in 0..=total {
        let lr = lr_at(s, spe, &cfg).unwrap();
        assert!((lr - oracle_lr(s as f64, spe as f64, &cfg)).abs() < 1e-15, "step {s}");
        assert!((lr - prev).abs() <= cfg.peak_lr / (10 * spe) as f64 + 1e-15, "jump at step {s}");
        prev = lr;
    }
}

#[test]
fn schedule_rejects_zero_steps_per_epoch() {
    assert!(lr_at(0, 0, &TrainConfig::full()).is_err());
}

fn small_pair(dir: &std::path::Path) -> SynthPair {
    let cfg = SynthConfig {
        n_per_class_train: 6,
        n_per_class_test: 3,
        image_size: 16,
        ..SynthConfig::default()
    };
    make_synthetic_domain_pair(&cfg, dir).unwrap()
}

fn small_config() -> TrainConfig {
    let mut c = TrainConfig::desk();
    c.warmup_epochs = 1;
    c.decay_epochs = 1;
    c.batch_size = 8;
    c.preprocess = wbc_core::datasets::PreprocessConfig::with_size(16);
    c
}

#[test]
fn same_seed_gives_identical_json() {
    let dir = tempfile::tempdir().unwrap();
    let pair = small_pair(dir.path());
    let spec = VariantId::A.spec(Tier::Desk).unwrap();
    let opts = TrainOptions {
        test_sets: vec![&pair.test_source],
        deterministic: true,
        ..Default::default()
    };
    let cfg = small_config();
    let (a, _) = train(&spec, &pair.train, &cfg, 7, &opts).unwrap();
    let (b, _) = train(&spec, &pair.train, &cfg, 7, &opts).unwrap();
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    let (c, _) = train(&spec, &pair.train, &cfg, 8, &opts).unwrap();
    assert_ne!(a.epoch_trace, c.epoch_trace);
}

#[test]
fn frozen_bn_variant_keeps_checksum() {
    let dir = tempfile::tempdir().unwrap();
    let pair = small_pair(dir.path());
    let spec = VariantId::Ii.spec(Tier::Desk).unwrap();
    let (r, _) = train(&spec, &pair.train, &small_config(), 1, &TrainOptions::default()).unwrap();
    let f = r.frozen.expect("frozen variant records checksums");
    assert!(f.frozen_tensors > 0);
    assert_eq!(f.before, f.after);
}

#[test]
fn benchmark_resumes_from_stored_results() {
    let dir = tempfile::tempdir().unwrap();
    let pair = small_pair(&dir.path().join("data"));
    let out = dir.path().join("runs");
    let spec = VariantId::I.spec(Tier::Desk).unwrap();
    let cfg = small_config();
    let opts = BenchmarkOptions {
        out_dir: &out,
        weights_cache: None,
        test_sets: vec![&pair.test_shifted],
        deterministic: true,
        save_checkpoints: true,
        jobs: 1,
    };
    let first = run_benchmark(&spec, &[0, 1], &cfg, &pair.train, &opts).unwrap();
    let stamp = std::fs::metadata(result_path(&out, &spec, 0)).unwrap().modified().unwrap();
    let second = run_benchmark(&spec, &[0, 1, 2], &cfg, &pair.train, &opts).unwrap();
    assert_eq!(first[..], second[..2]);
    assert_eq!(std::fs::metadata(result_path(&out, &spec, 0)).unwrap().modified().unwrap(), stamp);
    assert_eq!(collect_results(&out).unwrap().len(), 3);
    assert!(out.join("i/seed2/model.ckpt").exists());
    assert!(run_benchmark(&spec, &[3, 3], &cfg, &pair.train, &opts).is_err());
}

#[test]
fn zero_shift_pair_is_valid_training_data() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SynthConfig {
        n_per_class_train: 2,
        n_per_class_test: 1,
        image_size: 16,
        shift_params: ShiftParams::ZERO,
        ..SynthConfig::default()
    };
    let pair = make_synthetic_domain_pair(&cfg, dir.path()).unwrap();
    assert_eq!(pair.train.len(), 10);
}
