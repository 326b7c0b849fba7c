use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::schedule::lr_at;
use crate::datasets::{Augment, BatchLoader, DatasetManifest, DatasetTag, NUM_CLASSES, DEFAULT_CACHE_BYTES};
use crate::error::{Error, Result};
use crate::evaluator::{evaluate, EvalResult};
use crate::modelzoo::{build_model, Model, ModelSpec};
use crate::nn::{cross_entropy, zero_grad, AdamW, Module, Norm, Param, TrainCtx, Visitor};
use crate::seeding::{derive_seed, stream, streams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    /// Learning rate of the epoch's last step.
    pub lr: f64,
}

/// Facts about the execution that affect reproducibility.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Environment {
    pub device: String,
    pub deterministic: bool,
    pub threads: usize,
    pub crate_version: String,
}

impl Environment {
    pub fn cpu(deterministic: bool) -> Self {
        Self {
            device: "cpu".into(),
            deterministic,
            threads: 1,
            crate_version: env!("CARGO_PKG_VERSION").into(),
        }
    }
}

/// Checksums of everything the freeze policy excludes from training.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrozenChecksums {
    pub before: String,
    pub after: String,
    pub frozen_tensors: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub seed: u64,
    pub spec: ModelSpec,
    pub config: TrainConfig,
    pub epoch_trace: Vec<EpochRecord>,
    pub eval_results: BTreeMap<DatasetTag, EvalResult>,
    pub environment: Environment,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frozen: Option<FrozenChecksums>,
    /// Kept out of the serialized result so reruns are byte-identical;
    /// written to a separate timing file instead.
    #[serde(skip)]
    pub wall_time: f64,
}

impl RunResult {
    pub fn accuracy(&self, dataset: DatasetTag) -> Option<f64> {
        self.eval_results.get(&dataset).map(|r| r.accuracy)
    }
}

/// FNV-1a over the bit patterns of frozen parameters and frozen batch-norm
/// statistics.
pub fn frozen_checksum(model: &dyn Module) -> (String, usize) {
    struct H {
        hash: u64,
        count: usize,
        in_frozen_bn: bool,
    }
    impl H {
        fn feed(&mut self, name: &str, data: &[f32]) {
            for b in name.bytes().chain(data.iter().flat_map(|v| v.to_bits().to_le_bytes())) {
                self.hash ^= b as u64;
                self.hash = self.hash.wrapping_mul(0x0100_0000_01b3);
            }
            self.count += 1;
        }
    }
    impl Visitor for H {
        fn norm(&mut self, _: &str, n: &Norm) {
            self.in_frozen_bn = matches!(n, Norm::Batch(b) if b.state.frozen);
        }
        fn weight_layer(&mut self, _: &str) {
            self.in_frozen_bn = false;
        }
        fn param(&mut self, path: &str, p: &Param) {
            if !p.trainable {
                self.feed(path, p.value.data());
            }
        }
        fn buffer(&mut self, path: &str, b: &[f32]) {
            if self.in_frozen_bn {
                self.feed(path, b);
            }
        }
    }
    let mut h = H {
        hash: 0xcbf2_9ce4_8422_2325,
        count: 0,
        in_frozen_bn: false,
    };
    model.visit("", &mut h);
    (format!("{:016x}", h.hash), h.count)
}

/// Inputs of one training run beyond spec, config and seed.
#[derive(Debug, Clone, Default)]
pub struct TrainOptions<'a> {
    pub weights_cache: Option<&'a Path>,
    pub test_sets: Vec<&'a DatasetManifest>,
    pub checkpoint: Option<PathBuf>,
    pub deterministic: bool,
}

fn class_weights(manifest: &DatasetManifest) -> Vec<f32> {
    let counts = manifest.class_counts();
    let total = counts.total() as f32;
    counts
        .0
        .iter()
        .map(|&c| if c == 0 { 0.0 } else { total / (NUM_CLASSES as f32 * c as f32) })
        .collect()
}

/// Train `spec` on `train_manifest` for the configured number of epochs (no
/// early stopping), then evaluate on every test set. Initialisation of new
/// layers, shuffling, flips and dropout each draw from their own stream
/// derived from `seed`.
pub fn train(
    spec: &ModelSpec,
    train_manifest: &DatasetManifest,
    cfg: &TrainConfig,
    seed: u64,
    opts: &TrainOptions<'_>,
) -> Result<(RunResult, Model)> {
    cfg.validate()?;
    spec.validate()?;
    if train_manifest.is_empty() {
        return Err(Error::Validation("training manifest is empty".into()));
    }
    let started = Instant::now();
    let mut model = build_model(spec, opts.weights_cache, derive_seed(seed, &[streams::INIT]))?;
    let (frozen_before, frozen_tensors) = frozen_checksum(&model);
    let mut loader = BatchLoader::new(train_manifest, cfg.preprocess.clone(), DEFAULT_CACHE_BYTES)?;
    let weights = cfg.class_weighting.then(|| class_weights(train_manifest));
    let mut optim = AdamW::new(cfg.adamw());
    let n = train_manifest.len();
    let steps_per_epoch = n.div_ceil(cfg.batch_size);
    let mut trace = Vec::with_capacity(cfg.epochs());
    let mut step = 0usize;
    for epoch in 0..cfg.epochs() {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut stream(seed, &[streams::SHUFFLE, epoch as u64]));
        let mut loss_sum = 0.0f64;
        let mut lr = 0.0;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            lr = lr_at(step, steps_per_epoch, cfg)?;
            let (x, labels) = loader.batch(chunk, Some(Augment { seed, epoch }))?;
            let mut ctx = TrainCtx {
                rng: stream(seed, &[streams::DROPOUT, epoch as u64, b as u64]),
            };
            zero_grad(&mut model);
            let logits = model.forward_train(&x, &mut ctx)?;
            let ce = cross_entropy(&logits, &labels, weights.as_deref())?;
            if !ce.loss.is_finite() {
                return Err(Error::NonFiniteLoss { seed, epoch: epoch + 1, lr });
            }
            model.backward(&ce.grad)?;
            optim.step(&mut model, lr);
            loss_sum += ce.loss * chunk.len() as f64;
            step += 1;
        }
        let record = EpochRecord {
            epoch: epoch + 1,
            train_loss: loss_sum / n as f64,
            lr,
        };
        log::info!(
            "seed {seed} epoch {}/{}: loss {:.4}, lr {:.3e}",
            record.epoch,
            cfg.epochs(),
            record.train_loss,
            record.lr
        );
        trace.push(record);
    }
    let (frozen_after, _) = frozen_checksum(&model);
    let mut eval_results = BTreeMap::new();
    for test in &opts.test_sets {
        let r = evaluate(&model, test, &cfg.preprocess, cfg.batch_size.max(64))?;
        log::info!("seed {seed}: {} accuracy {:.2}%", r.dataset.name(), r.accuracy);
        eval_results.insert(r.dataset, r);
    }
    if let Some(path) = &opts.checkpoint {
        model.save_checkpoint(path)?;
    }
    let result = RunResult {
        seed,
        spec: spec.clone(),
        config: cfg.clone(),
        epoch_trace: trace,
        eval_results,
        environment: Environment::cpu(opts.deterministic),
        frozen: (frozen_tensors > 0).then_some(FrozenChecksums {
            before: frozen_before,
            after: frozen_after,
            frozen_tensors,
        }),
        wall_time: started.elapsed().as_secs_f64(),
    };
    Ok((result, model))
}
