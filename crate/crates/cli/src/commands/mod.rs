mod analyze;
mod prepare;
mod report;
mod train;

use std::path::PathBuf;

use wbc_core::modelzoo::{ModelSpec, Tier, VariantId};
use wbc_core::trainer::TrainConfig;

pub use analyze::analyze;
pub use prepare::prepare;
pub use report::report;
pub use train::{ablate, evaluate, train};

use crate::config::{ExperimentConfig, ResolvedExperiment, DEFAULT_SEEDS};
use crate::error::CliResult;
use crate::RunArgs;

/// Merge tier defaults, the config file and flags (highest precedence).
pub fn resolve(run: &RunArgs, variants: Option<Vec<VariantId>>, default_variants: Vec<VariantId>) -> CliResult<ResolvedExperiment> {
    let file = match &run.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    let tier = run.tier.or(file.tier).unwrap_or(Tier::Desk);
    let mut train = TrainConfig::for_tier(tier);
    file.train.apply(&mut train);
    if let Some(v) = run.batch_size {
        train.batch_size = v;
    }
    if let Some(v) = run.lr {
        train.peak_lr = v;
    }
    if let Some(v) = run.warmup_epochs {
        train.warmup_epochs = v;
    }
    if let Some(v) = run.decay_epochs {
        train.decay_epochs = v;
    }
    let pick = |flag: &Option<PathBuf>, file: &Option<PathBuf>| flag.clone().or_else(|| file.clone());
    let exp = ResolvedExperiment {
        tier,
        variants: variants.or(file.variants).unwrap_or(default_variants),
        seeds: run
            .seeds
            .as_ref()
            .map(|s| s.0.clone())
            .or(file.seeds)
            .unwrap_or_else(|| DEFAULT_SEEDS.collect()),
        train,
        num_groups: file.num_groups,
        synth: file.synth,
        raabin_root: pick(&run.data.raabin_root, &file.raabin_root),
        lisc_root: pick(&run.data.lisc_root, &file.lisc_root),
        synth_cache: pick(&run.data.synth_cache, &file.synth_cache),
        weights_cache: pick(&run.data.weights_cache, &file.weights_cache),
        out: run.out.clone().or(file.out).unwrap_or_else(|| PathBuf::from("runs")),
        device: run.device.clone().or(file.device).unwrap_or_else(|| "cpu".into()),
        deterministic: run.deterministic || file.deterministic.unwrap_or(true),
        jobs: run.jobs.or(file.jobs).unwrap_or(1).max(1),
    };
    exp.validate()?;
    Ok(exp)
}

impl ResolvedExperiment {
    pub fn spec(&self, variant: VariantId) -> CliResult<ModelSpec> {
        let mut spec = variant.spec(self.tier)?;
        if let Some(g) = self.num_groups {
            spec.num_groups = g;
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn data_args(&self) -> crate::DataArgs {
        crate::DataArgs {
            raabin_root: self.raabin_root.clone(),
            lisc_root: self.lisc_root.clone(),
            synth_cache: self.synth_cache.clone(),
            weights_cache: self.weights_cache.clone(),
        }
    }
}
