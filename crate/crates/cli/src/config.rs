use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use wbc_core::datasets::SynthConfig;
use wbc_core::modelzoo::{Tier, VariantId};
use wbc_core::trainer::{write_json_atomic, TrainConfig};
use wbc_core::Error;

use crate::error::{CliError, CliResult};

pub const WEIGHTS_CACHE_ENV: &str = "WBC_WEIGHTS_CACHE";
pub const DEFAULT_SEEDS: std::ops::RangeInclusive<u64> = 0..=9;

/// Partial [`TrainConfig`]; unset fields keep the tier default.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainOverrides {
    pub weight_decay: Option<f64>,
    pub peak_lr: Option<f64>,
    pub warmup_epochs: Option<usize>,
    pub decay_epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub class_weighting: Option<bool>,
    pub image_size: Option<usize>,
}

impl TrainOverrides {
    pub fn apply(&self, cfg: &mut TrainConfig) {
        if let Some(v) = self.weight_decay {
            cfg.weight_decay = v;
        }
        if let Some(v) = self.peak_lr {
            cfg.peak_lr = v;
        }
        if let Some(v) = self.warmup_epochs {
            cfg.warmup_epochs = v;
        }
        if let Some(v) = self.decay_epochs {
            cfg.decay_epochs = v;
        }
        if let Some(v) = self.batch_size {
            cfg.batch_size = v;
        }
        if let Some(v) = self.class_weighting {
            cfg.class_weighting = v;
        }
        if let Some(v) = self.image_size {
            cfg.preprocess.target_size = v;
        }
    }
}

/// Contents of `experiment.json`. Command-line flags override these.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub tier: Option<Tier>,
    pub raabin_root: Option<PathBuf>,
    pub lisc_root: Option<PathBuf>,
    pub synth_cache: Option<PathBuf>,
    pub weights_cache: Option<PathBuf>,
    pub variants: Option<Vec<VariantId>>,
    pub seeds: Option<Vec<u64>>,
    pub out: Option<PathBuf>,
    pub device: Option<String>,
    pub deterministic: Option<bool>,
    pub jobs: Option<usize>,
    pub train: TrainOverrides,
    pub num_groups: Option<usize>,
    pub synth: Option<SynthConfig>,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::validation(format!("{}: invalid experiment config: {e}", path.display())))
    }
}

/// `0..9` (inclusive), `3`, or a comma list such as `0,2,5`.
pub fn parse_seeds(s: &str) -> Result<Vec<u64>, String> {
    let s = s.trim();
    if let Some((a, b)) = s.split_once("..") {
        let a: u64 = a.trim().parse().map_err(|_| format!("bad seed range {s:?}"))?;
        let b: u64 = b.trim().trim_start_matches('=').parse().map_err(|_| format!("bad seed range {s:?}"))?;
        if b < a {
            return Err(format!("empty seed range {s:?}"));
        }
        return Ok((a..=b).collect());
    }
    s.split(',')
        .map(|t| t.trim().parse::<u64>().map_err(|_| format!("bad seed {t:?}")))
        .collect()
}

pub fn parse_variants(s: &str) -> Result<Vec<VariantId>, String> {
    s.split(',')
        .filter(|t| !t.trim().is_empty())
        .map(|t| t.trim().parse::<VariantId>().map_err(|e| e.to_string()))
        .collect()
}

/// Fully resolved settings of one invocation; hashed into the provenance
/// record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedExperiment {
    pub tier: Tier,
    pub variants: Vec<VariantId>,
    pub seeds: Vec<u64>,
    pub train: TrainConfig,
    pub num_groups: Option<usize>,
    pub synth: Option<SynthConfig>,
    pub raabin_root: Option<PathBuf>,
    pub lisc_root: Option<PathBuf>,
    pub synth_cache: Option<PathBuf>,
    pub weights_cache: Option<PathBuf>,
    pub out: PathBuf,
    pub device: String,
    pub deterministic: bool,
    pub jobs: usize,
}

impl ResolvedExperiment {
    pub fn validate(&self) -> CliResult<()> {
        if self.device != "cpu" {
            return Err(CliError::validation(format!(
                "device {:?} is not available: this build trains on the CPU only",
                self.device
            )));
        }
        if self.seeds.is_empty() {
            return Err(CliError::validation("at least one seed is required"));
        }
        if self.tier == Tier::Desk {
            if let Some(v) = self.variants.iter().find(|v| v.spec(Tier::Desk).is_err()) {
                return Err(CliError::validation(format!(
                    "variant {} needs pretrained transformer weights and has no desk-tier counterpart",
                    v.label()
                )));
            }
        }
        self.train.validate()?;
        Ok(())
    }

    pub fn config_hash(&self) -> CliResult<String> {
        let canonical = serde_json::to_vec(self).map_err(Error::from)?;
        Ok(Sha256::digest(&canonical).iter().map(|b| format!("{b:02x}")).collect())
    }

    /// Write `experiment.resolved.json` and `provenance.json` into the
    /// output directory.
    pub fn record(&self, command: &str) -> CliResult<()> {
        write_json_atomic(&self.out.join("experiment.resolved.json"), self)?;
        let provenance = Provenance {
            command: command.to_string(),
            argv: std::env::args().collect(),
            config_hash: self.config_hash()?,
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            git_revision: option_env!("WBC_GIT_REVISION").map(str::to_string),
            environment: Fingerprint::current(),
            created_unix: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
        };
        write_json_atomic(&self.out.join(format!("provenance.{command}.json")), &provenance)?;
        Ok(())
    }
}

#[derive(Debug, Serialize)]
pub struct Fingerprint {
    pub os: &'static str,
    pub arch: &'static str,
    pub available_parallelism: usize,
    pub device: &'static str,
}

impl Fingerprint {
    pub fn current() -> Self {
        Self {
            os: std::env::consts::OS,
            arch: std::env::consts::ARCH,
            available_parallelism: std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
            device: "cpu",
        }
    }
}

#[derive(Debug, Serialize)]
pub struct Provenance {
    pub command: String,
    pub argv: Vec<String>,
    pub config_hash: String,
    pub code_version: String,
    pub git_revision: Option<String>,
    pub environment: Fingerprint,
    pub created_unix: u64,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_lists() {
        assert_eq!(parse_seeds("0..9").unwrap(), (0..=9).collect::<Vec<_>>());
        assert_eq!(parse_seeds("0..=2").unwrap(), vec![0, 1, 2]);
        assert_eq!(parse_seeds("4").unwrap(), vec![4]);
        assert_eq!(parse_seeds("1, 3").unwrap(), vec![1, 3]);
        assert!(parse_seeds("5..2").is_err());
        assert!(parse_seeds("x").is_err());
    }

    #[test]
    fn variant_lists() {
        let v = parse_variants("a,a',b,b',i,ii,iii").unwrap();
        assert_eq!(v.len(), 7);
        assert_eq!(v[1], VariantId::APrime);
        assert!(parse_variants("z").is_err());
    }

    #[test]
    fn unknown_config_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("experiment.json");
        fs::write(&p, r#"{"seeds": [0], "learning_rate": 1}"#).unwrap();
        assert_eq!(ExperimentConfig::load(&p).unwrap_err().exit_code(), 3);
        fs::write(&p, r#"{"seeds": [0, 1], "train": {"peak_lr": 0.01}}"#).unwrap();
        let c = ExperimentConfig::load(&p).unwrap();
        assert_eq!(c.train.peak_lr, Some(0.01));
    }
}
