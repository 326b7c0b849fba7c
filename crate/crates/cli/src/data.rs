use std::path::{Path, PathBuf};

use wbc_core::datasets::{
    make_synthetic_domain_pair, scan_lisc, scan_raabin, DatasetManifest, DatasetTag, RaabinSplit, SynthConfig,
    SynthPair,
};
use wbc_core::modelzoo::Tier;
use wbc_core::Error;

use crate::error::CliResult;
use crate::DataArgs;

pub struct TrainingData {
    pub train: DatasetManifest,
    pub tests: Vec<DatasetManifest>,
}

pub fn synth_cache_dir(explicit: Option<&Path>, out: &Path) -> PathBuf {
    explicit.map_or_else(|| out.join("synth"), Path::to_path_buf)
}

/// Config stored with an existing synthetic dataset, if any.
pub fn cached_synth_config(cache: &Path) -> Option<SynthConfig> {
    let text = std::fs::read_to_string(cache.join("synth_config.json")).ok()?;
    serde_json::from_str(&text).ok()
}

/// The synthetic pair under `cache`. Without an explicit config an existing
/// dataset is reused as generated; otherwise defaults apply.
pub fn synth_pair(cache: &Path, cfg: Option<&SynthConfig>) -> CliResult<SynthPair> {
    let cfg = cfg.cloned().or_else(|| cached_synth_config(cache)).unwrap_or_default();
    Ok(make_synthetic_domain_pair(&cfg, cache)?)
}

fn require<'a>(root: Option<&'a PathBuf>, flag: &str, what: &str) -> CliResult<&'a Path> {
    root.map(PathBuf::as_path)
        .ok_or_else(|| Error::Config(format!("{what} requires {flag}")).into())
}

/// Training split and test sets for a tier. Desk uses the synthetic pair;
/// full uses RaabinWBC (train, Test-A, Test-B) plus LISC when given.
pub fn training_data(
    tier: Tier,
    data: &DataArgs,
    synth_cache: &Path,
    synth: Option<&SynthConfig>,
) -> CliResult<TrainingData> {
    match tier {
        Tier::Desk => {
            let pair = synth_pair(synth_cache, synth)?;
            Ok(TrainingData {
                train: pair.train,
                tests: vec![pair.test_source, pair.test_shifted],
            })
        }
        Tier::Full => {
            let root = require(data.raabin_root.as_ref(), "--raabin-root", "the full tier")?;
            let train = scan_raabin(root, RaabinSplit::Train)?.manifest;
            let mut tests = vec![
                scan_raabin(root, RaabinSplit::TestA)?.manifest,
                scan_raabin(root, RaabinSplit::TestB)?.manifest,
            ];
            match &data.lisc_root {
                Some(l) => tests.push(scan_lisc(l)?.manifest),
                None => log::warn!("no --lisc-root given: the cross-domain test set is skipped"),
            }
            Ok(TrainingData { train, tests })
        }
    }
}

/// Manifest for one dataset tag.
pub fn manifest_for(tag: DatasetTag, data: &DataArgs, synth: Option<&SynthConfig>) -> CliResult<DatasetManifest> {
    let raabin = |split| -> CliResult<DatasetManifest> {
        let root = require(data.raabin_root.as_ref(), "--raabin-root", tag.cli_name())?;
        Ok(scan_raabin(root, split)?.manifest)
    };
    match tag {
        DatasetTag::RaabinTrain => raabin(RaabinSplit::Train),
        DatasetTag::RaabinTestA => raabin(RaabinSplit::TestA),
        DatasetTag::RaabinTestB => raabin(RaabinSplit::TestB),
        DatasetTag::Lisc => Ok(scan_lisc(require(data.lisc_root.as_ref(), "--lisc-root", "lisc")?)?.manifest),
        DatasetTag::SynthSource | DatasetTag::SynthShifted => {
            let cache = require(data.synth_cache.as_ref(), "--synth-cache", tag.cli_name())?;
            let pair = synth_pair(cache, synth)?;
            Ok(if tag == DatasetTag::SynthSource {
                pair.test_source
            } else {
                pair.test_shifted
            })
        }
    }
}
