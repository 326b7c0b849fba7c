use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::Serialize;

use super::config::TrainConfig;
use super::run::{train, RunResult, TrainOptions};
use crate::datasets::DatasetManifest;
use crate::error::{Error, Result};
use crate::modelzoo::ModelSpec;

/// Directory name for a spec's results: the variant slug, or `custom`.
pub fn variant_dir(spec: &ModelSpec) -> &'static str {
    spec.variant_id.map_or("custom", |v| v.slug())
}

/// `DIR/<variant>/seed<k>.json`
pub fn result_path(out: &Path, spec: &ModelSpec, seed: u64) -> PathBuf {
    out.join(variant_dir(spec)).join(format!("seed{seed}.json"))
}

/// `DIR/<variant>/seed<k>/model.ckpt`
pub fn checkpoint_path(out: &Path, spec: &ModelSpec, seed: u64) -> PathBuf {
    out.join(variant_dir(spec)).join(format!("seed{seed}")).join("model.ckpt")
}

fn timing_path(out: &Path, spec: &ModelSpec, seed: u64) -> PathBuf {
    out.join(variant_dir(spec)).join(format!("seed{seed}.timing.json"))
}

/// Write via a temporary file and rename, so readers never observe a
/// partial file.
pub fn write_json_atomic<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let tmp = path.with_extension("json.tmp");
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(&tmp, text).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn read_run_result(path: &Path) -> Result<RunResult> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// A stored result is reusable when it was produced by the same spec,
/// config and seed.
fn reusable(path: &Path, spec: &ModelSpec, cfg: &TrainConfig, seed: u64) -> Option<RunResult> {
    let mut r = read_run_result(path).ok()?;
    if r.seed != seed || r.spec != *spec || r.config != *cfg {
        return None;
    }
    r.wall_time = stored_wall_time(&path.with_extension("timing.json")).unwrap_or(0.0);
    Some(r)
}

fn stored_wall_time(path: &Path) -> Option<f64> {
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(path).ok()?).ok()?;
    v.get("wall_time_seconds")?.as_f64()
}

/// Options shared by every seed of a sweep.
#[derive(Debug, Clone)]
pub struct BenchmarkOptions<'a> {
    pub out_dir: &'a Path,
    pub weights_cache: Option<&'a Path>,
    pub test_sets: Vec<&'a DatasetManifest>,
    pub deterministic: bool,
    pub save_checkpoints: bool,
    /// Seeds trained concurrently.
    pub jobs: usize,
}

/// Train one run per seed, persisting each result as soon as it finishes.
/// Seeds whose result file already exists for the same spec and config are
/// loaded instead of retrained. Results are returned in seed order.
pub fn run_benchmark(
    spec: &ModelSpec,
    seeds: &[u64],
    cfg: &TrainConfig,
    train_manifest: &DatasetManifest,
    opts: &BenchmarkOptions<'_>,
) -> Result<Vec<RunResult>> {
    if seeds.is_empty() {
        return Err(Error::Validation("at least one seed is required".into()));
    }
    let distinct: BTreeSet<u64> = seeds.iter().copied().collect();
    if distinct.len() != seeds.len() {
        return Err(Error::Validation(format!("duplicate seeds in {seeds:?}")));
    }
    spec.validate()?;
    cfg.validate()?;
    let mut results: Vec<Option<RunResult>> = seeds
        .iter()
        .map(|&s| {
            let r = reusable(&result_path(opts.out_dir, spec, s), spec, cfg, s);
            if r.is_some() {
                log::info!("{} seed {s}: reusing stored result", variant_dir(spec));
            }
            r
        })
        .collect();
    let pending: Vec<usize> = (0..seeds.len()).filter(|&i| results[i].is_none()).collect();
    let run_one = |i: usize| -> Result<RunResult> {
        let seed = seeds[i];
        let train_opts = TrainOptions {
            weights_cache: opts.weights_cache,
            test_sets: opts.test_sets.clone(),
            checkpoint: opts.save_checkpoints.then(|| checkpoint_path(opts.out_dir, spec, seed)),
            deterministic: opts.deterministic,
        };
        let (result, _) = train(spec, train_manifest, cfg, seed, &train_opts)?;
        write_json_atomic(&result_path(opts.out_dir, spec, seed), &result)?;
        write_json_atomic(
            &timing_path(opts.out_dir, spec, seed),
            &serde_json::json!({ "seed": seed, "wall_time_seconds": result.wall_time }),
        )?;
        Ok(result)
    };
    let jobs = opts.jobs.max(1).min(pending.len().max(1));
    if jobs == 1 {
        for &i in &pending {
            results[i] = Some(run_one(i)?);
        }
    } else {
        let queue = Mutex::new(pending.into_iter());
        let done = Mutex::new(Vec::new());
        let first_error = Mutex::new(None);
        std::thread::scope(|scope| {
            for _ in 0..jobs {
                scope.spawn(|| loop {
                    if first_error.lock().expect("lock").is_some() {
                        break;
                    }
                    let Some(i) = queue.lock().expect("lock").next() else {
                        break;
                    };
                    match run_one(i) {
                        Ok(r) => done.lock().expect("lock").push((i, r)),
                        Err(e) => {
                            first_error.lock().expect("lock").get_or_insert(e);
                        }
                    }
                });
            }
        });
        if let Some(e) = first_error.into_inner().expect("lock") {
            return Err(e);
        }
        for (i, r) in done.into_inner().expect("lock") {
            results[i] = Some(r);
        }
    }
    Ok(results.into_iter().map(|r| r.expect("every seed resolved")).collect())
}

/// Every stored result under `out` (all variants), sorted by variant then seed.
pub fn collect_results(out: &Path) -> Result<Vec<RunResult>> {
    let mut all = Vec::new();
    let entries = match fs::read_dir(out) {
        Ok(e) => e,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(all),
        Err(e) => return Err(Error::io(out, e)),
    };
    let mut dirs: Vec<PathBuf> = entries.filter_map(|e| e.ok().map(|e| e.path())).filter(|p| p.is_dir()).collect();
    dirs.sort();
    for dir in dirs {
        let mut files: Vec<PathBuf> = fs::read_dir(&dir)
            .map_err(|e| Error::io(&dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.starts_with("seed") && n.ends_with(".json") && !n.ends_with(".timing.json"))
            })
            .collect();
        files.sort();
        for f in files {
            all.push(read_run_result(&f)?);
        }
    }
    all.sort_by_key(|r| (r.spec.variant_id, r.seed));
    Ok(all)
}
