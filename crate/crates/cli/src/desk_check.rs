//! Desk-scale acceptance pipeline: oracle suites for normalization,
//! metrics, confidence intervals and the schedule, the synthetic BN-vs-GN
//! experiment, the frozen-BN contract, determinism and the t-SNE probe.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use wbc_core::analysis::{build_tsne_figure, TsneConfig};
use wbc_core::datasets::{DatasetTag, PreprocessConfig, SynthConfig, SynthPair, WbcClass};
use wbc_core::evaluator::{aggregate_ci, per_class_metrics, EvalResult};
use wbc_core::modelzoo::{Model, ModelSpec, Tier, VariantId};
use wbc_core::nn::{Norm, Tensor, Visitor};
use wbc_core::normalization::{
    batch_norm_forward, group_norm_forward, layer_norm_params, BnState, GnParams, NormMode,
};
use wbc_core::trainer::{
    checkpoint_path, lr_at, run_benchmark, train, write_json_atomic, BenchmarkOptions, RunResult, TrainConfig,
    TrainOptions,
};

use crate::data::synth_pair;
use crate::error::{CliError, CliResult};
use crate::DeskCheckArgs;

/// Minimum GN-over-BN margin on the shifted set, in accuracy points.
pub const MIN_GN_MARGIN: f64 = 15.0;
/// Minimum accuracy of both variants on the unshifted set.
pub const MIN_SOURCE_ACCURACY: f64 = 90.0;

#[derive(Debug, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

#[derive(Debug, Serialize)]
pub struct Experiment {
    pub seeds: Vec<u64>,
    pub bn_shifted: Vec<f64>,
    pub gn_shifted: Vec<f64>,
    pub bn_source: Vec<f64>,
    pub gn_source: Vec<f64>,
    pub margin: f64,
}

#[derive(Debug, Serialize)]
pub struct Summary {
    pub checks: Vec<Check>,
    pub experiment: Option<Experiment>,
    pub bn_cross_domain_ratio: Option<f64>,
    pub gn_cross_domain_ratio: Option<f64>,
    pub frozen_checksums_unchanged: Option<bool>,
    pub total_seconds: f64,
}

type Outcome = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], shift: f32, scale: f32) -> Tensor {
    Tensor::from_fn(shape, |_| shift + scale * rng.random_range(-1.0f32..1.0))
}

/// Mean and biased variance of `values` in f64.
fn moments(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    (mean, values.map(|v| (v - mean).powi(2)).sum::<f64>() / n)
}

/// Normalize `x` ([N, C, H, W]) over the index sets produced by `key`:
/// elements sharing a key share statistics.
fn brute_force(x: &Tensor, eps: f64, key: impl Fn(usize, usize) -> usize) -> Vec<f64> {
    let (n, c, h, w) = x.dims4().expect("4-d");
    let hw = h * w;
    let idx = |i: usize| (i / (c * hw), (i / hw) % c);
    let mut groups: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for i in 0..n * c * hw {
        let (s, ch) = idx(i);
        groups.entry(key(s, ch)).or_default().push(i);
    }
    let data = x.data();
    let mut out = vec![0.0; data.len()];
    for members in groups.values() {
        let (mean, var) = moments(members.iter().map(|&i| data[i] as f64));
        for &i in members {
            out[i] = (data[i] as f64 - mean) / (var + eps).sqrt();
        }
    }
    out
}

fn max_err(a: &Tensor, b: &[f64]) -> f64 {
    a.data().iter().zip(b).map(|(x, y)| (*x as f64 - y).abs()).fold(0.0, f64::max)
}

fn normalization_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let groups = [1usize, 2, 4][rng.random_range(0..3)];
        let c = groups * rng.random_range(1..4);
        let (n, h, w) = (rng.random_range(2..5), rng.random_range(1..6), rng.random_range(2..6));
        let (shift, scale) = (rng.random_range(-3.0..3.0), rng.random_range(0.5..4.0));
        let x = random_tensor(&mut rng, &[n, c, h, w], shift, scale);
        let mut bn = BnState::new(c);
        let y = batch_norm_forward(&x, &mut bn, NormMode::Train).map_err(|e| e.to_string())?;
        worst = worst.max(max_err(&y, &brute_force(&x, bn.eps as f64, |_, ch| ch)));
        let gn = GnParams::new(c, groups).map_err(|e| e.to_string())?;
        let per = c / groups;
        let y = group_norm_forward(&x, &gn).map_err(|e| e.to_string())?;
        worst = worst.max(max_err(&y, &brute_force(&x, gn.eps as f64, |s, ch| s * c + ch / per)));
        let inst = GnParams::new(c, c).map_err(|e| e.to_string())?;
        let y = group_norm_forward(&x, &inst).map_err(|e| e.to_string())?;
        worst = worst.max(max_err(&y, &brute_force(&x, inst.eps as f64, |s, ch| s * c + ch)));
        let ln = layer_norm_params(c);
        let y = group_norm_forward(&x, &ln).map_err(|e| e.to_string())?;
        worst = worst.max(max_err(&y, &brute_force(&x, ln.eps as f64, |s, _| s)));
    }
    ensure(worst < 1e-5, format!("max deviation {worst:.2e} over 100 shapes"))
}

fn bn_failure_mechanism() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (c, m) = (4, 0.7f32);
    let mut bn = BnState::new(c);
    bn.momentum = 1.0;
    let fit = random_tensor(&mut rng, &[64, c, 8, 8], m, 1.0);
    batch_norm_forward(&fit, &mut bn, NormMode::Train).map_err(|e| e.to_string())?;
    let probe = random_tensor(&mut rng, &[64, c, 8, 8], m, 1.0);
    let gn = GnParams::new(c, 2).map_err(|e| e.to_string())?;
    let mut details = Vec::new();
    let mut prev = f64::NEG_INFINITY;
    let mut ok = true;
    for delta in [0.5f32, 1.0, 2.0] {
        let shifted = probe.map(|v| v + delta);
        let base = batch_norm_forward(&probe, &mut bn.clone(), NormMode::Eval).map_err(|e| e.to_string())?;
        let y = batch_norm_forward(&shifted, &mut bn.clone(), NormMode::Eval).map_err(|e| e.to_string())?;
        let drift = (moments(y.data().iter().map(|v| *v as f64)).0 - moments(base.data().iter().map(|v| *v as f64)).0).abs();
        let var = bn.running_var.iter().map(|v| *v as f64).sum::<f64>() / c as f64;
        let predicted = delta as f64 / (var + bn.eps as f64).sqrt();
        let rel = (drift - predicted).abs() / predicted;
        let g = group_norm_forward(&shifted, &gn).map_err(|e| e.to_string())?;
        let gmean = moments(g.data().iter().map(|v| *v as f64)).0.abs();
        ok &= rel < 0.05 && drift > prev && gmean < 1e-5;
        prev = drift;
        details.push(format!("d={delta}: BN {drift:.4} vs {predicted:.4}, GN {gmean:.1e}"));
    }
    ensure(ok, details.join("; "))
}

const LISC_CONFUSION: [[u64; 5]; 5] = [
    [54, 5, 0, 0, 0],
    [20, 28, 0, 0, 0],
    [0, 0, 56, 0, 0],
    [1, 0, 1, 36, 1],
    [4, 18, 0, 16, 17],
];

fn metrics_fidelity() -> Outcome {
    let m = per_class_metrics(&LISC_CONFUSION);
    let expected = [
        (WbcClass::Basophil, 46.58),
        (WbcClass::Eosinophil, 79.12),
        (WbcClass::Lymphocyte, 78.26),
        (WbcClass::Monocyte, 56.57),
        (WbcClass::Neutrophil, 99.12),
    ];
    let worst = expected
        .iter()
        .map(|(c, f)| (m.get(*c).f_measure - f).abs())
        .fold(0.0, f64::max);
    let truth: Vec<usize> = std::iter::repeat_n(0, 148).chain(std::iter::repeat_n(2, 1971)).collect();
    let pred = vec![2; truth.len()];
    let acc = EvalResult::from_predictions(DatasetTag::RaabinTestB, &truth, &pred)
        .map_err(|e| e.to_string())?
        .accuracy;
    ensure(
        worst < 0.01 && format!("{acc:.1}") == "93.0",
        format!("max F deviation {worst:.4}; constant predictor {acc:.2}%"),
    )
}

fn ci_fidelity() -> Outcome {
    let ci = aggregate_ci(&[1.0, 2.0, 3.0], 0.95).map_err(|e| e.to_string())?;
    let flat = aggregate_ci(&[5.0; 4], 0.95).map_err(|e| e.to_string())?;
    let shown = format!("{:.3} ± {:.3}", ci.mean, ci.half_width);
    ensure(
        shown == "2.000 ± 2.484" && flat.display().ends_with("±0.00"),
        format!("[1,2,3] -> {shown}; all-equal -> {}", flat.display()),
    )
}

fn schedule_fidelity() -> Outcome {
    let cfg = TrainConfig::full();
    let spe = 100;
    let at = |s| lr_at(s, spe, &cfg).map_err(|e| e.to_string());
    let total = cfg.epochs() * spe;
    let (start, warm, mid, end) = (at(0)?, at(10 * spe)?, at(55 * spe)?, at(total)?);
    let mut max_jump: f64 = 0.0;
    let mut prev = start;
    for s in 1..=total {
        let v = at(s)?;
        max_jump = max_jump.max((v - prev).abs());
        prev = v;
    }
    ensure(
        start == 0.0 && warm == 1e-4 && (mid - 5e-5).abs() < 1e-15 && end < 1e-12 && max_jump <= 1e-4 / 1000.0 + 1e-15,
        format!("lr(0)={start}, lr(warmup)={warm}, lr(mid)={mid:.3e}, lr(end)={end:.1e}, max step {max_jump:.2e}"),
    )
}

fn accuracy(r: &RunResult, tag: DatasetTag) -> f64 {
    r.accuracy(tag).unwrap_or(f64::NAN)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn sweep(spec: &ModelSpec, seeds: &[u64], pair: &SynthPair, out: &Path, jobs: usize) -> CliResult<Vec<RunResult>> {
    let opts = BenchmarkOptions {
        out_dir: out,
        weights_cache: None,
        test_sets: vec![&pair.test_source, &pair.test_shifted],
        deterministic: true,
        save_checkpoints: true,
        jobs,
    };
    Ok(run_benchmark(spec, seeds, &TrainConfig::desk(), &pair.train, &opts)?)
}

/// Every frozen batch-norm layer of `model`, used in training mode, must
/// equal `gamma * (x - mean) / sqrt(var + eps) + beta` with its stored values.
pub fn frozen_affine_deviation(model: &Model) -> (usize, f64) {
    struct V {
        count: usize,
        worst: f64,
        rng: ChaCha8Rng,
    }
    impl Visitor for V {
        fn norm(&mut self, _: &str, n: &Norm) {
            let Norm::Batch(b) = n else { return };
            if !b.state.frozen {
                return;
            }
            let s = &b.state;
            let c = s.channels();
            let x = random_tensor(&mut self.rng, &[3, c, 4, 4], 0.5, 2.0);
            let Ok(y) = batch_norm_forward(&x, &mut s.clone(), NormMode::Train) else {
                self.worst = f64::INFINITY;
                return;
            };
            for (i, (xv, yv)) in x.data().iter().zip(y.data()).enumerate() {
                let ch = (i / 16) % c;
                let expect = s.gamma.value.data()[ch] as f64 * (*xv as f64 - s.running_mean[ch] as f64)
                    / (s.running_var[ch] as f64 + s.eps as f64).sqrt()
                    + s.beta.value.data()[ch] as f64;
                self.worst = self.worst.max((*yv as f64 - expect).abs());
            }
            self.count += 1;
        }
    }
    let mut v = V {
        count: 0,
        worst: 0.0,
        rng: ChaCha8Rng::seed_from_u64(3),
    };
    use wbc_core::nn::Module;
    model.visit("", &mut v);
    (v.count, v.worst)
}

fn timed(checks: &mut Vec<Check>, name: &str, f: impl FnOnce() -> Outcome) {
    let t = Instant::now();
    let outcome = f();
    let (passed, detail) = match outcome {
        Ok(d) => (true, d),
        Err(d) => (false, d),
    };
    println!("[{}] {name}: {detail}", if passed { "PASS" } else { "FAIL" });
    checks.push(Check {
        name: name.into(),
        passed,
        detail,
        seconds: t.elapsed().as_secs_f64(),
    });
}

fn default_dir() -> PathBuf {
    std::env::temp_dir().join("wbc-desk-check")
}

pub fn run(args: DeskCheckArgs) -> CliResult<()> {
    if args.seeds == 0 {
        return Err(CliError::validation("--seeds must be at least 1"));
    }
    let started = Instant::now();
    let out = args.out.clone().unwrap_or_else(default_dir);
    let runs_dir = out.join("runs");
    let mut checks = Vec::new();
    timed(&mut checks, "normalization oracle", normalization_oracle);
    timed(&mut checks, "batch-norm shift mechanism", bn_failure_mechanism);
    timed(&mut checks, "per-class metrics", metrics_fidelity);
    timed(&mut checks, "confidence intervals", ci_fidelity);
    timed(&mut checks, "learning-rate schedule", schedule_fidelity);

    let pair = synth_pair(&out.join("synth"), Some(&SynthConfig::default()))?;
    let seeds: Vec<u64> = (0..args.seeds).collect();
    let bn_spec = VariantId::A.spec(Tier::Desk)?;
    let gn_spec = VariantId::I.spec(Tier::Desk)?;
    let t = Instant::now();
    let bn = sweep(&bn_spec, &seeds, &pair, &runs_dir, args.jobs)?;
    let gn = sweep(&gn_spec, &seeds, &pair, &runs_dir, args.jobs)?;
    let experiment = Experiment {
        seeds: seeds.clone(),
        bn_shifted: bn.iter().map(|r| accuracy(r, DatasetTag::SynthShifted)).collect(),
        gn_shifted: gn.iter().map(|r| accuracy(r, DatasetTag::SynthShifted)).collect(),
        bn_source: bn.iter().map(|r| accuracy(r, DatasetTag::SynthSource)).collect(),
        gn_source: gn.iter().map(|r| accuracy(r, DatasetTag::SynthSource)).collect(),
        margin: 0.0,
    };
    let margin = mean(&experiment.gn_shifted) - mean(&experiment.bn_shifted);
    let experiment = Experiment { margin, ..experiment };
    let elapsed = t.elapsed().as_secs_f64();
    timed(&mut checks, "synthetic domain shift", || {
        let detail = format!(
            "shifted GN {:.2} vs BN {:.2} (margin {margin:.2}); source GN {:.2}, BN {:.2}; {} seeds in {elapsed:.0}s",
            mean(&experiment.gn_shifted),
            mean(&experiment.bn_shifted),
            mean(&experiment.gn_source),
            mean(&experiment.bn_source),
            seeds.len()
        );
        let source_ok = experiment.bn_source.iter().chain(&experiment.gn_source).all(|a| *a > MIN_SOURCE_ACCURACY);
        ensure(margin >= MIN_GN_MARGIN && source_ok, detail)
    });

    let frozen_spec = VariantId::Ii.spec(Tier::Desk)?;
    let frozen = sweep(&frozen_spec, &seeds[..1], &pair, &runs_dir, 1)?;
    let unchanged = frozen[0].frozen.as_ref().map(|f| f.before == f.after);
    timed(&mut checks, "frozen batch norm", || {
        let f = frozen[0].frozen.as_ref().ok_or("no frozen tensors recorded")?;
        let model = Model::load_checkpoint(&checkpoint_path(&runs_dir, &frozen_spec, 0)).map_err(|e| e.to_string())?;
        let (layers, worst) = frozen_affine_deviation(&model);
        ensure(
            f.before == f.after && layers > 0 && worst < 1e-5,
            format!(
                "checksum {} -> {} over {} tensors; {layers} layers affine within {worst:.1e}",
                f.before, f.after, f.frozen_tensors
            ),
        )
    });

    timed(&mut checks, "determinism", || {
        let mut cfg = TrainConfig::desk();
        cfg.warmup_epochs = 1;
        cfg.decay_epochs = 1;
        let opts = TrainOptions {
            test_sets: vec![&pair.test_shifted],
            deterministic: true,
            ..Default::default()
        };
        let a = train(&bn_spec, &pair.train, &cfg, 42, &opts).map_err(|e| e.to_string())?.0;
        let b = train(&bn_spec, &pair.train, &cfg, 42, &opts).map_err(|e| e.to_string())?.0;
        let ja = serde_json::to_string(&a).map_err(|e| e.to_string())?;
        let jb = serde_json::to_string(&b).map_err(|e| e.to_string())?;
        ensure(ja == jb, format!("two runs with seed 42: {} bytes, identical: {}", ja.len(), ja == jb))
    });

    let mut ratios = (None, None);
    timed(&mut checks, "t-SNE cross-domain separation", || {
        let pre = {
            let mut p = PreprocessConfig::with_size(bn_spec.base.input_size());
            p.train_augment = false;
            p
        };
        let ratio = |spec: &ModelSpec, name: &str| -> Result<f64, String> {
            let model = Model::load_checkpoint(&checkpoint_path(&runs_dir, spec, 0)).map_err(|e| e.to_string())?;
            let fig = build_tsne_figure(
                &model,
                &[&pair.test_source, &pair.test_shifted],
                39,
                0,
                &pre,
                &TsneConfig::default(),
                &out.join(format!("tsne_{name}")),
            )
            .map_err(|e| e.to_string())?;
            fig.embedding.cross_domain_ratio().map_err(|e| e.to_string())
        };
        let rb = ratio(&bn_spec, "bn")?;
        let rg = ratio(&gn_spec, "gn")?;
        ratios = (Some(rb), Some(rg));
        ensure(rb > rg, format!("distance ratio BN {rb:.3} vs GN {rg:.3}"))
    });

    let summary = Summary {
        bn_cross_domain_ratio: ratios.0,
        gn_cross_domain_ratio: ratios.1,
        frozen_checksums_unchanged: unchanged,
        experiment: Some(experiment),
        total_seconds: started.elapsed().as_secs_f64(),
        checks,
    };
    write_json_atomic(&out.join("desk_check.json"), &summary)?;
    let failed: Vec<&str> = summary.checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
    println!(
        "desk-check: {} of {} checks passed in {:.0}s ({})",
        summary.checks.len() - failed.len(),
        summary.checks.len(),
        summary.total_seconds,
        out.join("desk_check.json").display()
    );
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Failed(format!("desk-check failed: {}", failed.join(", "))))
    }
}
