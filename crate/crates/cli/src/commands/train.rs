use std::path::Path;

use serde_json::json;
use wbc_core::datasets::PreprocessConfig;
use wbc_core::evaluator::{evaluate as eval_model, group_by_variant};
use wbc_core::modelzoo::{Model, Tier, VariantId};
use wbc_core::trainer::{collect_results, run_benchmark, write_json_atomic, BenchmarkOptions, RunResult};

use super::report::write_report;
use super::resolve;
use crate::config::ResolvedExperiment;
use crate::data::{manifest_for, synth_cache_dir, training_data};
use crate::error::{CliError, CliResult};
use crate::{AblateArgs, EvaluateArgs, TrainArgs};

fn print_run(r: &RunResult) {
    let accs: Vec<String> = r
        .eval_results
        .values()
        .map(|e| format!("{} {:.2}%", e.dataset.display_name(), e.accuracy))
        .collect();
    let variant = r.spec.variant_id.map_or("custom", |v| v.slug());
    println!("{variant} seed {}: {}", r.seed, accs.join(", "));
}

fn sweep(exp: &ResolvedExperiment, variant: VariantId, save_checkpoints: bool) -> CliResult<Vec<RunResult>> {
    let spec = exp.spec(variant)?;
    let cache = synth_cache_dir(exp.synth_cache.as_deref(), &exp.out);
    let data = training_data(exp.tier, &exp.data_args(), &cache, exp.synth.as_ref())?;
    let opts = BenchmarkOptions {
        out_dir: &exp.out,
        weights_cache: exp.weights_cache.as_deref(),
        test_sets: data.tests.iter().collect(),
        deterministic: exp.deterministic,
        save_checkpoints,
        jobs: exp.jobs,
    };
    let runs = run_benchmark(&spec, &exp.seeds, &exp.train, &data.train, &opts)?;
    runs.iter().for_each(print_run);
    Ok(runs)
}

/// `train --variant V --seeds ...`: one result file and checkpoint per seed.
pub fn train(args: TrainArgs) -> CliResult<()> {
    let variant = args.variant.unwrap_or(VariantId::A);
    let exp = resolve(&args.run, Some(vec![variant]), vec![])?;
    exp.record("train")?;
    sweep(&exp, variant, true)?;
    Ok(())
}

fn default_variants(tier: Tier) -> Vec<VariantId> {
    VariantId::ALL.into_iter().filter(|v| v.spec(tier).is_ok()).collect()
}

/// Every requested variant over every seed, then the comparison report. A
/// failing variant is reported and skipped; the others still run.
pub fn ablate(args: AblateArgs) -> CliResult<()> {
    let tier = args.run.tier.unwrap_or(Tier::Desk);
    let exp = resolve(&args.run, args.variants.map(|v| v.0), default_variants(tier))?;
    exp.record("ablate")?;
    let mut failures = Vec::new();
    for &variant in &exp.variants {
        if let Err(e) = sweep(&exp, variant, args.run.save_checkpoints) {
            eprintln!("{}", json!({ "variant": variant.slug(), "error": e.kind(), "message": e.to_string() }));
            failures.push(variant.slug());
        }
    }
    let results = group_by_variant(collect_results(&exp.out)?);
    if !results.is_empty() {
        let report = write_report(&results, &exp.out, !args.no_figures)?;
        print!("{}", report.table.to_text());
    }
    if failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::Failed(format!("variants failed: {}", failures.join(", "))))
    }
}

/// Evaluate a checkpoint on one dataset and print per-class metrics.
pub fn evaluate(args: EvaluateArgs) -> CliResult<()> {
    let model = Model::load_checkpoint(&args.checkpoint)?;
    let manifest = manifest_for(args.dataset, &args.data, None)?;
    let mut pre = PreprocessConfig::with_size(model.spec().base.input_size());
    pre.train_augment = false;
    let result = eval_model(&model, &manifest, &pre, args.batch_size)?;
    let metrics = result.metrics();
    println!("{}: accuracy {:.2}% on {} images", args.dataset.display_name(), result.accuracy, result.n);
    println!("{:<12} {:>9} {:>9} {:>9} {:>8}", "class", "precision", "recall", "F", "support");
    for m in &metrics.per_class {
        let show = |v: f64, undefined: bool| if undefined { "n/a".to_string() } else { format!("{v:.2}") };
        println!(
            "{:<12} {:>9} {:>9} {:>9} {:>8}",
            m.class.name(),
            show(m.precision, m.precision_undefined),
            show(m.recall, m.recall_undefined),
            show(m.f_measure, m.f_undefined),
            m.support
        );
    }
    if !result.absent_classes.is_empty() {
        let names: Vec<&str> = result.absent_classes.iter().map(|c| c.name()).collect();
        println!("classes absent from this set: {}", names.join(", "));
    }
    if let Some(out) = &args.out {
        write_eval(out, &args.checkpoint, &result, &metrics)?;
    }
    Ok(())
}

fn write_eval(
    out: &Path,
    checkpoint: &Path,
    result: &wbc_core::evaluator::EvalResult,
    metrics: &wbc_core::evaluator::ClassMetrics,
) -> CliResult<()> {
    let value = json!({ "checkpoint": checkpoint, "result": result, "metrics": metrics });
    write_json_atomic(out, &value)?;
    Ok(())
}
