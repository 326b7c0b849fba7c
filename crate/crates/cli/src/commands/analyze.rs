use std::path::PathBuf;

use wbc_core::analysis::{
    build_tsne_figure, mean_closest_run, render_bar_chart_svg, render_box_plot_svg, render_confusion_svg, write_figure,
    TsneConfig,
};
use wbc_core::datasets::{DatasetTag, PreprocessConfig};
use wbc_core::evaluator::{build_report, evaluate};
use wbc_core::modelzoo::{Model, Tier};
use wbc_core::trainer::checkpoint_path;

use super::report::load_results;
use crate::data::manifest_for;
use crate::error::{CliError, CliResult};
use crate::{AnalyzeArgs, Figure};

fn eval_preprocess(model: &Model) -> PreprocessConfig {
    let mut p = PreprocessConfig::with_size(model.spec().base.input_size());
    p.train_augment = false;
    p
}

/// Cross-domain test set used to pick and probe models of a tier.
fn target_set(tier: Tier) -> DatasetTag {
    match tier {
        Tier::Desk => DatasetTag::SynthShifted,
        Tier::Full => DatasetTag::Lisc,
    }
}

/// The checkpoint given directly, or the stored checkpoint of the seed
/// whose cross-domain accuracy is closest to the variant mean.
fn pick_checkpoint(args: &AnalyzeArgs) -> CliResult<PathBuf> {
    if let Some(c) = &args.checkpoint {
        return Ok(c.clone());
    }
    let (Some(dir), Some(variant)) = (&args.input, args.variant) else {
        return Err(CliError::Usage("give --checkpoint, or --in DIR with --variant".into()));
    };
    let results = load_results(dir)?;
    let runs = results
        .get(&variant)
        .ok_or_else(|| CliError::validation(format!("no results for variant {} in {}", variant.label(), dir.display())))?;
    let tag = target_set(runs[0].spec.tier());
    let idx = mean_closest_run(runs, tag)
        .ok_or_else(|| CliError::validation(format!("variant {} has no {} results", variant.label(), tag.name())))?;
    let path = checkpoint_path(dir, &runs[idx].spec, runs[idx].seed);
    if !path.exists() {
        return Err(CliError::validation(format!(
            "checkpoint {} is missing (train with checkpoints enabled)",
            path.display()
        )));
    }
    println!("using seed {} (closest to the mean on {})", runs[idx].seed, tag.display_name());
    Ok(path)
}

pub fn analyze(mut args: AnalyzeArgs) -> CliResult<()> {
    if args.data.synth_cache.is_none() {
        args.data.synth_cache = args.input.as_ref().map(|d| d.join("synth")).filter(|p| p.exists());
    }
    match args.figure {
        Figure::Tsne => tsne(&args),
        Figure::Box | Figure::Bars => {
            let dir = args.input.as_ref().ok_or_else(|| CliError::Usage("--figure box/bars needs --in DIR".into()))?;
            let report = build_report(&load_results(dir)?)?;
            let mut files = Vec::new();
            if args.figure == Figure::Bars {
                files.extend(write_figure(&render_bar_chart_svg(&report)?, &args.out.join("bars"))?);
            } else {
                for &col in &report.table.columns {
                    let svg = render_box_plot_svg(&report, col)?;
                    files.extend(write_figure(&svg, &args.out.join(format!("box_{}", col.cli_name())))?);
                }
            }
            files.iter().for_each(|f| println!("{}", f.display()));
            Ok(())
        }
        Figure::Confusion => confusion(&args),
    }
}

fn tsne(args: &AnalyzeArgs) -> CliResult<()> {
    let model = Model::load_checkpoint(&pick_checkpoint(args)?)?;
    let tier = model.spec().tier();
    let sets = match tier {
        Tier::Desk => [DatasetTag::SynthSource, DatasetTag::SynthShifted],
        Tier::Full => [DatasetTag::RaabinTestA, DatasetTag::Lisc],
    };
    let m0 = manifest_for(sets[0], &args.data, None)?;
    let m1 = manifest_for(sets[1], &args.data, None)?;
    let cfg = TsneConfig {
        perplexity: args.perplexity,
        iterations: args.iterations,
        ..TsneConfig::default()
    };
    let fig = build_tsne_figure(
        &model,
        &[&m0, &m1],
        args.n_per_class,
        args.tsne_seed,
        &eval_preprocess(&model),
        &cfg,
        &args.out.join("tsne"),
    )?;
    let csv = args.out.join("embedding.csv");
    fig.embedding.write_csv(&csv)?;
    println!("{} points, perplexity {:.2}", fig.embedding.len(), fig.embedding.perplexity);
    println!("cross-domain intra-class distance ratio: {:.4}", fig.embedding.cross_domain_ratio()?);
    println!("class silhouette: {:.4}", fig.embedding.class_silhouette()?);
    for f in fig.files.iter().chain([&csv]) {
        println!("{}", f.display());
    }
    Ok(())
}

fn confusion(args: &AnalyzeArgs) -> CliResult<()> {
    let mut files = Vec::new();
    if args.checkpoint.is_some() || args.variant.is_some() {
        let model = Model::load_checkpoint(&pick_checkpoint(args)?)?;
        let tag = args.dataset.unwrap_or_else(|| target_set(model.spec().tier()));
        let manifest = manifest_for(tag, &args.data, None)?;
        let r = evaluate(&model, &manifest, &eval_preprocess(&model), 64)?;
        let title = format!("{} ({:.2}%)", tag.display_name(), r.accuracy);
        let stem = args.out.join(format!("confusion_{}", tag.cli_name()));
        files.extend(write_figure(&render_confusion_svg(&r.confusion, &title), &stem)?);
    } else {
        let dir = args
            .input
            .as_ref()
            .ok_or_else(|| CliError::Usage("--figure confusion needs --checkpoint or --in DIR".into()))?;
        let report = build_report(&load_results(dir)?)?;
        for v in &report.variants {
            for d in &v.datasets {
                let title = format!("{} on {}", v.variant.label(), d.dataset.display_name());
                let stem = args.out.join(format!("confusion_{}_{}", v.variant.slug(), d.dataset.cli_name()));
                files.extend(write_figure(&render_confusion_svg(&d.confusion, &title), &stem)?);
            }
        }
    }
    files.iter().for_each(|f| println!("{}", f.display()));
    Ok(())
}
