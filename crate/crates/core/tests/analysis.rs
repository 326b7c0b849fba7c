use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wbc_core::analysis::{
    build_tsne_figure, cross_domain_ratio, render_bar_chart_svg, render_confusion_svg, render_report_figures,
    silhouette, tsne_embed, EmbeddingSet, TsneConfig,
};
use wbc_core::datasets::{make_synthetic_domain_pair, DatasetTag, PreprocessConfig, SynthConfig, WbcClass};
use wbc_core::evaluator::{build_report, EvalResult};
use wbc_core::modelzoo::{build_model, Tier, VariantId};
use wbc_core::trainer::{RunResult, TrainConfig};

fn blobs(n_each: usize, d: usize, sep: f64, seed: u64) -> (Vec<f64>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = Vec::new();
    let mut labels = Vec::new();
    for blob in 0..2 {
        for _ in 0..n_each {
            for k in 0..d {
                let centre = if k == 0 { blob as f64 * sep } else { 0.0 };
                x.push(centre + rng.random_range(-1.0..1.0));
            }
            labels.push(blob);
        }
    }
    (x, labels)
}

// Brute-force silhouette written independently of the library.
fn oracle_silhouette(p: &[[f64; 2]], l: &[usize]) -> f64 {
    let d = |a: [f64; 2], b: [f64; 2]| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
    let mut s = 0.0;
    for i in 0..p.len() {
        let own: Vec<f64> = (0..p.len()).filter(|&j| j != i && l[j] == l[i]).map(|j| d(p[i], p[j])).collect();
        let other: Vec<f64> = (0..p.len()).filter(|&j| l[j] != l[i]).map(|j| d(p[i], p[j])).collect();
        let a = own.iter().sum::<f64>() / own.len() as f64;
        let b = other.iter().sum::<f64>() / other.len() as f64;
        s += (b - a) / a.max(b);
    }
    s / p.len() as f64
}

#[test]
fn separated_blobs_stay_separated() {
    let (x, labels) = blobs(60, 10, 20.0, 1);
    let y = tsne_embed(&x, 120, 10, 3, &TsneConfig::default()).unwrap();
    assert_eq!(y.len(), 120);
    let oracle = oracle_silhouette(&y, &labels);
    assert!(oracle > 0.5, "silhouette {oracle}");
    assert!((silhouette(&y, &labels).unwrap() - oracle).abs() < 1e-9);
    let mean = y.iter().fold([0.0, 0.0], |a, p| [a[0] + p[0], a[1] + p[1]]);
    assert!(mean[0].abs() / 120.0 < 1e-6 && mean[1].abs() / 120.0 < 1e-6);
}

#[test]
fn protocol_sized_input_is_deterministic() {
    let (x, _) = blobs(195, 8, 5.0, 2);
    let cfg = TsneConfig {
        iterations: 300,
        ..TsneConfig::default()
    };
    let a = tsne_embed(&x, 390, 8, 11, &cfg).unwrap();
    let b = tsne_embed(&x, 390, 8, 11, &cfg).unwrap();
    assert_eq!(a.len(), 390);
    assert_eq!(a, b);
}

#[test]
fn perplexity_bound_is_reported() {
    let (x, _) = blobs(10, 3, 5.0, 0);
    let err = tsne_embed(&x, 20, 3, 0, &TsneConfig::default()).unwrap_err().to_string();
    assert!(err.contains("perplexity") && err.contains("6.333"), "{err}");
    let nan = vec![f64::NAN; 300];
    assert!(tsne_embed(&nan, 100, 3, 0, &TsneConfig::default()).is_err());
}

#[test]
fn cross_domain_ratio_by_hand() {
    // One class: domain 0 at x=0 and x=1, domain 1 at x=10 and x=11.
    let p = [[0.0, 0.0], [1.0, 0.0], [10.0, 0.0], [11.0, 0.0]];
    let r = cross_domain_ratio(&p, &[0, 0, 0, 0], &[0, 0, 1, 1]).unwrap();
    // cross pairs: 10, 11, 9, 10 -> 10; within pairs: 1, 1 -> 1
    assert!((r - 10.0).abs() < 1e-12);
    assert!(cross_domain_ratio(&p, &[0, 1, 2, 3], &[0, 0, 1, 1]).is_err());
}

fn sample_set() -> EmbeddingSet {
    EmbeddingSet {
        coords: vec![[0.5, -1.25], [2.0, 3.0]],
        labels: vec![WbcClass::Basophil, WbcClass::Neutrophil],
        datasets: vec![DatasetTag::RaabinTrain, DatasetTag::Lisc],
        spec: VariantId::A.spec(Tier::Desk).unwrap(),
        tsne_seed: 0,
        perplexity: 30.0,
    }
}

#[test]
fn embedding_csv_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("e.csv");
    let set = sample_set();
    set.write_csv(&path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("x,y,label,dataset\n"), "{text}");
    let (c, l, d) = EmbeddingSet::read_points(&path).unwrap();
    assert_eq!((c, l, d), (set.coords.clone(), set.labels.clone(), set.datasets.clone()));
    let mut bad = set;
    bad.labels.pop();
    assert!(bad.validate().is_err());
}

#[test]
fn confusion_annotations_match_counts() {
    let c = [[54, 5, 0, 0, 0], [20, 28, 0, 0, 0], [0, 0, 56, 0, 0], [1, 0, 1, 36, 1], [4, 18, 0, 16, 17]];
    let svg = render_confusion_svg(&c, "test");
    let numbers: Vec<u64> = svg
        .lines()
        .filter(|l| l.starts_with("<text") && l.contains("font-size=\"13.0\""))
        .filter_map(|l| l.split('>').nth(1)?.split('<').next()?.parse().ok())
        .collect();
    assert_eq!(numbers, c.iter().flatten().copied().collect::<Vec<_>>());
}

fn fake_run(variant: VariantId, seed: u64, correct: u64) -> RunResult {
    let mut confusion = [[0u64; 5]; 5];
    confusion[0][0] = correct;
    confusion[0][1] = 10 - correct;
    let mut eval_results = BTreeMap::new();
    eval_results.insert(DatasetTag::Lisc, EvalResult::from_confusion(DatasetTag::Lisc, confusion));
    RunResult {
        seed,
        spec: variant.spec(Tier::Desk).unwrap(),
        config: TrainConfig::desk(),
        epoch_trace: vec![],
        eval_results,
        environment: wbc_core::trainer::Environment::cpu(true),
        frozen: None,
        wall_time: 0.0,
    }
}

#[test]
fn report_figures_are_deterministic() {
    let mut runs = BTreeMap::new();
    runs.insert(VariantId::A, (0..3).map(|s| fake_run(VariantId::A, s, 2 + s)).collect());
    let report = build_report(&runs).unwrap();
    let bars = render_bar_chart_svg(&report).unwrap();
    assert_eq!(bars.matches("<rect").count(), 1 + 1 + 1, "background, one bar, one legend key");
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let fa = render_report_figures(&report, a.path()).unwrap();
    let fb = render_report_figures(&report, b.path()).unwrap();
    assert_eq!(fa.len(), 6);
    for (x, y) in fa.iter().zip(&fb) {
        assert_eq!(std::fs::read(x).unwrap(), std::fs::read(y).unwrap(), "{}", x.display());
    }
    let png = fa.iter().find(|p| p.extension().unwrap() == "png").unwrap();
    image::open(png).unwrap();
}

#[test]
fn tiny_sample_figure_still_renders() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SynthConfig {
        n_per_class_train: 2,
        n_per_class_test: 2,
        image_size: 16,
        ..SynthConfig::default()
    };
    let pair = make_synthetic_domain_pair(&cfg, &dir.path().join("data")).unwrap();
    let model = build_model(&VariantId::I.spec(Tier::Desk).unwrap(), None, 0).unwrap();
    let fig = build_tsne_figure(
        &model,
        &[&pair.test_source, &pair.test_shifted],
        1,
        0,
        &PreprocessConfig::with_size(16),
        &TsneConfig::default(),
        &dir.path().join("tsne"),
    )
    .unwrap();
    assert_eq!(fig.embedding.len(), 10);
    assert!(fig.embedding.perplexity < 10.0 / 3.0);
    assert!(dir.path().join("tsne.svg").exists() && dir.path().join("tsne.png").exists());
}
