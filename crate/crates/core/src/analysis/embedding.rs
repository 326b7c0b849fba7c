use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::figures::render_tsne_svg;
use super::stats::{cross_domain_ratio, silhouette};
use super::svg::write_figure;
use super::tsne::{max_perplexity, tsne_embed, TsneConfig};
use crate::datasets::{stratified_sample, BatchLoader, DatasetManifest, DatasetTag, PreprocessConfig, WbcClass};
use crate::error::{Error, Result};
use crate::modelzoo::{Model, ModelSpec};
use crate::seeding::{derive_seed, streams};
use crate::trainer::RunResult;

/// 2-D embedding of penultimate features with its provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingSet {
    pub coords: Vec<[f64; 2]>,
    pub labels: Vec<WbcClass>,
    pub datasets: Vec<DatasetTag>,
    pub spec: ModelSpec,
    pub tsne_seed: u64,
    /// Perplexity actually used (may be lowered for very small samples).
    pub perplexity: f64,
}

#[derive(Serialize, Deserialize)]
struct Row {
    x: f64,
    y: f64,
    label: WbcClass,
    dataset: DatasetTag,
}

impl EmbeddingSet {
    pub fn validate(&self) -> Result<()> {
        let n = self.coords.len();
        if self.labels.len() != n || self.datasets.len() != n {
            return Err(Error::Validation(format!(
                "embedding lists differ in length: {} coords, {} labels, {} datasets",
                n,
                self.labels.len(),
                self.datasets.len()
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    /// Datasets in order of first appearance.
    pub fn dataset_order(&self) -> Vec<DatasetTag> {
        let mut out: Vec<DatasetTag> = Vec::new();
        for d in &self.datasets {
            if !out.contains(d) {
                out.push(*d);
            }
        }
        out
    }

    fn codes(&self) -> (Vec<usize>, Vec<usize>) {
        let order = self.dataset_order();
        (
            self.labels.iter().map(|c| c.code()).collect(),
            self.datasets.iter().map(|d| order.iter().position(|o| o == d).expect("listed")).collect(),
        )
    }

    pub fn cross_domain_ratio(&self) -> Result<f64> {
        let (classes, domains) = self.codes();
        cross_domain_ratio(&self.coords, &classes, &domains)
    }

    pub fn class_silhouette(&self) -> Result<f64> {
        silhouette(&self.coords, &self.codes().0)
    }

    /// CSV with header `x,y,label,dataset`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        self.validate()?;
        let mut w = csv::Writer::from_path(path)?;
        for ((c, label), dataset) in self.coords.iter().zip(&self.labels).zip(&self.datasets) {
            w.serialize(Row {
                x: c[0],
                y: c[1],
                label: *label,
                dataset: *dataset,
            })?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Points from a CSV written by [`EmbeddingSet::write_csv`].
    pub fn read_points(path: &Path) -> Result<(Vec<[f64; 2]>, Vec<WbcClass>, Vec<DatasetTag>)> {
        let mut r = csv::Reader::from_path(path)?;
        let (mut coords, mut labels, mut datasets) = (Vec::new(), Vec::new(), Vec::new());
        for row in r.deserialize() {
            let row: Row = row?;
            coords.push([row.x, row.y]);
            labels.push(row.label);
            datasets.push(row.dataset);
        }
        Ok((coords, labels, datasets))
    }
}

/// Penultimate features `[N, D]` of every image in `manifest`, as f64.
pub fn extract_manifest_features(model: &Model, manifest: &DatasetManifest, cfg: &PreprocessConfig) -> Result<(Vec<f64>, usize)> {
    let mut loader = BatchLoader::new(manifest, cfg.clone(), 0)?;
    let mut out = Vec::new();
    let mut dim = model.feature_dim();
    let idx: Vec<usize> = (0..manifest.len()).collect();
    for chunk in idx.chunks(64) {
        let (x, _) = loader.batch(chunk, None)?;
        let f = model.extract_features(&x)?;
        dim = f.rows_cols().1;
        out.extend(f.data().iter().map(|v| *v as f64));
    }
    Ok((out, dim))
}

/// Output of [`build_tsne_figure`].
#[derive(Debug, Clone)]
pub struct TsneFigure {
    pub embedding: EmbeddingSet,
    pub files: Vec<PathBuf>,
}

/// Sample `n_per_class` images per class from each manifest, embed their
/// features jointly with one t-SNE run and draw the scatter to
/// `<out_stem>.svg` / `.png`. When the sample is too small for the
/// configured perplexity, the largest admissible value is used instead.
pub fn build_tsne_figure(
    model: &Model,
    manifests: &[&DatasetManifest],
    n_per_class: usize,
    seed: u64,
    preprocess: &PreprocessConfig,
    tsne: &TsneConfig,
    out_stem: &Path,
) -> Result<TsneFigure> {
    if manifests.is_empty() {
        return Err(Error::Validation("t-SNE needs at least one dataset".into()));
    }
    let (mut features, mut labels, mut datasets) = (Vec::new(), Vec::new(), Vec::new());
    let mut dim = 0;
    for (i, m) in manifests.iter().enumerate() {
        let sample = stratified_sample(m, n_per_class, derive_seed(seed, &[streams::TSNE, i as u64]))?;
        let (f, d) = extract_manifest_features(model, &sample, preprocess)?;
        dim = d;
        features.extend(f);
        labels.extend(sample.records().iter().map(|r| r.label));
        datasets.extend(sample.records().iter().map(|r| r.dataset));
    }
    let n = labels.len();
    let mut cfg = tsne.clone();
    if n as f64 <= 3.0 * cfg.perplexity {
        let lowered = max_perplexity(n);
        log::warn!("perplexity {} too large for {n} points, using {lowered:.3}", cfg.perplexity);
        cfg.perplexity = lowered;
    }
    let coords = tsne_embed(&features, n, dim, seed, &cfg)?;
    let embedding = EmbeddingSet {
        coords,
        labels,
        datasets,
        spec: model.spec().clone(),
        tsne_seed: seed,
        perplexity: cfg.perplexity,
    };
    embedding.validate()?;
    let title = model.spec().variant_id.map_or("custom model".to_string(), |v| v.label().to_string());
    let files = write_figure(&render_tsne_svg(&embedding, &title), out_stem)?;
    let meta = out_stem.with_extension("json");
    fs::write(&meta, serde_json::to_string_pretty(&embedding)?).map_err(|e| Error::io(&meta, e))?;
    Ok(TsneFigure { embedding, files })
}

/// Index of the run whose accuracy on `dataset` is closest to the mean over
/// runs (first one on ties).
pub fn mean_closest_run(runs: &[RunResult], dataset: DatasetTag) -> Option<usize> {
    let accs: Vec<(usize, f64)> = runs.iter().enumerate().filter_map(|(i, r)| Some((i, r.accuracy(dataset)?))).collect();
    if accs.is_empty() {
        return None;
    }
    let mean = accs.iter().map(|a| a.1).sum::<f64>() / accs.len() as f64;
    accs.iter()
        .min_by(|a, b| (a.1 - mean).abs().total_cmp(&(b.1 - mean).abs()))
        .map(|a| a.0)
}
