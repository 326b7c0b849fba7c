use serde::{Deserialize, Serialize};

use crate::datasets::{BatchLoader, DatasetManifest, DatasetTag, PreprocessConfig, WbcClass, NUM_CLASSES, DEFAULT_CACHE_BYTES};
use crate::error::{Error, Result};
use crate::nn::Module;

/// Counts indexed `[true][predicted]` by class code.
pub type Confusion = [[u64; NUM_CLASSES]; NUM_CLASSES];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub dataset: DatasetTag,
    pub confusion: Confusion,
    /// Percent of correctly classified samples.
    pub accuracy: f64,
    pub n: u64,
    /// Classes with no samples in the evaluated manifest.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub absent_classes: Vec<WbcClass>,
}

impl EvalResult {
    pub fn from_confusion(dataset: DatasetTag, confusion: Confusion) -> Self {
        let n: u64 = confusion.iter().flatten().sum();
        let trace: u64 = (0..NUM_CLASSES).map(|i| confusion[i][i]).sum();
        let accuracy = if n == 0 { 0.0 } else { 100.0 * trace as f64 / n as f64 };
        let absent_classes = WbcClass::ALL
            .into_iter()
            .filter(|c| confusion[c.code()].iter().sum::<u64>() == 0)
            .collect();
        Self {
            dataset,
            confusion,
            accuracy,
            n,
            absent_classes,
        }
    }

    /// Build from parallel lists of true and predicted class codes.
    pub fn from_predictions(dataset: DatasetTag, truth: &[usize], predicted: &[usize]) -> Result<Self> {
        if truth.len() != predicted.len() {
            return Err(Error::Shape(format!(
                "{} labels but {} predictions",
                truth.len(),
                predicted.len()
            )));
        }
        let mut confusion = [[0u64; NUM_CLASSES]; NUM_CLASSES];
        for (&t, &p) in truth.iter().zip(predicted) {
            if t >= NUM_CLASSES || p >= NUM_CLASSES {
                return Err(Error::Validation(format!("class code out of range: true {t}, predicted {p}")));
            }
            confusion[t][p] += 1;
        }
        Ok(Self::from_confusion(dataset, confusion))
    }

    pub fn metrics(&self) -> ClassMetrics {
        per_class_metrics(&self.confusion)
    }
}

/// Evaluate `model` (inference path) on every record of `manifest`.
pub fn evaluate(
    model: &dyn Module,
    manifest: &DatasetManifest,
    cfg: &PreprocessConfig,
    batch_size: usize,
) -> Result<EvalResult> {
    let dataset = manifest
        .dataset()
        .ok_or_else(|| Error::Validation("cannot evaluate on an empty or mixed-dataset manifest".into()))?;
    if batch_size == 0 {
        return Err(Error::Validation("batch_size must be positive".into()));
    }
    let mut loader = BatchLoader::new(manifest, cfg.clone(), DEFAULT_CACHE_BYTES.min(64 << 20))?;
    let idx: Vec<usize> = (0..manifest.len()).collect();
    let mut truth = Vec::with_capacity(manifest.len());
    let mut predicted = Vec::with_capacity(manifest.len());
    for chunk in idx.chunks(batch_size) {
        let (x, labels) = loader.batch(chunk, None)?;
        let logits = model.forward(&x)?;
        predicted.extend(logits.argmax_rows());
        truth.extend(labels);
    }
    let result = EvalResult::from_predictions(dataset, &truth, &predicted)?;
    if !result.absent_classes.is_empty() {
        let names: Vec<&str> = result.absent_classes.iter().map(|c| c.name()).collect();
        log::warn!("{}: no samples for {}", dataset.name(), names.join(", "));
    }
    Ok(result)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetric {
    pub class: WbcClass,
    pub precision: f64,
    pub recall: f64,
    pub f_measure: f64,
    /// Set when the corresponding denominator was zero; the value is then 0.
    pub precision_undefined: bool,
    pub recall_undefined: bool,
    pub f_undefined: bool,
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub per_class: Vec<ClassMetric>,
}

impl ClassMetrics {
    pub fn get(&self, class: WbcClass) -> &ClassMetric {
        &self.per_class[class.code()]
    }
}

/// Harmonic mean of two percentages; `None` when both are zero.
pub fn f_measure(precision: f64, recall: f64) -> Option<f64> {
    let s = precision + recall;
    (s > 0.0).then(|| 2.0 * precision * recall / s)
}

pub fn per_class_metrics(confusion: &Confusion) -> ClassMetrics {
    let per_class = WbcClass::ALL
        .into_iter()
        .map(|class| {
            let k = class.code();
            let tp = confusion[k][k] as f64;
            let predicted: u64 = (0..NUM_CLASSES).map(|t| confusion[t][k]).sum();
            let support: u64 = confusion[k].iter().sum();
            let ratio = |den: u64| if den == 0 { (0.0, true) } else { (100.0 * tp / den as f64, false) };
            let (precision, p_undef) = ratio(predicted);
            let (recall, r_undef) = ratio(support);
            let f = if p_undef || r_undef { None } else { f_measure(precision, recall) };
            ClassMetric {
                class,
                precision,
                recall,
                f_measure: f.unwrap_or(0.0),
                precision_undefined: p_undef,
                recall_undefined: r_undef,
                f_undefined: f.is_none(),
                support,
            }
        })
        .collect();
    ClassMetrics { per_class }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_confusion_is_perfect() {
        let mut c = [[0u64; 5]; 5];
        for (i, row) in c.iter_mut().enumerate() {
            row[i] = 3 + i as u64;
        }
        let r = EvalResult::from_confusion(DatasetTag::Lisc, c);
        assert_eq!(r.accuracy, 100.0);
        for m in r.metrics().per_class {
            assert_eq!((m.precision, m.recall, m.f_measure), (100.0, 100.0, 100.0));
        }
    }

    #[test]
    fn absent_class_flags_without_crashing() {
        let r = EvalResult::from_predictions(DatasetTag::RaabinTestB, &[2, 2, 0], &[2, 2, 2]).unwrap();
        assert!((r.accuracy - 200.0 / 3.0).abs() < 1e-12);
        assert_eq!(r.absent_classes, vec![WbcClass::Monocyte, WbcClass::Eosinophil, WbcClass::Basophil]);
        let m = r.metrics();
        let mono = m.get(WbcClass::Monocyte);
        assert!(mono.precision_undefined && mono.recall_undefined && mono.f_undefined);
        assert_eq!(mono.f_measure, 0.0);
        let lym = m.get(WbcClass::Lymphocyte);
        assert!(lym.precision_undefined && !lym.recall_undefined && lym.recall == 0.0);
    }
}
