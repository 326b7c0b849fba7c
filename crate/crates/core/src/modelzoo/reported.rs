//! Published mean ± 95% CI accuracies for the full-tier variants.
//!
//! Some values appear twice in the source with different numbers (the
//! ablation summary and the supplementary listing). Both are kept.

use super::spec::VariantId;
use crate::datasets::DatasetTag;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Reported {
    pub variant: VariantId,
    pub dataset: DatasetTag,
    pub mean: f64,
    pub half_width: f64,
    pub source: ReportSource,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportSource {
    /// Main ablation summary and running text.
    Summary,
    /// Supplementary per-variant listing.
    Supplementary,
}

const fn r(variant: VariantId, dataset: DatasetTag, mean: f64, half_width: f64, source: ReportSource) -> Reported {
    Reported { variant, dataset, mean, half_width, source }
}

use DatasetTag::{Lisc, RaabinTestA as TestA};
use ReportSource::{Summary as S, Supplementary as X};
use VariantId as V;

pub const REPORTED: &[Reported] = &[
    r(V::A, TestA, 98.53, 0.18, S),
    r(V::A, Lisc, 23.11, 3.04, S),
    r(V::APrime, TestA, 98.45, 0.19, S),
    r(V::APrime, TestA, 98.46, 0.19, X),
    r(V::APrime, Lisc, 27.74, 3.44, S),
    r(V::I, TestA, 98.24, 0.14, X),
    r(V::I, Lisc, 73.07, 2.07, S),
    r(V::Ii, TestA, 98.94, 0.06, X),
    r(V::Ii, Lisc, 51.48, 7.14, S),
    r(V::Iii, TestA, 98.67, 0.12, X),
    r(V::Iii, Lisc, 74.28, 2.48, S),
    r(V::Iii, Lisc, 74.24, 2.46, X),
    r(V::B, TestA, 98.75, 0.06, S),
    r(V::B, Lisc, 74.44, 2.72, S),
    r(V::BPrime, TestA, 98.68, 0.23, S),
    r(V::BPrime, TestA, 98.64, 0.18, X),
    r(V::BPrime, Lisc, 33.74, 8.04, S),
    r(V::BPrime, Lisc, 32.33, 6.17, X),
    r(V::C, TestA, 98.33, 0.14, X),
    r(V::C, Lisc, 69.77, 3.09, X),
    r(V::D, TestA, 98.83, 0.09, X),
    r(V::D, Lisc, 67.35, 2.51, X),
];

/// Every published value for a variant on a dataset (one or two entries).
pub fn reported(variant: VariantId, dataset: DatasetTag) -> Vec<Reported> {
    REPORTED.iter().filter(|e| e.variant == variant && e.dataset == dataset).copied().collect()
}

/// Union of the published intervals, used as a full-tier target range.
pub fn reported_range(variant: VariantId, dataset: DatasetTag) -> Option<(f64, f64)> {
    let all = reported(variant, dataset);
    let lo = all.iter().map(|e| e.mean - e.half_width).reduce(f64::min)?;
    let hi = all.iter().map(|e| e.mean + e.half_width).reduce(f64::max)?;
    Some((lo, hi))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conflicting_values_are_both_kept() {
        assert_eq!(reported(V::BPrime, Lisc).len(), 2);
        let (lo, hi) = reported_range(V::BPrime, Lisc).unwrap();
        assert!((lo - 25.70).abs() < 1e-9 && (hi - 41.78).abs() < 1e-9);
        assert_eq!(reported(V::A, Lisc).len(), 1);
        assert!(VariantId::ALL.iter().all(|v| reported_range(*v, Lisc).is_some()));
    }
}
