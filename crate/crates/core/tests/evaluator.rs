use std::collections::BTreeMap;

use proptest::prelude::*;
use wbc_core::datasets::{DatasetTag, WbcClass};
use wbc_core::evaluator::{aggregate_ci, compare_variants, per_class_metrics, EvalResult};

// Rows are true classes, columns predictions, in code order
// (lymphocyte, monocyte, neutrophil, eosinophil, basophil).
const LISC_CONFUSION: [[u64; 5]; 5] = [
    [54, 5, 0, 0, 0],
    [20, 28, 0, 0, 0],
    [0, 0, 56, 0, 0],
    [1, 0, 1, 36, 1],
    [4, 18, 0, 16, 17],
];

#[test]
fn lisc_f_measures_match_published_table() {
    let m = per_class_metrics(&LISC_CONFUSION);
    let published = [
        (WbcClass::Basophil, 94.44, 30.91, 46.58),
        (WbcClass::Eosinophil, 69.23, 92.31, 79.12),
        (WbcClass::Lymphocyte, 68.35, 91.53, 78.26),
        (WbcClass::Monocyte, 54.90, 58.33, 56.57),
        (WbcClass::Neutrophil, 98.25, 100.0, 99.12),
    ];
    for (class, p, r, f) in published {
        let c = m.get(class);
        assert!((c.precision - p).abs() < 0.01, "{class:?} precision {}", c.precision);
        assert!((c.recall - r).abs() < 0.01, "{class:?} recall {}", c.recall);
        assert!((c.f_measure - f).abs() < 0.01, "{class:?} F {}", c.f_measure);
    }
    let acc = EvalResult::from_confusion(DatasetTag::Lisc, LISC_CONFUSION).accuracy;
    assert!((acc - 74.32).abs() < 0.01, "{acc}");
}

#[test]
fn constant_neutrophil_predictor_on_test_b() {
    let counts = [148usize, 0, 1971, 0, 0];
    let truth: Vec<usize> = counts.iter().enumerate().flat_map(|(c, &n)| std::iter::repeat_n(c, n)).collect();
    let pred = vec![WbcClass::Neutrophil.code(); truth.len()];
    let r = EvalResult::from_predictions(DatasetTag::RaabinTestB, &truth, &pred).unwrap();
    assert_eq!(format!("{:.1}", r.accuracy), "93.0");
    assert_eq!(r.absent_classes.len(), 3);
    assert!(r.metrics().get(WbcClass::Monocyte).f_undefined);
}

#[test]
fn ci_of_one_two_three() {
    // Two degrees of freedom: F(t) = 1/2 + t / (2 sqrt(2 + t^2)), so the
    // 0.975 quantile is sqrt(2 q^2 / (1 - q^2)) with q = 0.95.
    let q: f64 = 0.95;
    let t = (2.0 * q * q / (1.0 - q * q)).sqrt();
    let ci = aggregate_ci(&[1.0, 2.0, 3.0], 0.95).unwrap();
    assert!((ci.mean - 2.0).abs() < 1e-12);
    assert!((ci.half_width - t / 3f64.sqrt()).abs() < 1e-9);
    assert_eq!(format!("{:.3} ± {:.3}", ci.mean, ci.half_width), "2.000 ± 2.484");
    let flat = aggregate_ci(&[97.5; 5], 0.95).unwrap();
    assert_eq!(flat.display(), "97.50±0.00");
    assert!(aggregate_ci(&[], 0.95).is_err());
    assert!(aggregate_ci(&[1.0], 0.95).unwrap().undefined);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]
    #[test]
    fn ci_is_translation_and_scale_equivariant(
        values in prop::collection::vec(-100.0f64..100.0, 2..12),
        shift in -50.0f64..50.0,
        scale in 0.1f64..10.0,
    ) {
        let base = aggregate_ci(&values, 0.95).unwrap();
        let moved: Vec<f64> = values.iter().map(|v| v * scale + shift).collect();
        let ci = aggregate_ci(&moved, 0.95).unwrap();
        prop_assert!((ci.mean - (base.mean * scale + shift)).abs() < 1e-9 * (1.0 + ci.mean.abs()));
        prop_assert!((ci.half_width - base.half_width * scale).abs() < 1e-9 * (1.0 + ci.half_width));
    }
}

#[test]
fn comparison_rejects_empty_input() {
    assert!(compare_variants(&BTreeMap::new()).is_err());
}
