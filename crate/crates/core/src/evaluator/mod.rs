//! Accuracy, confusion matrices, per-class precision/recall/F-measure,
//! confidence intervals over seeds and the cross-variant comparison table.

mod ci;
mod compare;
mod metrics;

pub use ci::{aggregate_ci, CiSummary};
pub use compare::{
    build_report, compare_variants, group_by_variant, BenchmarkReport, ComparisonRow, ComparisonTable, DatasetSummary,
    VariantReport, CI_LEVEL,
};
pub use metrics::{evaluate, f_measure, per_class_metrics, ClassMetric, ClassMetrics, Confusion, EvalResult};
