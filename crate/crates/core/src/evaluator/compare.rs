use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::ci::{aggregate_ci, CiSummary};
use super::metrics::{per_class_metrics, ClassMetrics, Confusion};
use crate::datasets::{DatasetTag, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::modelzoo::VariantId;
use crate::trainer::RunResult;

pub const CI_LEVEL: f64 = 0.95;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub variant: VariantId,
    pub description: String,
    pub n_runs: usize,
    /// One entry per table column; `None` when no run evaluated that set.
    pub cells: Vec<Option<CiSummary>>,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub columns: Vec<DatasetTag>,
    pub rows: Vec<ComparisonRow>,
}

/// Mean ± CI per variant and test set, rows in table order (a, a', i, ii,
/// iii, b, b', c, d) and columns in dataset order.
pub fn compare_variants(results: &BTreeMap<VariantId, Vec<RunResult>>) -> Result<ComparisonTable> {
    if results.is_empty() {
        return Err(Error::Validation("no run results to compare".into()));
    }
    let columns: Vec<DatasetTag> = results
        .values()
        .flatten()
        .flat_map(|r| r.eval_results.keys().copied())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut rows = Vec::new();
    for variant in VariantId::ALL {
        let Some(runs) = results.get(&variant) else { continue };
        if runs.is_empty() {
            return Err(Error::Validation(format!("variant {variant} has no run results")));
        }
        let mut notes = Vec::new();
        let mut cells = Vec::with_capacity(columns.len());
        for &col in &columns {
            let values: Vec<f64> = runs.iter().filter_map(|r| r.accuracy(col)).collect();
            if values.is_empty() {
                notes.push(format!("no {} evaluation", col.display_name()));
                cells.push(None);
                continue;
            }
            if values.len() < runs.len() {
                notes.push(format!("{}: {} of {} runs", col.display_name(), values.len(), runs.len()));
            }
            cells.push(Some(aggregate_ci(&values, CI_LEVEL)?));
        }
        if runs.len() == 1 {
            notes.push("single run: point estimate, CI undefined".into());
        }
        rows.push(ComparisonRow {
            variant,
            description: variant.description().into(),
            n_runs: runs.len(),
            cells,
            notes,
        });
    }
    Ok(ComparisonTable { columns, rows })
}

impl ComparisonTable {
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["variant".to_string(), "description".into(), "n_runs".into()];
        for c in &self.columns {
            header.push(format!("{}_mean", c.cli_name()));
            header.push(format!("{}_ci95", c.cli_name()));
        }
        header.push("notes".into());
        w.write_record(&header)?;
        for row in &self.rows {
            let mut rec = vec![row.variant.slug().to_string(), row.description.clone(), row.n_runs.to_string()];
            for cell in &row.cells {
                match cell {
                    Some(ci) => {
                        rec.push(format!("{:.2}", ci.mean));
                        rec.push(if ci.undefined { String::new() } else { format!("{:.2}", ci.half_width) });
                    }
                    None => rec.extend([String::new(), String::new()]),
                }
            }
            rec.push(row.notes.join("; "));
            w.write_record(&rec)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Validation(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn to_text(&self) -> String {
        let mut grid: Vec<Vec<String>> = Vec::new();
        let mut header = vec!["Variant".to_string(), "Runs".to_string()];
        header.extend(self.columns.iter().map(|c| c.display_name().to_string()));
        grid.push(header);
        for row in &self.rows {
            let mut line = vec![row.variant.label().to_string(), row.n_runs.to_string()];
            line.extend(row.cells.iter().map(|c| c.map_or("-".to_string(), |ci| ci.display())));
            grid.push(line);
        }
        let widths: Vec<usize> = (0..grid[0].len())
            .map(|j| grid.iter().map(|r| r[j].chars().count()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for (i, line) in grid.iter().enumerate() {
            let cells: Vec<String> = line
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(j, (s, w))| if j == 0 { format!("{s:<w$}") } else { format!("{s:>w$}") })
                .collect();
            out.push_str(cells.join("  ").trim_end());
            out.push('\n');
            if i == 0 {
                out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
                out.push('\n');
            }
        }
        let notes: Vec<String> = self
            .rows
            .iter()
            .filter(|r| !r.notes.is_empty())
            .map(|r| format!("{}: {}", r.variant.label(), r.notes.join("; ")))
            .collect();
        if !notes.is_empty() {
            out.push('\n');
            for n in notes {
                out.push_str(&n);
                out.push('\n');
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub dataset: DatasetTag,
    pub accuracy: CiSummary,
    pub per_seed_accuracy: Vec<(u64, f64)>,
    /// Confusion counts summed over seeds.
    pub confusion: Confusion,
    /// Per-class metrics of the summed confusion matrix.
    pub metrics: ClassMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantReport {
    pub variant: VariantId,
    pub seeds: Vec<u64>,
    pub datasets: Vec<DatasetSummary>,
}

/// Aggregate over seeds for every variant. Serializes deterministically:
/// no timestamps or host data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub level: f64,
    pub table: ComparisonTable,
    pub variants: Vec<VariantReport>,
}

pub fn build_report(results: &BTreeMap<VariantId, Vec<RunResult>>) -> Result<BenchmarkReport> {
    let table = compare_variants(results)?;
    let mut variants = Vec::new();
    for row in &table.rows {
        let runs = &results[&row.variant];
        let mut datasets = Vec::new();
        for (&col, cell) in table.columns.iter().zip(&row.cells) {
            let Some(ci) = cell else { continue };
            let mut confusion = [[0u64; NUM_CLASSES]; NUM_CLASSES];
            let mut per_seed = Vec::new();
            for r in runs {
                if let Some(e) = r.eval_results.get(&col) {
                    per_seed.push((r.seed, e.accuracy));
                    for (acc, src) in confusion.iter_mut().flatten().zip(e.confusion.iter().flatten()) {
                        *acc += src;
                    }
                }
            }
            datasets.push(DatasetSummary {
                dataset: col,
                accuracy: *ci,
                per_seed_accuracy: per_seed,
                metrics: per_class_metrics(&confusion),
                confusion,
            });
        }
        variants.push(VariantReport {
            variant: row.variant,
            seeds: runs.iter().map(|r| r.seed).collect(),
            datasets,
        });
    }
    Ok(BenchmarkReport {
        level: CI_LEVEL,
        table,
        variants,
    })
}

/// Group results by variant id; results of custom specs are skipped.
pub fn group_by_variant(results: Vec<RunResult>) -> BTreeMap<VariantId, Vec<RunResult>> {
    let mut map: BTreeMap<VariantId, Vec<RunResult>> = BTreeMap::new();
    for r in results {
        if let Some(v) = r.spec.variant_id {
            map.entry(v).or_default().push(r);
        }
    }
    for runs in map.values_mut() {
        runs.sort_by_key(|r| r.seed);
    }
    map
}
