use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use wbc_core::analysis::render_report_figures;
use wbc_core::evaluator::{build_report, group_by_variant, BenchmarkReport};
use wbc_core::modelzoo::VariantId;
use wbc_core::trainer::{collect_results, write_json_atomic, RunResult};
use wbc_core::Error;

use crate::error::{CliError, CliResult};
use crate::ReportArgs;

/// `report.json`, `report.csv`, `report.txt` and optionally `figures/`.
pub fn write_report(results: &BTreeMap<VariantId, Vec<RunResult>>, out: &Path, figures: bool) -> CliResult<BenchmarkReport> {
    let report = build_report(results)?;
    write_json_atomic(&out.join("report.json"), &report)?;
    let csv = out.join("report.csv");
    fs::write(&csv, report.table.to_csv()?).map_err(|e| Error::io(&csv, e))?;
    let txt = out.join("report.txt");
    fs::write(&txt, report.table.to_text()).map_err(|e| Error::io(&txt, e))?;
    if figures {
        render_report_figures(&report, &out.join("figures"))?;
    }
    Ok(report)
}

pub fn load_results(dir: &Path) -> CliResult<BTreeMap<VariantId, Vec<RunResult>>> {
    let results = group_by_variant(collect_results(dir)?);
    if results.is_empty() {
        return Err(CliError::validation(format!("no run results found in {}", dir.display())));
    }
    Ok(results)
}

pub fn report(args: ReportArgs) -> CliResult<()> {
    let results = load_results(&args.input)?;
    let out = args.out.as_deref().unwrap_or(&args.input);
    let report = write_report(&results, out, !args.no_figures)?;
    print!("{}", report.table.to_text());
    Ok(())
}
