use std::path::{Path, PathBuf};

use super::embedding::EmbeddingSet;
use super::svg::{padded_range, write_figure, y_axis, Scale, Svg};
use crate::datasets::{DatasetTag, WbcClass, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::evaluator::{BenchmarkReport, Confusion};

/// Five-colour palette as RGB fractions.
pub const PALETTE: [[f64; 3]; 5] = [
    [0.12157, 0.46667, 0.70588],
    [1.00000, 0.49804, 0.05490],
    [0.17255, 0.62745, 0.17255],
    [0.83922, 0.15294, 0.15686],
    [0.58039, 0.40392, 0.74118],
];

pub fn hex(rgb: [f64; 3]) -> String {
    let c = |v: f64| (v * 255.0).round().clamp(0.0, 255.0) as u8;
    format!("#{:02x}{:02x}{:02x}", c(rgb[0]), c(rgb[1]), c(rgb[2]))
}

/// Classes take palette slots in alphabetical order of their names.
pub fn class_color(class: WbcClass) -> String {
    let slot = match class {
        WbcClass::Basophil => 0,
        WbcClass::Eosinophil => 1,
        WbcClass::Lymphocyte => 2,
        WbcClass::Monocyte => 3,
        WbcClass::Neutrophil => 4,
    };
    hex(PALETTE[slot])
}

const LEGEND_ORDER: [WbcClass; 5] = [
    WbcClass::Basophil,
    WbcClass::Eosinophil,
    WbcClass::Lymphocyte,
    WbcClass::Monocyte,
    WbcClass::Neutrophil,
];

fn marker(svg: &mut Svg, domain: usize, x: f64, y: f64, color: &str) {
    match domain {
        0 => svg.cross(x, y, 3.5, color),
        1 => svg.circle(x, y, 3.5, color, 0.85),
        _ => svg.rect(x - 3.0, y - 3.0, 6.0, 6.0, color, None),
    }
}

/// Scatter of an embedding: colour encodes the class, marker the dataset
/// (cross for the first dataset, filled circle for the second).
pub fn render_tsne_svg(set: &EmbeddingSet, title: &str) -> String {
    let (w, h) = (620.0, 520.0);
    let mut svg = Svg::new(w, h);
    let domains = set.dataset_order();
    let (x0, x1) = padded_range(set.coords.iter().map(|p| p[0]), 0.05);
    let (y0, y1) = padded_range(set.coords.iter().map(|p| p[1]), 0.05);
    let sx = Scale { d0: x0, d1: x1, p0: 60.0, p1: 460.0 };
    let sy = Scale { d0: y0, d1: y1, p0: 470.0, p1: 50.0 };
    svg.rect(60.0, 50.0, 400.0, 420.0, "#ffffff", Some("#000000"));
    for ((p, class), tag) in set.coords.iter().zip(&set.labels).zip(&set.datasets) {
        let d = domains.iter().position(|t| t == tag).unwrap_or(0);
        marker(&mut svg, d, sx.map(p[0]), sy.map(p[1]), &class_color(*class));
    }
    svg.text(260.0, 30.0, 14.0, "middle", title);
    let mut ly = 70.0;
    for class in LEGEND_ORDER {
        svg.circle(480.0, ly - 4.0, 4.0, &class_color(class), 1.0);
        svg.text(492.0, ly, 11.0, "start", class.name());
        ly += 18.0;
    }
    ly += 10.0;
    for (d, tag) in domains.iter().enumerate() {
        marker(&mut svg, d, 480.0, ly - 4.0, "#333333");
        svg.text(492.0, ly, 11.0, "start", tag.display_name());
        ly += 18.0;
    }
    svg.finish()
}

/// Linear-interpolated quantile of sorted values.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Box plot of per-seed accuracy on one test set, one box per variant, with
/// every run drawn as a black dot.
pub fn render_box_plot_svg(report: &BenchmarkReport, dataset: DatasetTag) -> Result<String> {
    let groups: Vec<(String, Vec<f64>)> = report
        .variants
        .iter()
        .filter_map(|v| {
            let d = v.datasets.iter().find(|d| d.dataset == dataset)?;
            Some((v.variant.label().to_string(), d.per_seed_accuracy.iter().map(|(_, a)| *a).collect()))
        })
        .collect();
    if groups.is_empty() {
        return Err(Error::Validation(format!("no results on {} to plot", dataset.display_name())));
    }
    let slot = 70.0;
    let w = 100.0 + slot * groups.len() as f64;
    let mut svg = Svg::new(w, 400.0);
    let (lo, hi) = padded_range(groups.iter().flat_map(|g| g.1.iter().copied()), 0.1);
    let sy = Scale { d0: lo, d1: hi, p0: 340.0, p1: 40.0 };
    y_axis(&mut svg, &sy, 70.0, w - 20.0, "Accuracy (%)");
    svg.text(w / 2.0, 24.0, 13.0, "middle", dataset.display_name());
    for (g, (label, values)) in groups.iter().enumerate() {
        let cx = 70.0 + slot * (g as f64 + 0.5);
        let mut sorted = values.clone();
        sorted.sort_by(f64::total_cmp);
        let (q1, med, q3) = (quantile(&sorted, 0.25), quantile(&sorted, 0.5), quantile(&sorted, 0.75));
        let iqr = q3 - q1;
        let wlo = sorted.iter().copied().find(|v| *v >= q1 - 1.5 * iqr).unwrap_or(q1);
        let whi = sorted.iter().rev().copied().find(|v| *v <= q3 + 1.5 * iqr).unwrap_or(q3);
        let half = slot * 0.3;
        svg.line(cx, sy.map(wlo), cx, sy.map(q1), "#000000", 1.0);
        svg.line(cx, sy.map(q3), cx, sy.map(whi), "#000000", 1.0);
        svg.line(cx - half / 2.0, sy.map(wlo), cx + half / 2.0, sy.map(wlo), "#000000", 1.0);
        svg.line(cx - half / 2.0, sy.map(whi), cx + half / 2.0, sy.map(whi), "#000000", 1.0);
        svg.rect(cx - half, sy.map(q3), 2.0 * half, sy.map(q1) - sy.map(q3), &hex(PALETTE[0]), Some("#000000"));
        svg.line(cx - half, sy.map(med), cx + half, sy.map(med), "#ff7f0e", 2.0);
        for (i, v) in values.iter().enumerate() {
            let jitter = ((i as f64 * 0.618_034).fract() - 0.5) * half;
            svg.circle(cx + jitter, sy.map(*v), 2.5, "#000000", 1.0);
        }
        svg.text(cx, 360.0, 12.0, "middle", label);
    }
    Ok(svg.finish())
}

/// Grouped bars of mean accuracy with confidence-interval whiskers: one
/// group per variant, one bar per test set.
pub fn render_bar_chart_svg(report: &BenchmarkReport) -> Result<String> {
    let table = &report.table;
    if table.rows.is_empty() || table.columns.is_empty() {
        return Err(Error::Validation("report has no cells to plot".into()));
    }
    let bars = table.columns.len() as f64;
    let bar_w = 18.0;
    let group_w = bar_w * bars + 24.0;
    let w = 100.0 + group_w * table.rows.len() as f64 + 150.0;
    let mut svg = Svg::new(w, 400.0);
    let sy = Scale { d0: 0.0, d1: 100.0, p0: 340.0, p1: 40.0 };
    let plot_right = 70.0 + group_w * table.rows.len() as f64 + 10.0;
    y_axis(&mut svg, &sy, 70.0, plot_right, "Accuracy (%)");
    for (g, row) in table.rows.iter().enumerate() {
        let gx = 80.0 + group_w * g as f64;
        for (b, cell) in row.cells.iter().enumerate() {
            let Some(ci) = cell else { continue };
            let x = gx + bar_w * b as f64;
            let top = sy.map(ci.mean.clamp(0.0, 100.0));
            svg.rect(x, top, bar_w - 2.0, sy.map(0.0) - top, &hex(PALETTE[b % PALETTE.len()]), None);
            if !ci.undefined {
                let cx = x + (bar_w - 2.0) / 2.0;
                let (lo, hi) = (sy.map(ci.mean - ci.half_width), sy.map(ci.mean + ci.half_width));
                svg.line(cx, lo, cx, hi, "#000000", 1.2);
                svg.line(cx - 3.0, lo, cx + 3.0, lo, "#000000", 1.2);
                svg.line(cx - 3.0, hi, cx + 3.0, hi, "#000000", 1.2);
            }
        }
        svg.text(gx + bar_w * bars / 2.0, 360.0, 12.0, "middle", row.variant.label());
    }
    let mut ly = 60.0;
    for (b, col) in table.columns.iter().enumerate() {
        svg.rect(plot_right + 12.0, ly - 10.0, 12.0, 12.0, &hex(PALETTE[b % PALETTE.len()]), None);
        svg.text(plot_right + 30.0, ly, 11.0, "start", col.display_name());
        ly += 18.0;
    }
    Ok(svg.finish())
}

/// Confusion heatmap (rows true, columns predicted) annotated with the raw
/// counts; shading is by row-normalised frequency.
pub fn render_confusion_svg(confusion: &Confusion, title: &str) -> String {
    let cell = 56.0;
    let (ox, oy) = (120.0, 60.0);
    let mut svg = Svg::new(ox + cell * NUM_CLASSES as f64 + 30.0, oy + cell * NUM_CLASSES as f64 + 60.0);
    svg.text(ox + cell * 2.5, 26.0, 13.0, "middle", title);
    for (t, row) in confusion.iter().enumerate() {
        let total: u64 = row.iter().sum();
        for (p, &count) in row.iter().enumerate() {
            let frac = if total == 0 { 0.0 } else { count as f64 / total as f64 };
            let base = PALETTE[0];
            let shade = [1.0 - frac * (1.0 - base[0]), 1.0 - frac * (1.0 - base[1]), 1.0 - frac * (1.0 - base[2])];
            let (x, y) = (ox + cell * p as f64, oy + cell * t as f64);
            svg.rect(x, y, cell, cell, &hex(shade), Some("#ffffff"));
            svg.text(x + cell / 2.0, y + cell / 2.0 + 5.0, 13.0, "middle", &count.to_string());
        }
    }
    for class in WbcClass::ALL {
        let k = class.code() as f64;
        svg.text(ox - 8.0, oy + cell * (k + 0.5) + 4.0, 11.0, "end", class.short());
        svg.text(ox + cell * (k + 0.5), oy + cell * NUM_CLASSES as f64 + 18.0, 11.0, "middle", class.short());
    }
    svg.text(ox + cell * 2.5, oy + cell * NUM_CLASSES as f64 + 42.0, 12.0, "middle", "Predicted");
    svg.rotated_text(30.0, oy + cell * 2.5, 12.0, "True");
    svg.finish()
}

/// Box plot per test set, the grouped bar chart and one confusion heatmap
/// per variant and test set (counts summed over seeds). Returns every file
/// written.
pub fn render_report_figures(report: &BenchmarkReport, out_dir: &Path) -> Result<Vec<PathBuf>> {
    if report.variants.is_empty() {
        return Err(Error::Validation("report is empty".into()));
    }
    let mut written = Vec::new();
    for &col in &report.table.columns {
        let svg = render_box_plot_svg(report, col)?;
        written.extend(write_figure(&svg, &out_dir.join(format!("box_{}", col.cli_name())))?);
    }
    written.extend(write_figure(&render_bar_chart_svg(report)?, &out_dir.join("bars"))?);
    for v in &report.variants {
        for d in &v.datasets {
            let title = format!("{} on {}", v.variant.label(), d.dataset.display_name());
            let svg = render_confusion_svg(&d.confusion, &title);
            let stem = out_dir.join(format!("confusion_{}_{}", v.variant.slug(), d.dataset.cli_name()));
            written.extend(write_figure(&svg, &stem)?);
        }
    }
    Ok(written)
}
