use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// Minimal SVG document writer. Coordinates are printed with two decimals
/// so output is byte-stable.
pub struct Svg {
    width: f64,
    height: f64,
    body: String,
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

impl Svg {
    pub fn new(width: f64, height: f64) -> Self {
        let mut s = Self {
            width,
            height,
            body: String::new(),
        };
        s.rect(0.0, 0.0, width, height, "#ffffff", None);
        s
    }

    pub fn line(&mut self, x1: f64, y1: f64, x2: f64, y2: f64, stroke: &str, width: f64) {
        let _ = writeln!(
            self.body,
            r#"<line x1="{x1:.2}" y1="{y1:.2}" x2="{x2:.2}" y2="{y2:.2}" stroke="{stroke}" stroke-width="{width:.2}"/>"#
        );
    }

    pub fn rect(&mut self, x: f64, y: f64, w: f64, h: f64, fill: &str, stroke: Option<&str>) {
        let stroke = stroke.map_or(String::new(), |s| format!(r#" stroke="{s}" stroke-width="1""#));
        let _ = writeln!(
            self.body,
            r#"<rect x="{x:.2}" y="{y:.2}" width="{w:.2}" height="{h:.2}" fill="{fill}"{stroke}/>"#
        );
    }

    pub fn circle(&mut self, cx: f64, cy: f64, r: f64, fill: &str, opacity: f64) {
        let _ = writeln!(
            self.body,
            r#"<circle cx="{cx:.2}" cy="{cy:.2}" r="{r:.2}" fill="{fill}" fill-opacity="{opacity:.2}"/>"#
        );
    }

    pub fn cross(&mut self, cx: f64, cy: f64, r: f64, stroke: &str) {
        self.line(cx - r, cy - r, cx + r, cy + r, stroke, 1.5);
        self.line(cx - r, cy + r, cx + r, cy - r, stroke, 1.5);
    }

    /// `anchor` is `start`, `middle` or `end`.
    pub fn text(&mut self, x: f64, y: f64, size: f64, anchor: &str, content: &str) {
        let _ = writeln!(
            self.body,
            r#"<text x="{x:.2}" y="{y:.2}" font-family="DejaVu Sans, sans-serif" font-size="{size:.1}" text-anchor="{anchor}">{}</text>"#,
            esc(content)
        );
    }

    pub fn rotated_text(&mut self, x: f64, y: f64, size: f64, content: &str) {
        let _ = writeln!(
            self.body,
            r#"<text x="{x:.2}" y="{y:.2}" font-family="DejaVu Sans, sans-serif" font-size="{size:.1}" text-anchor="middle" transform="rotate(-90 {x:.2} {y:.2})">{}</text>"#,
            esc(content)
        );
    }

    pub fn finish(self) -> String {
        format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n{}</svg>\n",
            self.body,
            w = self.width,
            h = self.height
        )
    }
}

/// Linear map from a data interval onto a pixel interval.
#[derive(Debug, Clone, Copy)]
pub struct Scale {
    pub d0: f64,
    pub d1: f64,
    pub p0: f64,
    pub p1: f64,
}

impl Scale {
    pub fn map(&self, v: f64) -> f64 {
        self.p0 + (v - self.d0) / (self.d1 - self.d0) * (self.p1 - self.p0)
    }

    /// Round tick values covering the domain, about `n` of them.
    pub fn ticks(&self, n: usize) -> Vec<f64> {
        let span = (self.d1 - self.d0).abs().max(1e-12);
        let raw = span / n.max(1) as f64;
        let mag = 10f64.powf(raw.log10().floor());
        let step = [1.0, 2.0, 5.0, 10.0].iter().map(|m| m * mag).find(|s| *s >= raw).unwrap_or(10.0 * mag);
        let lo = self.d0.min(self.d1);
        let hi = self.d0.max(self.d1);
        let mut t = (lo / step).ceil() * step;
        let mut out = Vec::new();
        while t <= hi + step * 1e-9 {
            out.push(if t.abs() < step * 1e-9 { 0.0 } else { t });
            t += step;
        }
        out
    }
}

/// Padded `[lo, hi]` around the values; widened when they are all equal.
pub fn padded_range(values: impl IntoIterator<Item = f64>, pad: f64) -> (f64, f64) {
    let (lo, hi) = values
        .into_iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    let span = if hi > lo { hi - lo } else { lo.abs().max(1.0) };
    (lo - pad * span, hi + pad * span)
}

fn fmt_tick(v: f64) -> String {
    let s = format!("{v:.2}");
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

/// Left y axis with ticks and gridlines spanning `x0..x1`.
pub fn y_axis(svg: &mut Svg, scale: &Scale, x0: f64, x1: f64, label: &str) {
    for t in scale.ticks(6) {
        let y = scale.map(t);
        svg.line(x0, y, x1, y, "#e0e0e0", 1.0);
        svg.line(x0 - 4.0, y, x0, y, "#000000", 1.0);
        svg.text(x0 - 6.0, y + 4.0, 11.0, "end", &fmt_tick(t));
    }
    svg.line(x0, scale.p0, x0, scale.p1, "#000000", 1.0);
    svg.rotated_text(x0 - 42.0, (scale.p0 + scale.p1) / 2.0, 12.0, label);
}

/// Write `<stem>.svg` and a rasterised `<stem>.png`; returns both paths.
pub fn write_figure(svg: &str, stem: &Path) -> Result<Vec<PathBuf>> {
    if let Some(parent) = stem.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let svg_path = stem.with_extension("svg");
    fs::write(&svg_path, svg).map_err(|e| Error::io(&svg_path, e))?;
    let png_path = stem.with_extension("png");
    fs::write(&png_path, rasterize(svg)?).map_err(|e| Error::io(&png_path, e))?;
    Ok(vec![svg_path, png_path])
}

fn rasterize(svg: &str) -> Result<Vec<u8>> {
    let mut opt = resvg::usvg::Options::default();
    opt.fontdb_mut().load_system_fonts();
    let tree = resvg::usvg::Tree::from_str(svg, &opt).map_err(|e| Error::Validation(format!("invalid SVG: {e}")))?;
    let size = tree.size().to_int_size();
    let mut pixmap = resvg::tiny_skia::Pixmap::new(size.width(), size.height())
        .ok_or_else(|| Error::Validation("figure has zero size".into()))?;
    resvg::render(&tree, resvg::tiny_skia::Transform::identity(), &mut pixmap.as_mut());
    pixmap
        .encode_png()
        .map_err(|e| Error::Validation(format!("PNG encoding failed: {e}")))
}
