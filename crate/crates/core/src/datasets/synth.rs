//! Procedural two-domain WBC look-alike dataset.
//!
//! Five classes are drawn as a pale cytoplasm disc with a class-specific
//! nucleus shape and texture on a pink background. The shifted domain
//! applies a per-channel affine colour transform plus a background tint to
//! the same held-out cells, mimicking a change of stain and microscope.

use std::f32::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::class::WbcClass;
use super::manifest::{DatasetManifest, DatasetTag, ImageRecord};
use crate::error::{Error, Result};
use crate::seeding::{derive_seed, streams};

pub const CONFIG_FILE: &str = "synth_config.json";

/// Colour transform defining the shifted domain, on `[0, 1]` intensities:
/// `out_c = in_c * (1 + gain_c) + offset_c + background_tint_c * bg`
/// where `bg` is the background coverage of the pixel. All zeros is the
/// identity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShiftParams {
    pub gain: [f32; 3],
    pub offset: [f32; 3],
    pub background_tint: [f32; 3],
}

impl ShiftParams {
    pub const ZERO: ShiftParams = ShiftParams {
        gain: [0.0; 3],
        offset: [0.0; 3],
        background_tint: [0.0; 3],
    };

    pub fn is_zero(&self) -> bool {
        *self == Self::ZERO
    }

    fn apply(&self, c: usize, v: f32, bg: f32) -> f32 {
        v * (1.0 + self.gain[c]) + self.offset[c] + self.background_tint[c] * bg
    }
}

impl Default for ShiftParams {
    fn default() -> Self {
        Self {
            gain: [-0.30, -0.25, -0.35],
            offset: [0.15, 0.12, 0.20],
            background_tint: [-0.05, 0.03, 0.02],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_per_class_train: usize,
    pub n_per_class_test: usize,
    pub image_size: usize,
    pub shift_params: ShiftParams,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_per_class_train: 160,
            n_per_class_test: 60,
            image_size: 32,
            shift_params: ShiftParams::default(),
            seed: 0,
        }
    }
}

impl SynthConfig {
    /// Zero shift is accepted (it is the identity control); anything else
    /// must be finite and keep every gain above -1.
    pub fn validate(&self) -> Result<()> {
        if self.n_per_class_train == 0 || self.n_per_class_test == 0 {
            return Err(Error::Validation("synthetic per-class counts must be positive".into()));
        }
        if self.image_size < 8 {
            return Err(Error::Validation("synthetic image_size must be at least 8".into()));
        }
        let s = &self.shift_params;
        let all = s.gain.iter().chain(&s.offset).chain(&s.background_tint);
        if all.clone().any(|v| !v.is_finite()) {
            return Err(Error::Validation("shift_params must be finite".into()));
        }
        if s.gain.iter().any(|g| *g <= -1.0) {
            return Err(Error::Validation("shift gain must be greater than -1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SynthPair {
    pub train: DatasetManifest,
    pub test_source: DatasetManifest,
    pub test_shifted: DatasetManifest,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Split {
    Train,
    Test,
}

/// A rendered cell before quantization: RGB in `[0, 1]` plus background
/// coverage per pixel.
pub struct RenderedCell {
    pub size: usize,
    pub rgb: Vec<[f32; 3]>,
    pub background: Vec<f32>,
}

impl RenderedCell {
    pub fn to_image(&self, shift: &ShiftParams) -> RgbImage {
        let s = self.size as u32;
        RgbImage::from_fn(s, s, |x, y| {
            let i = y as usize * self.size + x as usize;
            let px = self.rgb[i];
            let bg = self.background[i];
            Rgb(std::array::from_fn(|c| {
                (shift.apply(c, px[c], bg).clamp(0.0, 1.0) * 255.0).round() as u8
            }))
        })
    }
}

fn smoothstep_inside(d: f32, softness: f32) -> f32 {
    // d < 0 inside; 1 deep inside, 0 outside
    (0.5 - d / softness).clamp(0.0, 1.0)
}

fn lerp3(a: [f32; 3], b: [f32; 3], t: f32) -> [f32; 3] {
    std::array::from_fn(|c| a[c] + (b[c] - a[c]) * t)
}

struct Blob {
    cx: f32,
    cy: f32,
    rx: f32,
    ry: f32,
    angle: f32,
}

impl Blob {
    /// Approximate signed distance (negative inside), in pixels.
    fn sdf(&self, x: f32, y: f32) -> f32 {
        let (s, c) = self.angle.sin_cos();
        let dx = x - self.cx;
        let dy = y - self.cy;
        let u = (c * dx + s * dy) / self.rx;
        let v = (-s * dx + c * dy) / self.ry;
        ((u * u + v * v).sqrt() - 1.0) * self.rx.min(self.ry)
    }
}

fn stream_seed(seed: u64, split: Split, class: WbcClass, index: usize) -> u64 {
    let split_tag = match split {
        Split::Train => 1,
        Split::Test => 2,
    };
    derive_seed(seed, &[streams::SYNTH, split_tag, class.code() as u64, index as u64])
}

/// Render one cell of `class`. Pure function of its arguments.
pub fn render_cell(class: WbcClass, size: usize, rng_seed: u64) -> RenderedCell {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let n = size as f32;
    let scale = n / 32.0;
    let cx = n / 2.0 + rng.random_range(-2.0..2.0) * scale;
    let cy = n / 2.0 + rng.random_range(-2.0..2.0) * scale;
    let cell_r = rng.random_range(10.0..12.5) * scale;
    let theta = rng.random_range(0.0..2.0 * PI);

    let bg_color = [
        0.93 + rng.random_range(-0.02..0.02),
        0.80 + rng.random_range(-0.02..0.02),
        0.84 + rng.random_range(-0.02..0.02),
    ];
    let cyto_color = match class {
        WbcClass::Monocyte => [0.74, 0.72, 0.84],
        WbcClass::Eosinophil => [0.90, 0.66, 0.60],
        WbcClass::Basophil => [0.70, 0.60, 0.80],
        _ => [0.85, 0.76, 0.86],
    };
    let nucleus_color = match class {
        WbcClass::Basophil => [0.30, 0.14, 0.42],
        _ => [0.44, 0.24, 0.58],
    };
    let jitter = rng.random_range(-0.03..0.03);
    let nucleus_color = nucleus_color.map(|v: f32| v + jitter);

    let cell = Blob {
        cx,
        cy,
        rx: cell_r,
        ry: cell_r * rng.random_range(0.88..1.0),
        angle: theta,
    };
    let mut lobes: Vec<Blob> = Vec::new();
    // carve-out for the monocyte kidney shape
    let mut bite: Option<Blob> = None;
    let polar = |r: f32, a: f32| (cx + r * a.cos(), cy + r * a.sin());
    match class {
        WbcClass::Lymphocyte => {
            let r = cell_r * rng.random_range(0.74..0.84);
            lobes.push(Blob { cx, cy, rx: r, ry: r * 0.95, angle: theta });
        }
        WbcClass::Monocyte => {
            let r = cell_r * 0.72;
            lobes.push(Blob { cx, cy, rx: r, ry: r * 0.85, angle: theta });
            let (bx, by) = polar(r * 0.95, theta);
            bite = Some(Blob { cx: bx, cy: by, rx: r * 0.55, ry: r * 0.55, angle: 0.0 });
        }
        WbcClass::Neutrophil => {
            let k = rng.random_range(3..=4);
            let arc = rng.random_range(1.6..2.4);
            for i in 0..k {
                let a = theta - arc / 2.0 + arc * i as f32 / (k - 1) as f32;
                let (lx, ly) = polar(cell_r * 0.48, a);
                let r = cell_r * rng.random_range(0.22..0.28);
                lobes.push(Blob { cx: lx, cy: ly, rx: r, ry: r * 0.85, angle: a });
            }
        }
        WbcClass::Eosinophil => {
            for side in [-1.0f32, 1.0] {
                let (lx, ly) = polar(cell_r * 0.42, theta + side * PI / 2.0);
                let r = cell_r * 0.34;
                lobes.push(Blob { cx: lx, cy: ly, rx: r, ry: r * 0.8, angle: theta });
            }
        }
        WbcClass::Basophil => {
            let r = cell_r * 0.6;
            lobes.push(Blob { cx, cy, rx: r, ry: r * 0.8, angle: theta });
        }
    }

    // granules: (x, y, radius, colour)
    let mut granules: Vec<(f32, f32, f32, [f32; 3])> = Vec::new();
    let (count, gr, gcol) = match class {
        WbcClass::Eosinophil => (28, 1.1 * scale, [0.93, 0.45, 0.20]),
        WbcClass::Basophil => (36, 1.3 * scale, [0.18, 0.06, 0.30]),
        _ => (0, 0.0, [0.0; 3]),
    };
    for _ in 0..count {
        let a = rng.random_range(0.0..2.0 * PI);
        let r = cell_r * rng.random_range(0.0f32..0.92).sqrt();
        let (gx, gy) = polar(r, a);
        granules.push((gx, gy, gr, gcol));
    }

    let noise = Normal::new(0.0f32, 0.02).expect("valid sigma");
    let mut rgb = Vec::with_capacity(size * size);
    let mut background = Vec::with_capacity(size * size);
    for y in 0..size {
        for x in 0..size {
            let (px, py) = (x as f32 + 0.5, y as f32 + 0.5);
            let in_cell = smoothstep_inside(cell.sdf(px, py), 1.2);
            let mut nuc = lobes.iter().map(|b| smoothstep_inside(b.sdf(px, py), 1.0)).fold(0.0, f32::max);
            if let Some(b) = &bite {
                nuc *= 1.0 - smoothstep_inside(b.sdf(px, py), 1.0);
            }
            let mut c = lerp3(bg_color, cyto_color, in_cell);
            c = lerp3(c, nucleus_color, nuc);
            for (gx, gy, r, col) in &granules {
                let d = ((px - gx).powi(2) + (py - gy).powi(2)).sqrt() - r;
                let g = smoothstep_inside(d, 1.0) * in_cell;
                if g > 0.0 {
                    c = lerp3(c, *col, g * 0.85);
                }
            }
            rgb.push(c.map(|v| v + noise.sample(&mut rng)));
            background.push(1.0 - in_cell);
        }
    }
    RenderedCell { size, rgb, background }
}

fn class_dir(class: WbcClass) -> String {
    class.name().to_ascii_lowercase()
}

fn record_path(split: &str, class: WbcClass, index: usize) -> String {
    format!("{split}/{}/{index:05}.png", class_dir(class))
}

fn save_png(root: &Path, rel: &str, img: &RgbImage) -> Result<()> {
    let path = root.join(rel);
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    img.save(&path).map_err(|e| Error::Decode {
        path: path.clone(),
        message: format!("cannot write image: {e}"),
    })
}

fn manifests(root: &Path, cfg: &SynthConfig) -> SynthPair {
    let build = |split: &str, n: usize, tag: DatasetTag| {
        let records = WbcClass::ALL
            .into_iter()
            .flat_map(|class| {
                (0..n).map(move |i| ImageRecord {
                    path: record_path(split, class, i),
                    label: class,
                    dataset: tag,
                })
            })
            .collect();
        DatasetManifest::new(root, records)
    };
    SynthPair {
        train: build("train", cfg.n_per_class_train, DatasetTag::SynthSource),
        test_source: build("test_source", cfg.n_per_class_test, DatasetTag::SynthSource),
        test_shifted: build("test_shifted", cfg.n_per_class_test, DatasetTag::SynthShifted),
    }
}

fn cache_is_valid(root: &Path, cfg: &SynthConfig, pair: &SynthPair) -> bool {
    let Ok(text) = fs::read_to_string(root.join(CONFIG_FILE)) else {
        return false;
    };
    let Ok(stored) = serde_json::from_str::<SynthConfig>(&text) else {
        return false;
    };
    stored == *cfg
        && [&pair.train, &pair.test_source, &pair.test_shifted]
            .iter()
            .all(|m| m.records().iter().all(|r| m.absolute_path(r).is_file()))
}

/// Render (or reuse) the synthetic dataset under `root`.
///
/// Layout: `root/{train,test_source,test_shifted}/<class>/<index>.png` plus
/// `synth_config.json`. An existing cache is reused when its stored config
/// equals `cfg`. `test_shifted` holds the same cells as `test_source` with
/// the shift applied.
pub fn make_synthetic_domain_pair(cfg: &SynthConfig, root: &Path) -> Result<SynthPair> {
    cfg.validate()?;
    let pair = manifests(root, cfg);
    if cache_is_valid(root, cfg, &pair) {
        log::info!("reusing synthetic dataset at {}", root.display());
        return Ok(pair);
    }
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let _ = fs::remove_file(root.join(CONFIG_FILE));
    for class in WbcClass::ALL {
        for i in 0..cfg.n_per_class_train {
            let cell = render_cell(class, cfg.image_size, stream_seed(cfg.seed, Split::Train, class, i));
            save_png(root, &record_path("train", class, i), &cell.to_image(&ShiftParams::ZERO))?;
        }
        for i in 0..cfg.n_per_class_test {
            let cell = render_cell(class, cfg.image_size, stream_seed(cfg.seed, Split::Test, class, i));
            save_png(root, &record_path("test_source", class, i), &cell.to_image(&ShiftParams::ZERO))?;
            save_png(root, &record_path("test_shifted", class, i), &cell.to_image(&cfg.shift_params))?;
        }
    }
    let cfg_path: PathBuf = root.join(CONFIG_FILE);
    fs::write(&cfg_path, serde_json::to_string_pretty(cfg)?).map_err(|e| Error::io(&cfg_path, e))?;
    Ok(pair)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::manifest::ClassCounts;

    fn small() -> SynthConfig {
        SynthConfig {
            n_per_class_train: 3,
            n_per_class_test: 2,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn balanced_manifests_and_layout() {
        let dir = tempfile::tempdir().unwrap();
        let pair = make_synthetic_domain_pair(&small(), dir.path()).unwrap();
        assert_eq!(pair.train.class_counts(), ClassCounts([3; 5]));
        assert_eq!(pair.test_source.class_counts(), ClassCounts([2; 5]));
        assert_eq!(pair.test_shifted.class_counts(), ClassCounts([2; 5]));
        assert_eq!(pair.test_shifted.dataset(), Some(DatasetTag::SynthShifted));
        assert_eq!(pair.train.dataset(), Some(DatasetTag::SynthSource));
        let rec = &pair.train.records()[0];
        let img = image::open(pair.train.absolute_path(rec)).unwrap();
        assert_eq!((img.width(), img.height()), (32, 32));
    }

    #[test]
    fn byte_identical_across_runs() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let pa = make_synthetic_domain_pair(&small(), a.path()).unwrap();
        make_synthetic_domain_pair(&small(), b.path()).unwrap();
        for r in pa.train.records().iter().chain(pa.test_shifted.records()) {
            let x = fs::read(a.path().join(&r.path)).unwrap();
            let y = fs::read(b.path().join(&r.path)).unwrap();
            assert_eq!(x, y, "{}", r.path);
        }
    }

    #[test]
    fn zero_shift_reproduces_source_pixels() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SynthConfig {
            shift_params: ShiftParams::ZERO,
            ..small()
        };
        let pair = make_synthetic_domain_pair(&cfg, dir.path()).unwrap();
        for (s, t) in pair.test_source.records().iter().zip(pair.test_shifted.records()) {
            let a = image::open(dir.path().join(&s.path)).unwrap().to_rgb8();
            let b = image::open(dir.path().join(&t.path)).unwrap().to_rgb8();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn cache_reused_only_for_matching_config() {
        let dir = tempfile::tempdir().unwrap();
        make_synthetic_domain_pair(&small(), dir.path()).unwrap();
        let marker = dir.path().join("train/lymphocyte/00000.png");
        fs::write(&marker, b"stale").unwrap();
        make_synthetic_domain_pair(&small(), dir.path()).unwrap();
        assert_eq!(fs::read(&marker).unwrap(), b"stale");
        let other = SynthConfig { seed: 9, ..small() };
        make_synthetic_domain_pair(&other, dir.path()).unwrap();
        assert_ne!(fs::read(&marker).unwrap(), b"stale");
    }

    #[test]
    fn invalid_config_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SynthConfig { n_per_class_test: 0, ..small() };
        assert!(matches!(make_synthetic_domain_pair(&cfg, dir.path()), Err(Error::Validation(_))));
    }
}
