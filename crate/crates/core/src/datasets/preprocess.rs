//! Image decoding, resizing, flips and channel standardization.

use std::path::Path;

use image::imageops::{self, FilterType};
use image::RgbImage;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::class::WbcClass;
use super::manifest::ImageRecord;
use crate::error::{Error, Result};
use crate::nn::Tensor;

pub const IMAGENET_MEAN: [f32; 3] = [0.485, 0.456, 0.406];
pub const IMAGENET_STD: [f32; 3] = [0.229, 0.224, 0.225];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    pub target_size: usize,
    pub train_augment: bool,
    pub channel_mean: [f32; 3],
    pub channel_std: [f32; 3],
    /// Fraction of the shorter side kept by a centre crop before resizing.
    /// `None` uses the whole image (the LISC default).
    #[serde(default)]
    pub center_crop: Option<f32>,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            target_size: 224,
            train_augment: true,
            channel_mean: IMAGENET_MEAN,
            channel_std: IMAGENET_STD,
            center_crop: None,
        }
    }
}

impl PreprocessConfig {
    pub fn with_size(target_size: usize) -> Self {
        Self {
            target_size,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.target_size == 0 {
            return Err(Error::Validation("target_size must be positive".into()));
        }
        if self.channel_std.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(Error::Validation("channel_std must be strictly positive".into()));
        }
        if self.channel_mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::Validation("channel_mean must be finite".into()));
        }
        if let Some(f) = self.center_crop {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::Validation("center_crop must lie in (0, 1]".into()));
            }
        }
        Ok(())
    }
}

pub fn decode_rgb(path: &Path) -> Result<RgbImage> {
    let img = image::open(path).map_err(|e| Error::Decode {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    Ok(img.to_rgb8())
}

/// Optional centre crop followed by the resize to `target_size`. This part is
/// deterministic and can be cached.
pub fn resize_for(img: &RgbImage, cfg: &PreprocessConfig) -> RgbImage {
    let size = cfg.target_size as u32;
    let mut view = img.clone();
    if let Some(frac) = cfg.center_crop {
        let (w, h) = view.dimensions();
        let side = ((w.min(h) as f32 * frac).round() as u32).max(1);
        view = imageops::crop_imm(&view, (w - side) / 2, (h - side) / 2, side, side).to_image();
    }
    if view.dimensions() == (size, size) {
        view
    } else {
        imageops::resize(&view, size, size, FilterType::Triangle)
    }
}

/// Flips (training with augmentation only) and channel standardization of
/// an image already at `target_size`. Returns `[size, size, 3]`.
pub fn standardize<R: Rng + ?Sized>(
    resized: &RgbImage,
    cfg: &PreprocessConfig,
    rng: &mut R,
    training: bool,
) -> Result<Tensor> {
    let size = cfg.target_size;
    if resized.dimensions() != (size as u32, size as u32) {
        return Err(Error::Shape(format!(
            "expected a {size}x{size} image, got {:?}",
            resized.dimensions()
        )));
    }
    let (hflip, vflip) = if training && cfg.train_augment {
        (rng.random_bool(0.5), rng.random_bool(0.5))
    } else {
        (false, false)
    };
    let inv_std = cfg.channel_std.map(|s| 1.0 / s);
    let mut out = vec![0f32; size * size * 3];
    for y in 0..size {
        let sy = if vflip { size - 1 - y } else { y };
        for x in 0..size {
            let sx = if hflip { size - 1 - x } else { x };
            let p = resized.get_pixel(sx as u32, sy as u32).0;
            let o = (y * size + x) * 3;
            for c in 0..3 {
                out[o + c] = (p[c] as f32 / 255.0 - cfg.channel_mean[c]) * inv_std[c];
            }
        }
    }
    Tensor::new(&[size, size, 3], out)
}

/// Resize, optionally flip, and standardize an already decoded image.
/// Returns an `[size, size, 3]` tensor.
pub fn preprocess_image<R: Rng + ?Sized>(
    img: &RgbImage,
    cfg: &PreprocessConfig,
    rng: &mut R,
    training: bool,
) -> Result<Tensor> {
    cfg.validate()?;
    standardize(&resize_for(img, cfg), cfg, rng, training)
}

/// Decode and preprocess one record. The pixel array is `[size, size, 3]`.
pub fn load_sample<R: Rng + ?Sized>(
    root: &Path,
    record: &ImageRecord,
    cfg: &PreprocessConfig,
    rng: &mut R,
    training: bool,
) -> Result<(Tensor, WbcClass)> {
    let img = decode_rgb(&root.join(&record.path))?;
    Ok((preprocess_image(&img, cfg, rng, training)?, record.label))
}

/// Stack `[H, W, 3]` samples into an NCHW batch.
pub fn stack_nchw(samples: &[Tensor]) -> Result<Tensor> {
    let Some(first) = samples.first() else {
        return Err(Error::Shape("cannot stack an empty batch".into()));
    };
    let (h, w) = match first.shape() {
        [h, w, 3] => (*h, *w),
        s => return Err(Error::Shape(format!("expected [H, W, 3] sample, got {s:?}"))),
    };
    let plane = h * w;
    let mut out = vec![0f32; samples.len() * 3 * plane];
    for (n, s) in samples.iter().enumerate() {
        if s.shape() != first.shape() {
            return Err(Error::Shape(format!("sample {n} has shape {:?}, expected {:?}", s.shape(), first.shape())));
        }
        let base = n * 3 * plane;
        for (i, px) in s.data().chunks_exact(3).enumerate() {
            out[base + i] = px[0];
            out[base + plane + i] = px[1];
            out[base + 2 * plane + i] = px[2];
        }
    }
    Tensor::new(&[samples.len(), 3, h, w], out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn gradient_image() -> RgbImage {
        RgbImage::from_fn(12, 9, |x, y| image::Rgb([(x * 20) as u8, (y * 25) as u8, ((x + y) * 7) as u8]))
    }

    #[test]
    fn eval_path_ignores_rng() {
        let cfg = PreprocessConfig::with_size(8);
        let img = gradient_image();
        let a = preprocess_image(&img, &cfg, &mut ChaCha8Rng::seed_from_u64(1), false).unwrap();
        let b = preprocess_image(&img, &cfg, &mut ChaCha8Rng::seed_from_u64(999), false).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.shape(), &[8, 8, 3]);
        assert!(a.is_finite());
    }

    #[test]
    fn training_path_is_seeded() {
        let cfg = PreprocessConfig::with_size(8);
        let img = gradient_image();
        let run = |s| preprocess_image(&img, &cfg, &mut ChaCha8Rng::seed_from_u64(s), true).unwrap();
        assert_eq!(run(5), run(5));
        let variants: std::collections::HashSet<Vec<u32>> =
            (0..16).map(|s| run(s).data().iter().map(|v| v.to_bits()).collect()).collect();
        assert_eq!(variants.len(), 4, "four flip combinations");
    }

    #[test]
    fn flips_disabled_without_augment_flag() {
        let cfg = PreprocessConfig {
            train_augment: false,
            ..PreprocessConfig::with_size(8)
        };
        let img = gradient_image();
        let a = preprocess_image(&img, &cfg, &mut ChaCha8Rng::seed_from_u64(1), true).unwrap();
        let b = preprocess_image(&img, &cfg, &mut ChaCha8Rng::seed_from_u64(1), false).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn gray_at_mean_standardizes_to_zero() {
        let img = RgbImage::from_pixel(5, 5, image::Rgb([128, 128, 128]));
        let v = 128.0 / 255.0;
        let cfg = PreprocessConfig {
            channel_mean: [v; 3],
            ..PreprocessConfig::with_size(4)
        };
        let out = preprocess_image(&img, &cfg, &mut ChaCha8Rng::seed_from_u64(0), true).unwrap();
        assert!(out.data().iter().all(|x| x.abs() < 1e-6));
    }

    #[test]
    fn invalid_configs_rejected() {
        assert!(PreprocessConfig::with_size(0).validate().is_err());
        let bad = PreprocessConfig {
            channel_std: [0.2, 0.0, 0.2],
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn undecodable_file_reports_path() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("bad.png"), b"not an image").unwrap();
        let rec = ImageRecord {
            path: "bad.png".into(),
            label: WbcClass::Basophil,
            dataset: super::super::manifest::DatasetTag::Lisc,
        };
        let err = load_sample(dir.path(), &rec, &PreprocessConfig::default(), &mut ChaCha8Rng::seed_from_u64(0), false)
            .unwrap_err();
        assert!(matches!(&err, Error::Decode { path, .. } if path.ends_with("bad.png")));
    }

    #[test]
    fn stack_moves_channels_first() {
        let s = Tensor::from_fn(&[2, 2, 3], |i| i as f32);
        let b = stack_nchw(&[s.clone(), s]).unwrap();
        assert_eq!(b.shape(), &[2, 3, 2, 2]);
        assert_eq!(&b.data()[..4], &[0.0, 3.0, 6.0, 9.0]);
        assert_eq!(&b.data()[4..8], &[1.0, 4.0, 7.0, 10.0]);
    }
}
