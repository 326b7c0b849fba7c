use image::RgbImage;

use super::manifest::DatasetManifest;
use super::preprocess::{decode_rgb, resize_for, stack_nchw, standardize, PreprocessConfig};
use crate::error::Result;
use crate::nn::Tensor;
use crate::seeding::{stream, streams};

/// Default memory budget for caching resized images.
pub const DEFAULT_CACHE_BYTES: usize = 512 << 20;

/// Assembles NCHW batches from a manifest. Resized images are kept in memory
/// when the whole manifest fits in the cache budget.
pub struct BatchLoader<'a> {
    manifest: &'a DatasetManifest,
    cfg: PreprocessConfig,
    cache: Option<Vec<Option<RgbImage>>>,
}

/// Augmentation stream selector: flips for record `i` in `epoch` are drawn
/// from a generator seeded by `(seed, epoch, i)`.
#[derive(Debug, Clone, Copy)]
pub struct Augment {
    pub seed: u64,
    pub epoch: usize,
}

impl<'a> BatchLoader<'a> {
    pub fn new(manifest: &'a DatasetManifest, cfg: PreprocessConfig, cache_bytes: usize) -> Result<Self> {
        cfg.validate()?;
        let per_image = cfg.target_size * cfg.target_size * 3;
        let cache = (manifest.len().saturating_mul(per_image) <= cache_bytes).then(|| vec![None; manifest.len()]);
        Ok(Self { manifest, cfg, cache })
    }

    pub fn len(&self) -> usize {
        self.manifest.len()
    }

    pub fn is_empty(&self) -> bool {
        self.manifest.is_empty()
    }

    pub fn manifest(&self) -> &DatasetManifest {
        self.manifest
    }

    fn resized(&mut self, i: usize) -> Result<RgbImage> {
        if let Some(Some(img)) = self.cache.as_ref().map(|c| &c[i]) {
            return Ok(img.clone());
        }
        let rec = &self.manifest.records()[i];
        let img = resize_for(&decode_rgb(&self.manifest.absolute_path(rec))?, &self.cfg);
        if let Some(c) = self.cache.as_mut() {
            c[i] = Some(img.clone());
        }
        Ok(img)
    }

    /// Images `indices` as an `[N, 3, S, S]` batch plus class codes. Without
    /// `augment` the evaluation path is used (no flips).
    pub fn batch(&mut self, indices: &[usize], augment: Option<Augment>) -> Result<(Tensor, Vec<usize>)> {
        let mut samples = Vec::with_capacity(indices.len());
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            let img = self.resized(i)?;
            let sample = match augment {
                Some(a) => {
                    let mut rng = stream(a.seed, &[streams::AUGMENT, a.epoch as u64, i as u64]);
                    standardize(&img, &self.cfg, &mut rng, true)?
                }
                None => standardize(&img, &self.cfg, &mut stream(0, &[]), false)?,
            };
            samples.push(sample);
            labels.push(self.manifest.records()[i].label.code());
        }
        Ok((stack_nchw(&samples)?, labels))
    }
}
