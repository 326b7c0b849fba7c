//! Dataset ingestion: class codes, manifests, directory scanners, image
//! preprocessing, seeded sampling and the synthetic two-domain dataset.

mod class;
mod loader;
mod manifest;
mod preprocess;
mod sampling;
mod scan;
mod synth;

pub use class::{WbcClass, NUM_CLASSES};
pub use loader::{Augment, BatchLoader, DEFAULT_CACHE_BYTES};
pub use manifest::{ClassCounts, DatasetManifest, DatasetTag, ImageRecord};
pub use preprocess::{
    decode_rgb, load_sample, preprocess_image, resize_for, stack_nchw, standardize, PreprocessConfig, IMAGENET_MEAN, IMAGENET_STD,
};
pub use sampling::stratified_sample;
pub use scan::{
    scan_lisc, scan_raabin, CountMismatch, RaabinSplit, Scan, ScanReport, LISC_COUNTS, RAABIN_TEST_A_COUNTS,
    RAABIN_TEST_B_COUNTS, RAABIN_TRAIN_COUNTS,
};
pub use synth::{make_synthetic_domain_pair, render_cell, RenderedCell, ShiftParams, SynthConfig, SynthPair};
