//! Directory scanners for the RaabinWBC and LISC layouts.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::class::WbcClass;
use super::manifest::{ClassCounts, DatasetManifest, DatasetTag, ImageRecord};
use crate::error::{Error, Result};

const IMAGE_EXTENSIONS: [&str; 7] = ["jpg", "jpeg", "png", "bmp", "tif", "tiff", "gif"];

/// Published per-class counts (lymphocyte, monocyte, neutrophil, eosinophil, basophil).
pub const RAABIN_TRAIN_COUNTS: ClassCounts = ClassCounts([2427, 561, 6231, 744, 212]);
pub const RAABIN_TEST_A_COUNTS: ClassCounts = ClassCounts([1034, 234, 2660, 322, 89]);
pub const RAABIN_TEST_B_COUNTS: ClassCounts = ClassCounts([148, 0, 1971, 0, 0]);
pub const LISC_COUNTS: ClassCounts = ClassCounts([59, 48, 56, 39, 55]);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RaabinSplit {
    Train,
    TestA,
    TestB,
}

impl RaabinSplit {
    pub fn tag(self) -> DatasetTag {
        match self {
            RaabinSplit::Train => DatasetTag::RaabinTrain,
            RaabinSplit::TestA => DatasetTag::RaabinTestA,
            RaabinSplit::TestB => DatasetTag::RaabinTestB,
        }
    }

    pub fn expected_counts(self) -> ClassCounts {
        match self {
            RaabinSplit::Train => RAABIN_TRAIN_COUNTS,
            RaabinSplit::TestA => RAABIN_TEST_A_COUNTS,
            RaabinSplit::TestB => RAABIN_TEST_B_COUNTS,
        }
    }

    fn dir_key(self) -> &'static str {
        match self {
            RaabinSplit::Train => "train",
            RaabinSplit::TestA => "testa",
            RaabinSplit::TestB => "testb",
        }
    }
}

/// One row of an observed-vs-expected table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountMismatch {
    pub class: WbcClass,
    pub expected: usize,
    pub observed: usize,
}

/// Warnings and exclusions collected while scanning. Written as JSON next
/// to the manifest.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScanReport {
    pub dataset: Option<DatasetTag>,
    pub observed: ClassCounts,
    pub expected: Option<ClassCounts>,
    pub count_mismatches: Vec<CountMismatch>,
    pub missing_classes: Vec<WbcClass>,
    /// Directories or files that could not be mapped onto the five classes.
    pub skipped: Vec<String>,
}

impl ScanReport {
    pub fn has_warnings(&self) -> bool {
        !self.count_mismatches.is_empty() || !self.missing_classes.is_empty() || !self.skipped.is_empty()
    }

    pub fn warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        let name = self.dataset.map_or("dataset", |d| d.name());
        if !self.missing_classes.is_empty() {
            let names: Vec<&str> = self.missing_classes.iter().map(|c| c.name()).collect();
            out.push(format!("{name}: no records for classes {}", names.join(", ")));
        }
        if !self.count_mismatches.is_empty() {
            let mut table = format!("{name}: class counts differ from the published statistics\n  class        expected  observed");
            for m in &self.count_mismatches {
                table.push_str(&format!("\n  {:<12} {:>8}  {:>8}", m.class.name(), m.expected, m.observed));
            }
            out.push(table);
        }
        for s in &self.skipped {
            out.push(format!("{name}: skipped {s}"));
        }
        out
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    fn finish(&mut self, manifest: &DatasetManifest) {
        self.observed = manifest.class_counts();
        self.missing_classes = self.observed.missing();
        if let Some(expected) = self.expected {
            self.count_mismatches = WbcClass::ALL
                .into_iter()
                .filter(|c| expected.get(*c) != self.observed.get(*c))
                .map(|c| CountMismatch {
                    class: c,
                    expected: expected.get(c),
                    observed: self.observed.get(c),
                })
                .collect();
        }
        for w in self.warnings() {
            log::warn!("{w}");
        }
    }
}

#[derive(Debug, Clone)]
pub struct Scan {
    pub manifest: DatasetManifest,
    pub report: ScanReport,
}

fn normalize_key(name: &str) -> String {
    name.chars()
        .filter(|c| c.is_ascii_alphanumeric())
        .map(|c| c.to_ascii_lowercase())
        .collect()
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
        .collect::<Result<_>>()?;
    entries.sort();
    Ok(entries)
}

fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
}

/// Relative `/`-separated path of every image below `dir` (recursive).
fn collect_images(root: &Path, dir: &Path, out: &mut Vec<String>) -> Result<()> {
    for entry in sorted_entries(dir)? {
        if entry.is_dir() {
            collect_images(root, &entry, out)?;
        } else if is_image(&entry) {
            let rel = entry.strip_prefix(root).expect("entry below root");
            let parts: Vec<String> = rel.components().map(|c| c.as_os_str().to_string_lossy().into_owned()).collect();
            out.push(parts.join("/"));
        }
    }
    Ok(())
}

fn require_dir(root: &Path, what: &str) -> Result<()> {
    if !root.is_dir() {
        return Err(Error::Config(format!("{what} root {} does not exist or is not a directory", root.display())));
    }
    Ok(())
}

/// Scan `class-folder/image` entries of `split_dir`, mapping folder names onto
/// classes; unmappable folders go to the skip list.
fn scan_class_folders(
    root: &Path,
    split_dir: &Path,
    tag: DatasetTag,
    report: &mut ScanReport,
) -> Result<Vec<ImageRecord>> {
    let mut records = Vec::new();
    for entry in sorted_entries(split_dir)? {
        let name = entry.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        if !entry.is_dir() {
            if is_image(&entry) {
                report.skipped.push(format!("{name} (image outside a class folder)"));
            }
            continue;
        }
        let Some(label) = WbcClass::from_dir_name(&name) else {
            report.skipped.push(format!("{name}/ (not one of the five classes)"));
            continue;
        };
        let mut paths = Vec::new();
        collect_images(root, &entry, &mut paths)?;
        records.extend(paths.into_iter().map(|path| ImageRecord { path, label, dataset: tag }));
    }
    Ok(records)
}

/// Scan one RaabinWBC split: `root/<Train|TestA|TestB>/<Class>/<image>`.
///
/// Split folders are matched ignoring case and punctuation (`Test-A`,
/// `test_a`, `TestA`). Count mismatches against the published table are
/// reported, not fatal.
pub fn scan_raabin(root: &Path, split: RaabinSplit) -> Result<Scan> {
    require_dir(root, "RaabinWBC")?;
    let split_dir = sorted_entries(root)?
        .into_iter()
        .find(|p| p.is_dir() && p.file_name().is_some_and(|n| normalize_key(&n.to_string_lossy()) == split.dir_key()))
        .ok_or_else(|| Error::Config(format!("RaabinWBC root {} has no {:?} split folder", root.display(), split)))?;
    let mut report = ScanReport {
        dataset: Some(split.tag()),
        expected: Some(split.expected_counts()),
        ..Default::default()
    };
    let records = scan_class_folders(root, &split_dir, split.tag(), &mut report)?;
    let manifest = DatasetManifest::new(root, records);
    report.finish(&manifest);
    Ok(Scan { manifest, report })
}

/// Scan LISC: `root/<class folder>/<image>` with folders such as `Baso`,
/// `eosi`, `lymp`, `mono`, `neut`. Other folders (mixed cells, masks) are
/// excluded and listed in the skip report.
pub fn scan_lisc(root: &Path) -> Result<Scan> {
    require_dir(root, "LISC")?;
    let mut report = ScanReport {
        dataset: Some(DatasetTag::Lisc),
        expected: Some(LISC_COUNTS),
        ..Default::default()
    };
    let records = scan_class_folders(root, root, DatasetTag::Lisc, &mut report)?;
    if records.is_empty() {
        return Err(Error::Config(format!("LISC root {} contains no usable images", root.display())));
    }
    let manifest = DatasetManifest::new(root, records);
    report.finish(&manifest);
    Ok(Scan { manifest, report })
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    /// Write `counts[c]` tiny PNGs into `dir/<folder for c>/`.
    pub fn populate(dir: &Path, folders: &[&str; 5], counts: ClassCounts) {
        let img = image::RgbImage::from_pixel(4, 4, image::Rgb([200, 100, 150]));
        for (c, folder) in folders.iter().enumerate() {
            if counts.0[c] == 0 {
                continue;
            }
            let d = dir.join(folder);
            fs::create_dir_all(&d).unwrap();
            for i in 0..counts.0[c] {
                img.save(d.join(format!("{i:05}.png"))).unwrap();
            }
        }
    }

    pub const RAABIN_FOLDERS: [&str; 5] = ["Lymphocyte", "Monocyte", "Neutrophil", "Eosinophil", "Basophil"];
    pub const LISC_FOLDERS: [&str; 5] = ["lymp", "mono", "neut", "eosi", "Baso"];
}

#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;

    #[test]
    fn lisc_scan_excludes_mixed_folder() {
        let dir = tempfile::tempdir().unwrap();
        populate(dir.path(), &LISC_FOLDERS, LISC_COUNTS);
        populate(dir.path(), &["mixt", "mixt", "mixt", "mixt", "mixt"], ClassCounts([3, 0, 0, 0, 0]));
        let scan = scan_lisc(dir.path()).unwrap();
        assert_eq!(scan.manifest.len(), 257);
        assert_eq!(scan.manifest.class_counts(), LISC_COUNTS);
        assert_eq!(scan.manifest.class_counts().get(WbcClass::Eosinophil), 39);
        assert_eq!(scan.report.skipped, vec!["mixt/ (not one of the five classes)".to_string()]);
        assert!(scan.report.count_mismatches.is_empty());
    }

    #[test]
    fn empty_lisc_is_fatal_and_missing_root_is_config_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(scan_lisc(dir.path()), Err(Error::Config(_))));
        assert!(matches!(scan_lisc(&dir.path().join("nope")), Err(Error::Config(_))));
        assert!(matches!(scan_raabin(&dir.path().join("nope"), RaabinSplit::Train), Err(Error::Config(_))));
    }

    #[test]
    fn raabin_test_b_warns_about_missing_classes() {
        let dir = tempfile::tempdir().unwrap();
        populate(&dir.path().join("TestB"), &RAABIN_FOLDERS, ClassCounts([3, 0, 40, 0, 0]));
        let scan = scan_raabin(dir.path(), RaabinSplit::TestB).unwrap();
        assert_eq!(scan.manifest.len(), 43);
        assert_eq!(
            scan.report.missing_classes,
            vec![WbcClass::Monocyte, WbcClass::Eosinophil, WbcClass::Basophil]
        );
        // smaller fixture than the published table: mismatch warning, not an error
        assert_eq!(scan.report.count_mismatches.len(), 2);
        assert!(scan.report.warnings().iter().any(|w| w.contains("expected")));
    }

    #[test]
    fn rescanning_yields_identical_manifest() {
        let dir = tempfile::tempdir().unwrap();
        populate(&dir.path().join("Test-A"), &RAABIN_FOLDERS, ClassCounts([2, 1, 3, 1, 1]));
        let a = scan_raabin(dir.path(), RaabinSplit::TestA).unwrap();
        let b = scan_raabin(dir.path(), RaabinSplit::TestA).unwrap();
        assert_eq!(a.manifest, b.manifest);
        assert!(a.manifest.records().windows(2).all(|w| w[0].path < w[1].path));
        assert!(a.manifest.records()[0].path.starts_with("Test-A/"));
    }
}
