use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::class::{WbcClass, NUM_CLASSES};
use crate::error::{Error, Result};

/// Which dataset (and split) a record belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum DatasetTag {
    RaabinTrain,
    RaabinTestA,
    RaabinTestB,
    Lisc,
    SynthSource,
    SynthShifted,
}

impl DatasetTag {
    pub const ALL: [DatasetTag; 6] = [
        DatasetTag::RaabinTrain,
        DatasetTag::RaabinTestA,
        DatasetTag::RaabinTestB,
        DatasetTag::Lisc,
        DatasetTag::SynthSource,
        DatasetTag::SynthShifted,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DatasetTag::RaabinTrain => "RAABIN_TRAIN",
            DatasetTag::RaabinTestA => "RAABIN_TEST_A",
            DatasetTag::RaabinTestB => "RAABIN_TEST_B",
            DatasetTag::Lisc => "LISC",
            DatasetTag::SynthSource => "SYNTH_SOURCE",
            DatasetTag::SynthShifted => "SYNTH_SHIFTED",
        }
    }

    /// Short command-line spelling.
    pub fn cli_name(self) -> &'static str {
        match self {
            DatasetTag::RaabinTrain => "raabin-train",
            DatasetTag::RaabinTestA => "raabin-a",
            DatasetTag::RaabinTestB => "raabin-b",
            DatasetTag::Lisc => "lisc",
            DatasetTag::SynthSource => "synth-source",
            DatasetTag::SynthShifted => "synth-shifted",
        }
    }

    /// Column heading in comparison tables.
    pub fn display_name(self) -> &'static str {
        match self {
            DatasetTag::RaabinTrain => "RaabinWBC-Train",
            DatasetTag::RaabinTestA => "RaabinWBC-A",
            DatasetTag::RaabinTestB => "RaabinWBC-B",
            DatasetTag::Lisc => "LISC",
            DatasetTag::SynthSource => "Synth-Source",
            DatasetTag::SynthShifted => "Synth-Shifted",
        }
    }
}

impl fmt::Display for DatasetTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DatasetTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        Self::ALL
            .into_iter()
            .find(|t| t.name().eq_ignore_ascii_case(s) || t.cli_name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Validation(format!("unknown dataset {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRecord {
    /// Path relative to the manifest root, `/`-separated.
    pub path: String,
    pub label: WbcClass,
    pub dataset: DatasetTag,
}

/// Per-class record counts indexed by [`WbcClass::code`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ClassCounts(pub [usize; NUM_CLASSES]);

impl ClassCounts {
    pub fn get(&self, class: WbcClass) -> usize {
        self.0[class.code()]
    }

    pub fn total(&self) -> usize {
        self.0.iter().sum()
    }

    pub fn missing(&self) -> Vec<WbcClass> {
        WbcClass::ALL.into_iter().filter(|c| self.get(*c) == 0).collect()
    }

    pub fn of<'a>(labels: impl IntoIterator<Item = &'a WbcClass>) -> Self {
        let mut counts = [0; NUM_CLASSES];
        for l in labels {
            counts[l.code()] += 1;
        }
        Self(counts)
    }
}

/// Immutable, path-ordered list of labeled images under one root directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    root: PathBuf,
    records: Vec<ImageRecord>,
    class_counts: ClassCounts,
}

impl DatasetManifest {
    /// Records are sorted by path so that seeded sampling is reproducible.
    pub fn new(root: impl Into<PathBuf>, mut records: Vec<ImageRecord>) -> Self {
        records.sort_by(|a, b| a.path.cmp(&b.path));
        let class_counts = ClassCounts::of(records.iter().map(|r| &r.label));
        Self {
            root: root.into(),
            records,
            class_counts,
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn records(&self) -> &[ImageRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn class_counts(&self) -> ClassCounts {
        self.class_counts
    }

    pub fn absolute_path(&self, record: &ImageRecord) -> PathBuf {
        self.root.join(&record.path)
    }

    /// The dataset tag shared by all records, if there is exactly one.
    pub fn dataset(&self) -> Option<DatasetTag> {
        let first = self.records.first()?.dataset;
        self.records.iter().all(|r| r.dataset == first).then_some(first)
    }

    pub fn labels(&self) -> Vec<WbcClass> {
        self.records.iter().map(|r| r.label).collect()
    }

    /// Concatenate manifests that share a root.
    pub fn merge(parts: &[&DatasetManifest]) -> Result<Self> {
        let root = parts
            .first()
            .map(|m| m.root.clone())
            .ok_or_else(|| Error::Validation("nothing to merge".into()))?;
        if parts.iter().any(|m| m.root != root) {
            return Err(Error::Validation("manifests with different roots cannot be merged".into()));
        }
        Ok(Self::new(root, parts.iter().flat_map(|m| m.records.iter().cloned()).collect()))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["path", "label", "dataset"])?;
        for r in &self.records {
            w.write_record([r.path.as_str(), r.label.name(), r.dataset.name()])?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    pub fn read_csv(path: &Path, root: impl Into<PathBuf>) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path)?;
        let headers = rdr.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != ["path", "label", "dataset"] {
            return Err(Error::Validation(format!(
                "{}: manifest header must be path,label,dataset",
                path.display()
            )));
        }
        let mut records = Vec::new();
        for row in rdr.records() {
            let row = row?;
            records.push(ImageRecord {
                path: row[0].to_string(),
                label: row[1].parse()?,
                dataset: row[2].parse()?,
            });
        }
        Ok(Self::new(root, records))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(path: &str, label: WbcClass) -> ImageRecord {
        ImageRecord {
            path: path.into(),
            label,
            dataset: DatasetTag::Lisc,
        }
    }

    #[test]
    fn records_are_sorted_and_counted() {
        let m = DatasetManifest::new(
            "/data",
            vec![
                rec("b/2.png", WbcClass::Basophil),
                rec("a/1.png", WbcClass::Lymphocyte),
                rec("b/1.png", WbcClass::Basophil),
            ],
        );
        let paths: Vec<&str> = m.records().iter().map(|r| r.path.as_str()).collect();
        assert_eq!(paths, ["a/1.png", "b/1.png", "b/2.png"]);
        assert_eq!(m.class_counts().0, [1, 0, 0, 0, 2]);
        assert_eq!(m.class_counts().total(), m.len());
        assert_eq!(m.dataset(), Some(DatasetTag::Lisc));
    }

    #[test]
    fn csv_roundtrip_with_upper_case_labels() {
        let dir = tempfile::tempdir().unwrap();
        let m = DatasetManifest::new(
            dir.path(),
            vec![rec("x.bmp", WbcClass::Monocyte), rec("y, z.bmp", WbcClass::Eosinophil)],
        );
        let p = dir.path().join("m.csv");
        m.write_csv(&p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("path,label,dataset\nx.bmp,MONOCYTE,LISC\n"));
        assert_eq!(DatasetManifest::read_csv(&p, dir.path()).unwrap(), m);
    }

    #[test]
    fn dataset_tags_parse_from_cli_names() {
        assert_eq!("raabin-a".parse::<DatasetTag>().unwrap(), DatasetTag::RaabinTestA);
        assert_eq!("synth-shifted".parse::<DatasetTag>().unwrap(), DatasetTag::SynthShifted);
        assert_eq!("LISC".parse::<DatasetTag>().unwrap(), DatasetTag::Lisc);
    }
}
