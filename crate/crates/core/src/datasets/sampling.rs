use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::class::WbcClass;
use super::manifest::{DatasetManifest, ImageRecord};
use crate::error::{Error, Result};

/// Draw exactly `n_per_class` records of every class without replacement.
///
/// Classes are visited in code order and each one is shuffled by the same
/// seeded stream, so the draw depends only on the manifest and `seed`.
pub fn stratified_sample(manifest: &DatasetManifest, n_per_class: usize, seed: u64) -> Result<DatasetManifest> {
    let counts = manifest.class_counts();
    if let Some(short) = WbcClass::ALL.into_iter().find(|c| counts.get(*c) < n_per_class) {
        return Err(Error::InsufficientClass {
            class: short.name().to_string(),
            available: counts.get(short),
            requested: n_per_class,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked: Vec<ImageRecord> = Vec::with_capacity(n_per_class * WbcClass::ALL.len());
    for class in WbcClass::ALL {
        let mut of_class: Vec<&ImageRecord> = manifest.records().iter().filter(|r| r.label == class).collect();
        of_class.shuffle(&mut rng);
        picked.extend(of_class.into_iter().take(n_per_class).cloned());
    }
    Ok(DatasetManifest::new(manifest.root(), picked))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::manifest::{ClassCounts, DatasetTag};

    fn lisc_like() -> DatasetManifest {
        let counts = [59, 48, 56, 39, 55];
        let records = WbcClass::ALL
            .into_iter()
            .flat_map(|c| {
                (0..counts[c.code()]).map(move |i| ImageRecord {
                    path: format!("{}/{i:03}.bmp", c.short()),
                    label: c,
                    dataset: DatasetTag::Lisc,
                })
            })
            .collect();
        DatasetManifest::new("/lisc", records)
    }

    #[test]
    fn thirty_nine_per_class() {
        let m = lisc_like();
        let s = stratified_sample(&m, 39, 7).unwrap();
        assert_eq!(s.len(), 195);
        assert_eq!(s.class_counts(), ClassCounts([39; 5]));
        assert!(s.records().iter().all(|r| m.records().contains(r)));
        assert_eq!(s, stratified_sample(&m, 39, 7).unwrap());
        assert_ne!(s, stratified_sample(&m, 39, 8).unwrap());
    }

    #[test]
    fn zero_gives_empty() {
        assert!(stratified_sample(&lisc_like(), 0, 1).unwrap().is_empty());
    }

    #[test]
    fn forty_fails_on_eosinophil() {
        match stratified_sample(&lisc_like(), 40, 1) {
            Err(Error::InsufficientClass { class, available, requested }) => {
                assert_eq!((class.as_str(), available, requested), ("EOSINOPHIL", 39, 40));
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
