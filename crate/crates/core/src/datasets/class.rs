use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// The five white-blood-cell types. Integer codes are frozen so that reports
/// produced by different runs stay comparable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum WbcClass {
    Lymphocyte = 0,
    Monocyte = 1,
    Neutrophil = 2,
    Eosinophil = 3,
    Basophil = 4,
}

pub const NUM_CLASSES: usize = 5;

impl WbcClass {
    pub const ALL: [WbcClass; NUM_CLASSES] = [
        WbcClass::Lymphocyte,
        WbcClass::Monocyte,
        WbcClass::Neutrophil,
        WbcClass::Eosinophil,
        WbcClass::Basophil,
    ];

    pub fn code(self) -> usize {
        self as usize
    }

    pub fn from_code(code: usize) -> Option<Self> {
        Self::ALL.get(code).copied()
    }

    /// Upper-case name used in manifests and reports.
    pub fn name(self) -> &'static str {
        match self {
            WbcClass::Lymphocyte => "LYMPHOCYTE",
            WbcClass::Monocyte => "MONOCYTE",
            WbcClass::Neutrophil => "NEUTROPHIL",
            WbcClass::Eosinophil => "EOSINOPHIL",
            WbcClass::Basophil => "BASOPHIL",
        }
    }

    /// Abbreviation used in table headers.
    pub fn short(self) -> &'static str {
        match self {
            WbcClass::Lymphocyte => "Lymph.",
            WbcClass::Monocyte => "Mono.",
            WbcClass::Neutrophil => "Neut.",
            WbcClass::Eosinophil => "Eos.",
            WbcClass::Basophil => "Bas.",
        }
    }

    /// Map a dataset folder name ("Basophil", "baso", "Lymphocytes", ...)
    /// onto a class. Unknown names (e.g. LISC's mixed-cell folder) give `None`.
    pub fn from_dir_name(name: &str) -> Option<Self> {
        let letters: String = name
            .chars()
            .filter(|c| c.is_ascii_alphabetic())
            .map(|c| c.to_ascii_lowercase())
            .collect();
        [
            ("lym", WbcClass::Lymphocyte),
            ("mon", WbcClass::Monocyte),
            ("neu", WbcClass::Neutrophil),
            ("eos", WbcClass::Eosinophil),
            ("bas", WbcClass::Basophil),
        ]
        .into_iter()
        .find(|(prefix, _)| letters.starts_with(prefix))
        .map(|(_, c)| c)
    }
}

impl fmt::Display for WbcClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for WbcClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|c| c.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Validation(format!("unknown class label {s:?}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn codes_are_frozen() {
        let codes: Vec<usize> = WbcClass::ALL.iter().map(|c| c.code()).collect();
        assert_eq!(codes, vec![0, 1, 2, 3, 4]);
        assert_eq!(WbcClass::from_code(4), Some(WbcClass::Basophil));
        assert_eq!(WbcClass::from_code(5), None);
        assert_eq!(serde_json::to_string(&WbcClass::Eosinophil).unwrap(), "\"EOSINOPHIL\"");
    }

    #[test]
    fn folder_names_map_onto_classes() {
        assert_eq!(WbcClass::from_dir_name("Baso"), Some(WbcClass::Basophil));
        assert_eq!(WbcClass::from_dir_name("eosi"), Some(WbcClass::Eosinophil));
        assert_eq!(WbcClass::from_dir_name("Lymphocyte"), Some(WbcClass::Lymphocyte));
        assert_eq!(WbcClass::from_dir_name("mono"), Some(WbcClass::Monocyte));
        assert_eq!(WbcClass::from_dir_name("Neutrophil"), Some(WbcClass::Neutrophil));
        assert_eq!(WbcClass::from_dir_name("mixt"), None);
        assert_eq!(WbcClass::from_dir_name("areas"), None);
    }

    #[test]
    fn parse_is_case_insensitive() {
        assert_eq!("neutrophil".parse::<WbcClass>().unwrap(), WbcClass::Neutrophil);
        assert!("platelet".parse::<WbcClass>().is_err());
    }
}
