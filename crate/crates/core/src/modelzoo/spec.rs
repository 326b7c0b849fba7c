use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::datasets::NUM_CLASSES;
use crate::error::{Error, Result};
use crate::normalization::DEFAULT_GROUPS;

/// Experiment scale: `Desk` runs tiny networks on synthetic data on a CPU,
/// `Full` the ImageNet-pretrained architectures on the real datasets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tier {
    Desk,
    Full,
}

impl FromStr for Tier {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "desk" => Ok(Tier::Desk),
            "full" => Ok(Tier::Full),
            _ => Err(Error::Validation(format!("unknown tier {s:?} (expected desk or full)"))),
        }
    }
}

impl fmt::Display for Tier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Tier::Desk => "desk",
            Tier::Full => "full",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum BaseNet {
    Resnet50,
    Vgg16,
    Vgg16Bn,
    VitB16,
    ConvnextTiny,
    /// Three conv/norm blocks and global pooling.
    TinyCnn,
    /// Three conv blocks without normalization.
    TinyVgg,
    TinyVggBn,
}

impl BaseNet {
    pub fn tier(self) -> Tier {
        match self {
            BaseNet::TinyCnn | BaseNet::TinyVgg | BaseNet::TinyVggBn => Tier::Desk,
            _ => Tier::Full,
        }
    }

    pub fn has_batch_norm(self) -> bool {
        matches!(self, BaseNet::Resnet50 | BaseNet::Vgg16Bn | BaseNet::TinyCnn | BaseNet::TinyVggBn)
    }

    /// Bases that use layer norm and accept no surgery besides the head.
    pub fn is_transformer_era(self) -> bool {
        matches!(self, BaseNet::VitB16 | BaseNet::ConvnextTiny)
    }

    /// Native input resolution.
    pub fn input_size(self) -> usize {
        match self.tier() {
            Tier::Desk => 32,
            Tier::Full => 224,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum NormStrategy {
    Default,
    ReplaceBnWithGn,
    FreezeBn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum HeadKind {
    Linear,
    VggFc,
}

/// The nine configurations of the ablation and supplementary tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum VariantId {
    #[serde(rename = "a")]
    A,
    #[serde(rename = "a_prime")]
    APrime,
    #[serde(rename = "i")]
    I,
    #[serde(rename = "ii")]
    Ii,
    #[serde(rename = "iii")]
    Iii,
    #[serde(rename = "b")]
    B,
    #[serde(rename = "b_prime")]
    BPrime,
    #[serde(rename = "c")]
    C,
    #[serde(rename = "d")]
    D,
}

impl VariantId {
    /// Report row order.
    pub const ALL: [VariantId; 9] = [
        VariantId::A,
        VariantId::APrime,
        VariantId::I,
        VariantId::Ii,
        VariantId::Iii,
        VariantId::B,
        VariantId::BPrime,
        VariantId::C,
        VariantId::D,
    ];

    /// File-system safe identifier.
    pub fn slug(self) -> &'static str {
        match self {
            VariantId::A => "a",
            VariantId::APrime => "a_prime",
            VariantId::I => "i",
            VariantId::Ii => "ii",
            VariantId::Iii => "iii",
            VariantId::B => "b",
            VariantId::BPrime => "b_prime",
            VariantId::C => "c",
            VariantId::D => "d",
        }
    }

    /// Label as printed in tables.
    pub fn label(self) -> &'static str {
        match self {
            VariantId::A => "(a)",
            VariantId::APrime => "(a')",
            VariantId::I => "(i)",
            VariantId::Ii => "(ii)",
            VariantId::Iii => "(iii)",
            VariantId::B => "(b)",
            VariantId::BPrime => "(b')",
            VariantId::C => "(c)",
            VariantId::D => "(d)",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            VariantId::A => "ResNet50, batch norm, linear head",
            VariantId::APrime => "ResNet50 with VGG-style fully-connected head",
            VariantId::I => "ResNet50 with batch norm replaced by group norm",
            VariantId::Ii => "ResNet50 with frozen batch norm",
            VariantId::Iii => "ResNet50 with frozen batch norm, last 16 layers trainable",
            VariantId::B => "VGG16 (no batch norm, fully-connected head)",
            VariantId::BPrime => "VGG16 with batch norm",
            VariantId::C => "ViT-Base-16",
            VariantId::D => "ConvNeXt-Tiny",
        }
    }

    /// Canonical spec of this variant at the given tier. Variants (c) and (d)
    /// have no desk-scale counterpart.
    pub fn spec(self, tier: Tier) -> Result<ModelSpec> {
        let (base, norm, head, k) = self.spec_unchecked(tier).ok_or_else(|| {
            Error::Validation(format!(
                "variant {} has no {tier}-tier configuration; use --tier full",
                self.slug()
            ))
        })?;
        let spec = ModelSpec {
            base,
            norm_strategy: norm,
            head,
            trainable_last_k: k,
            num_classes: NUM_CLASSES,
            pretrained: tier == Tier::Full,
            variant_id: Some(self),
            num_groups: match tier {
                Tier::Full => DEFAULT_GROUPS,
                Tier::Desk => DESK_GROUPS,
            },
            fc_hidden: match tier {
                Tier::Full => FULL_FC_HIDDEN,
                Tier::Desk => DESK_FC_HIDDEN,
            },
        };
        spec.validate()?;
        Ok(spec)
    }
}

impl fmt::Display for VariantId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.slug())
    }
}

impl FromStr for VariantId {
    type Err = Error;

    /// Accepts slugs, table labels and primes written as `'` or `′`.
    fn from_str(s: &str) -> Result<Self> {
        let key: String = s
            .trim()
            .trim_start_matches('(')
            .trim_end_matches(')')
            .replace(['\'', '′'], "_prime")
            .to_ascii_lowercase();
        VariantId::ALL
            .into_iter()
            .find(|v| v.slug() == key)
            .ok_or_else(|| Error::Validation(format!("unknown variant {s:?} (expected one of a, a', i, ii, iii, b, b', c, d)")))
    }
}

pub const FULL_FC_HIDDEN: usize = 4096;
pub const DESK_FC_HIDDEN: usize = 128;
pub const DESK_GROUPS: usize = 8;
/// Trainable conv/FC layers for the desk version of variant (iii): the last
/// conv block and the classifier.
pub const DESK_LAST_K: usize = 2;
pub const HEAD_DROPOUT: f32 = 0.5;

fn default_groups() -> usize {
    DEFAULT_GROUPS
}

fn default_fc_hidden() -> usize {
    FULL_FC_HIDDEN
}

/// Declarative description of a network variant.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub base: BaseNet,
    pub norm_strategy: NormStrategy,
    pub head: HeadKind,
    /// Train only the last k conv/FC layers (counted from the output,
    /// classifier included).
    pub trainable_last_k: Option<usize>,
    pub num_classes: usize,
    pub pretrained: bool,
    pub variant_id: Option<VariantId>,
    #[serde(default = "default_groups")]
    pub num_groups: usize,
    /// Width of the two hidden layers of a VGG-style head.
    #[serde(default = "default_fc_hidden")]
    pub fc_hidden: usize,
}

impl ModelSpec {
    pub fn tier(&self) -> Tier {
        self.base.tier()
    }

    /// Check the field constraints; every violated rule is listed.
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.num_classes < 2 {
            problems.push("num_classes must be at least 2".to_string());
        }
        if self.trainable_last_k == Some(0) {
            problems.push("trainable_last_k must be positive".to_string());
        }
        if self.num_groups == 0 {
            problems.push("num_groups must be positive".to_string());
        }
        if self.fc_hidden == 0 {
            problems.push("fc_hidden must be positive".to_string());
        }
        match self.norm_strategy {
            NormStrategy::ReplaceBnWithGn if !matches!(self.base, BaseNet::Resnet50 | BaseNet::TinyCnn) => {
                problems.push(format!(
                    "REPLACE_BN_WITH_GN requires RESNET50 (group-norm pretrained weights exist only there), got {:?}",
                    self.base
                ));
            }
            NormStrategy::FreezeBn if !self.base.has_batch_norm() => {
                problems.push(format!("FREEZE_BN requires a base with batch norm; {:?} has none", self.base));
            }
            _ => {}
        }
        if self.base.is_transformer_era() {
            if self.norm_strategy != NormStrategy::Default {
                problems.push(format!("{:?} uses layer norm; no normalization surgery applies", self.base));
            }
            if self.head != HeadKind::Linear {
                problems.push(format!("{:?} supports only a LINEAR head", self.base));
            }
        }
        if self.base.tier() == Tier::Desk && self.pretrained {
            problems.push(format!("{:?} has no pretrained weights; set pretrained=false", self.base));
        }
        if let Some(v) = self.variant_id {
            match v.spec_unchecked(self.base.tier()) {
                Some((base, norm, head, k)) => {
                    if (base, norm, head, k) != (self.base, self.norm_strategy, self.head, self.trainable_last_k) {
                        problems.push(format!(
                            "variant {} requires base={base:?}, norm_strategy={norm:?}, head={head:?}, trainable_last_k={k:?}",
                            v.slug()
                        ));
                    }
                }
                None => problems.push(format!("variant {} has no {} tier configuration", v.slug(), self.base.tier())),
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(format!("invalid model spec: {}", problems.join("; "))))
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: ModelSpec = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }
}

impl VariantId {
    fn spec_unchecked(self, tier: Tier) -> Option<(BaseNet, NormStrategy, HeadKind, Option<usize>)> {
        use BaseNet::*;
        use HeadKind::*;
        use NormStrategy::*;
        let (full, desk) = match self {
            VariantId::A => ((Resnet50, Default, Linear, None), Some((TinyCnn, Default, Linear, None))),
            VariantId::APrime => ((Resnet50, Default, VggFc, None), Some((TinyCnn, Default, VggFc, None))),
            VariantId::I => ((Resnet50, ReplaceBnWithGn, Linear, None), Some((TinyCnn, ReplaceBnWithGn, Linear, None))),
            VariantId::Ii => ((Resnet50, FreezeBn, Linear, None), Some((TinyCnn, FreezeBn, Linear, None))),
            VariantId::Iii => (
                (Resnet50, FreezeBn, Linear, Some(16)),
                Some((TinyCnn, FreezeBn, Linear, Some(DESK_LAST_K))),
            ),
            VariantId::B => ((Vgg16, Default, VggFc, None), Some((TinyVgg, Default, VggFc, None))),
            VariantId::BPrime => ((Vgg16Bn, Default, VggFc, None), Some((TinyVggBn, Default, VggFc, None))),
            VariantId::C => ((VitB16, Default, Linear, None), None),
            VariantId::D => ((ConvnextTiny, Default, Linear, None), None),
        };
        match tier {
            Tier::Full => Some(full),
            Tier::Desk => desk,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_variants_match_tables() {
        let a = VariantId::A.spec(Tier::Full).unwrap();
        assert_eq!((a.base, a.norm_strategy, a.head), (BaseNet::Resnet50, NormStrategy::Default, HeadKind::Linear));
        let bp = VariantId::BPrime.spec(Tier::Full).unwrap();
        assert_eq!((bp.base, bp.head), (BaseNet::Vgg16Bn, HeadKind::VggFc));
        let iii = VariantId::Iii.spec(Tier::Full).unwrap();
        assert_eq!((iii.base, iii.norm_strategy, iii.trainable_last_k), (BaseNet::Resnet50, NormStrategy::FreezeBn, Some(16)));
    }

    #[test]
    fn all_nine_round_trip_through_json() {
        for v in VariantId::ALL {
            let spec = v.spec(Tier::Full).unwrap();
            assert_eq!(ModelSpec::from_json(&spec.to_json().unwrap()).unwrap(), spec);
        }
    }

    #[test]
    fn desk_has_no_transformers() {
        assert!(VariantId::C.spec(Tier::Desk).is_err());
        assert!(VariantId::D.spec(Tier::Desk).is_err());
        for v in &VariantId::ALL[..7] {
            assert_eq!(v.spec(Tier::Desk).unwrap().tier(), Tier::Desk);
        }
    }

    #[test]
    fn inconsistent_specs_rejected() {
        let mut s = VariantId::B.spec(Tier::Full).unwrap();
        s.norm_strategy = NormStrategy::FreezeBn;
        let msg = s.validate().unwrap_err().to_string();
        assert!(msg.contains("FREEZE_BN requires"), "{msg}");
        assert!(msg.contains("variant b requires"), "{msg}");

        let mut g = VariantId::BPrime.spec(Tier::Full).unwrap();
        g.norm_strategy = NormStrategy::ReplaceBnWithGn;
        g.variant_id = None;
        assert!(g.validate().unwrap_err().to_string().contains("RESNET50"));
    }

    #[test]
    fn parses_primes_and_labels() {
        assert_eq!("a'".parse::<VariantId>().unwrap(), VariantId::APrime);
        assert_eq!("b′".parse::<VariantId>().unwrap(), VariantId::BPrime);
        assert_eq!("(iii)".parse::<VariantId>().unwrap(), VariantId::Iii);
        assert_eq!("a_prime".parse::<VariantId>().unwrap(), VariantId::APrime);
        assert!("e".parse::<VariantId>().is_err());
    }
}
