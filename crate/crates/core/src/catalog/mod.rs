//! DRG catalog: parsing, dissection into base DRG + severity arm, split
//! topology, and composition of a (base, CC/MCC label) prediction back into
//! a concrete DRG code.

mod synthetic;

pub use synthetic::{bundled_catalog_csv, SyntheticCatalogSpec};

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("duplicate DRG code {code} on line {line}")]
    DuplicateCode { code: u32, line: u64 },
    #[error("base DRG {base_text:?} has an inconsistent arm set {arms:?}")]
    InconsistentBase {
        base_text: String,
        arms: Vec<SeverityArm>,
    },
    #[error("inconsistent arm set {0:?}")]
    InconsistentArms(Vec<SeverityArm>),
    #[error("unknown base DRG id {0}")]
    UnknownBase(usize),
    #[error("unknown DRG code {0}")]
    UnknownCode(u32),
}

/// Catalog-side severity descriptor found at the end of a DRG description.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SeverityArm {
    WithMcc,
    WithCc,
    WithCcMcc,
    WithoutCcMcc,
    WithoutMcc,
    None,
}

impl SeverityArm {
    pub const ALL: [SeverityArm; 6] = [
        SeverityArm::WithMcc,
        SeverityArm::WithCc,
        SeverityArm::WithCcMcc,
        SeverityArm::WithoutCcMcc,
        SeverityArm::WithoutMcc,
        SeverityArm::None,
    ];

    /// The descriptor text as it appears in a description; empty for `None`.
    pub fn descriptor(self) -> &'static str {
        match self {
            SeverityArm::WithMcc => "WITH MCC",
            SeverityArm::WithCc => "WITH CC",
            SeverityArm::WithCcMcc => "WITH CC/MCC",
            SeverityArm::WithoutCcMcc => "WITHOUT CC/MCC",
            SeverityArm::WithoutMcc => "WITHOUT MCC",
            SeverityArm::None => "",
        }
    }
}

impl fmt::Display for SeverityArm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            SeverityArm::WithMcc => "WITH_MCC",
            SeverityArm::WithCc => "WITH_CC",
            SeverityArm::WithCcMcc => "WITH_CC_MCC",
            SeverityArm::WithoutCcMcc => "WITHOUT_CC_MCC",
            SeverityArm::WithoutMcc => "WITHOUT_MCC",
            SeverityArm::None => "NONE",
        };
        f.write_str(s)
    }
}

/// The five-valued CC/MCC prediction label. Discriminants are the head
/// indices used by the two-label model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum CcMccLabel {
    WithoutCcMcc = 0,
    WithCc = 1,
    WithMcc = 2,
    WithoutMcc = 3,
    NotApplicable = 4,
}

impl CcMccLabel {
    pub const COUNT: usize = 5;
    pub const ALL: [CcMccLabel; 5] = [
        CcMccLabel::WithoutCcMcc,
        CcMccLabel::WithCc,
        CcMccLabel::WithMcc,
        CcMccLabel::WithoutMcc,
        CcMccLabel::NotApplicable,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<CcMccLabel> {
        CcMccLabel::ALL.get(index).copied()
    }
}

impl fmt::Display for CcMccLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            CcMccLabel::WithoutCcMcc => "WITHOUT_CC_MCC",
            CcMccLabel::WithCc => "WITH_CC",
            CcMccLabel::WithMcc => "WITH_MCC",
            CcMccLabel::WithoutMcc => "WITHOUT_MCC",
            CcMccLabel::NotApplicable => "NOT_APPLICABLE",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SplitType {
    ThreeWay,
    #[serde(rename = "TWO_WAY_CCMCC_VS_NONE")]
    TwoWayCcMccVsNone,
    TwoWayMccVsRest,
    NoSplit,
}

impl SplitType {
    pub const ALL: [SplitType; 4] = [
        SplitType::ThreeWay,
        SplitType::TwoWayCcMccVsNone,
        SplitType::TwoWayMccVsRest,
        SplitType::NoSplit,
    ];

    /// The arm set that defines this topology.
    pub fn arms(self) -> &'static [SeverityArm] {
        match self {
            SplitType::ThreeWay => &[
                SeverityArm::WithMcc,
                SeverityArm::WithCc,
                SeverityArm::WithoutCcMcc,
            ],
            SplitType::TwoWayCcMccVsNone => &[SeverityArm::WithCcMcc, SeverityArm::WithoutCcMcc],
            SplitType::TwoWayMccVsRest => &[SeverityArm::WithMcc, SeverityArm::WithoutMcc],
            SplitType::NoSplit => &[SeverityArm::None],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DrgCode {
    pub code: u32,
    pub description: String,
    pub version_tag: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CatalogEntry {
    pub code: DrgCode,
    pub base_id: usize,
    pub arm: SeverityArm,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BaseDrg {
    pub base_id: usize,
    pub base_text: String,
    pub members: BTreeMap<SeverityArm, u32>,
    pub split: SplitType,
}

impl BaseDrg {
    pub fn arms(&self) -> BTreeSet<SeverityArm> {
        self.members.keys().copied().collect()
    }
}

/// Arm descriptors ordered longest first so that "WITH CC/MCC" wins over
/// "WITH CC".
const DESCRIPTORS: [SeverityArm; 5] = [
    SeverityArm::WithoutCcMcc,
    SeverityArm::WithCcMcc,
    SeverityArm::WithoutMcc,
    SeverityArm::WithMcc,
    SeverityArm::WithCc,
];

/// Split a normalized description into its base text and terminal severity
/// arm. Only a descriptor at the very end, preceded by a space, counts.
pub fn dissect_description(description: &str) -> (String, SeverityArm) {
    let trimmed = description.trim_end();
    for arm in DESCRIPTORS {
        let descriptor = arm.descriptor();
        if let Some(prefix) = trimmed.strip_suffix(descriptor) {
            if prefix.ends_with(' ') {
                let base = prefix.trim_end();
                if !base.is_empty() {
                    return (base.to_string(), arm);
                }
            }
        }
    }
    (trimmed.to_string(), SeverityArm::None)
}

/// Inverse of [`dissect_description`].
pub fn recompose(base_text: &str, arm: SeverityArm) -> String {
    match arm {
        SeverityArm::None => base_text.to_string(),
        _ => format!("{} {}", base_text, arm.descriptor()),
    }
}

pub fn classify_split(arms: &BTreeSet<SeverityArm>) -> Result<SplitType, CatalogError> {
    SplitType::ALL
        .into_iter()
        .find(|split| {
            let expected: BTreeSet<SeverityArm> = split.arms().iter().copied().collect();
            &expected == arms
        })
        .ok_or_else(|| CatalogError::InconsistentArms(arms.iter().copied().collect()))
}

/// Training target for a catalog arm. `WithCcMcc` has no label of its own and
/// maps to `WithCc`.
pub fn arm_to_label(arm: SeverityArm) -> CcMccLabel {
    match arm {
        SeverityArm::WithMcc => CcMccLabel::WithMcc,
        SeverityArm::WithCc | SeverityArm::WithCcMcc => CcMccLabel::WithCc,
        SeverityArm::WithoutCcMcc => CcMccLabel::WithoutCcMcc,
        SeverityArm::WithoutMcc => CcMccLabel::WithoutMcc,
        SeverityArm::None => CcMccLabel::NotApplicable,
    }
}

/// Labels a constrained argmax may choose for this base.
pub fn label_valid_set(base: &BaseDrg) -> BTreeSet<CcMccLabel> {
    base.members.keys().map(|&arm| arm_to_label(arm)).collect()
}

/// Fallback mapping for a predicted label onto an arm of the given split.
/// Total over all label/split pairs; labels that name no member arm fall to
/// the least severe arm.
pub fn map_label_to_arm(label: CcMccLabel, split: SplitType) -> SeverityArm {
    use CcMccLabel as L;
    match split {
        SplitType::NoSplit => SeverityArm::None,
        SplitType::TwoWayMccVsRest => match label {
            L::WithMcc => SeverityArm::WithMcc,
            L::WithoutCcMcc | L::WithCc | L::WithoutMcc | L::NotApplicable => {
                SeverityArm::WithoutMcc
            }
        },
        SplitType::ThreeWay => match label {
            L::WithMcc => SeverityArm::WithMcc,
            L::WithCc => SeverityArm::WithCc,
            L::WithoutCcMcc | L::WithoutMcc | L::NotApplicable => SeverityArm::WithoutCcMcc,
        },
        SplitType::TwoWayCcMccVsNone => match label {
            L::WithMcc | L::WithCc => SeverityArm::WithCcMcc,
            L::WithoutCcMcc | L::WithoutMcc | L::NotApplicable => SeverityArm::WithoutCcMcc,
        },
    }
}

/// An immutable, dissected DRG catalog.
#[derive(Debug, Clone, Default)]
pub struct DrgCatalog {
    version_tag: String,
    entries: Vec<CatalogEntry>,
    bases: Vec<BaseDrg>,
    by_code: HashMap<u32, usize>,
    by_base_text: HashMap<String, usize>,
}

/// JSON form of a catalog.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CatalogDump {
    pub entries: Vec<DumpEntry>,
    pub bases: Vec<BaseDrg>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DumpEntry {
    pub code: u32,
    pub description: String,
    pub base_id: usize,
    pub arm: SeverityArm,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub three_way: usize,
    pub two_way_ccmcc_vs_none: usize,
    pub two_way_mcc_vs_rest: usize,
    pub no_split: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CatalogSummary {
    pub codes: usize,
    pub bases: usize,
    pub splits: SplitCounts,
}

impl DrgCatalog {
    /// Parse a two-column CSV (`code,description`). The header row is
    /// optional; an empty input yields an empty catalog.
    pub fn parse(text: &str, version_tag: &str) -> Result<Self, CatalogError> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());

        let mut rows: Vec<(u64, u32, String)> = Vec::new();
        let mut seen: HashMap<u32, u64> = HashMap::new();
        for (i, record) in reader.records().enumerate() {
            let record = record.map_err(|e| CatalogError::Parse {
                line: e.position().map(|p| p.line()).unwrap_or(0),
                message: e.to_string(),
            })?;
            let line = record.position().map(|p| p.line()).unwrap_or(i as u64 + 1);
            if record.iter().all(|f| f.is_empty()) {
                continue;
            }
            if i == 0
                && record
                    .get(0)
                    .is_some_and(|f| f.eq_ignore_ascii_case("code"))
            {
                continue;
            }
            if record.len() != 2 {
                return Err(CatalogError::Parse {
                    line,
                    message: format!("expected 2 fields, found {}", record.len()),
                });
            }
            let code: u32 = record[0].parse().map_err(|_| CatalogError::Parse {
                line,
                message: format!("invalid DRG code {:?}", &record[0]),
            })?;
            let description = record[1].split_whitespace().collect::<Vec<_>>().join(" ");
            if description.is_empty() {
                return Err(CatalogError::Parse {
                    line,
                    message: "empty description".into(),
                });
            }
            if description.chars().any(|c| c.is_ascii_lowercase()) {
                return Err(CatalogError::Parse {
                    line,
                    message: format!("description must be uppercase: {description:?}"),
                });
            }
            if seen.insert(code, line).is_some() {
                return Err(CatalogError::DuplicateCode { code, line });
            }
            rows.push((line, code, description));
        }
        Self::from_descriptions(rows.into_iter().map(|(_, c, d)| (c, d)), version_tag)
    }

    /// Build from already validated `(code, description)` pairs.
    pub fn from_descriptions<I>(rows: I, version_tag: &str) -> Result<Self, CatalogError>
    where
        I: IntoIterator<Item = (u32, String)>,
    {
        let mut catalog = DrgCatalog {
            version_tag: version_tag.to_string(),
            ..Default::default()
        };
        let mut arm_sets: Vec<BTreeMap<SeverityArm, u32>> = Vec::new();
        for (code, description) in rows {
            if catalog.by_code.contains_key(&code) {
                return Err(CatalogError::DuplicateCode { code, line: 0 });
            }
            let (base_text, arm) = dissect_description(&description);
            let base_id = match catalog.by_base_text.get(&base_text) {
                Some(&id) => id,
                None => {
                    let id = catalog.bases.len();
                    catalog.by_base_text.insert(base_text.clone(), id);
                    catalog.bases.push(BaseDrg {
                        base_id: id,
                        base_text: base_text.clone(),
                        members: BTreeMap::new(),
                        split: SplitType::NoSplit,
                    });
                    arm_sets.push(BTreeMap::new());
                    id
                }
            };
            if arm_sets[base_id].insert(arm, code).is_some() {
                let mut arms: Vec<SeverityArm> = arm_sets[base_id].keys().copied().collect();
                arms.push(arm);
                return Err(CatalogError::InconsistentBase { base_text, arms });
            }
            catalog.by_code.insert(code, catalog.entries.len());
            catalog.entries.push(CatalogEntry {
                code: DrgCode {
                    code,
                    description,
                    version_tag: version_tag.to_string(),
                },
                base_id,
                arm,
            });
        }
        for (base, members) in catalog.bases.iter_mut().zip(arm_sets) {
            let arms: BTreeSet<SeverityArm> = members.keys().copied().collect();
            base.split = classify_split(&arms).map_err(|_| CatalogError::InconsistentBase {
                base_text: base.base_text.clone(),
                arms: arms.iter().copied().collect(),
            })?;
            base.members = members;
        }
        Ok(catalog)
    }

    pub fn version_tag(&self) -> &str {
        &self.version_tag
    }

    pub fn entries(&self) -> &[CatalogEntry] {
        &self.entries
    }

    pub fn bases(&self) -> &[BaseDrg] {
        &self.bases
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entry(&self, code: u32) -> Option<&CatalogEntry> {
        self.by_code.get(&code).map(|&i| &self.entries[i])
    }

    pub fn contains(&self, code: u32) -> bool {
        self.by_code.contains_key(&code)
    }

    pub fn base(&self, base_id: usize) -> Option<&BaseDrg> {
        self.bases.get(base_id)
    }

    pub fn base_by_text(&self, base_text: &str) -> Option<&BaseDrg> {
        self.by_base_text.get(base_text).map(|&i| &self.bases[i])
    }

    /// All codes in ascending order.
    pub fn sorted_codes(&self) -> Vec<u32> {
        let mut codes: Vec<u32> = self.entries.iter().map(|e| e.code.code).collect();
        codes.sort_unstable();
        codes
    }

    /// Base id and CC/MCC training label for a code.
    pub fn two_label_target(&self, code: u32) -> Option<(usize, CcMccLabel)> {
        self.entry(code).map(|e| (e.base_id, arm_to_label(e.arm)))
    }

    /// Turn a (base, label) prediction into a DRG code. A label that is the
    /// image of a member arm resolves directly; anything else goes through
    /// [`map_label_to_arm`].
    pub fn compose(&self, base_id: usize, label: CcMccLabel) -> Result<u32, CatalogError> {
        let base = self
            .base(base_id)
            .ok_or(CatalogError::UnknownBase(base_id))?;
        if let Some((_, &code)) = base
            .members
            .iter()
            .find(|(&arm, _)| arm_to_label(arm) == label)
        {
            return Ok(code);
        }
        let arm = map_label_to_arm(label, base.split);
        base.members
            .get(&arm)
            .copied()
            .ok_or_else(|| CatalogError::InconsistentBase {
                base_text: base.base_text.clone(),
                arms: base.members.keys().copied().collect(),
            })
    }

    pub fn split_counts(&self) -> SplitCounts {
        let mut counts = SplitCounts::default();
        for base in &self.bases {
            match base.split {
                SplitType::ThreeWay => counts.three_way += 1,
                SplitType::TwoWayCcMccVsNone => counts.two_way_ccmcc_vs_none += 1,
                SplitType::TwoWayMccVsRest => counts.two_way_mcc_vs_rest += 1,
                SplitType::NoSplit => counts.no_split += 1,
            }
        }
        counts
    }

    pub fn summary(&self) -> CatalogSummary {
        CatalogSummary {
            codes: self.entries.len(),
            bases: self.bases.len(),
            splits: self.split_counts(),
        }
    }

    pub fn dump(&self) -> CatalogDump {
        CatalogDump {
            entries: self
                .entries
                .iter()
                .map(|e| DumpEntry {
                    code: e.code.code,
                    description: e.code.description.clone(),
                    base_id: e.base_id,
                    arm: e.arm,
                })
                .collect(),
            bases: self.bases.clone(),
        }
    }

    /// SHA-256 over the `(code, description)` pairs in ascending code order.
    pub fn fingerprint(&self) -> String {
        let mut pairs: Vec<(u32, &str)> = self
            .entries
            .iter()
            .map(|e| (e.code.code, e.code.description.as_str()))
            .collect();
        pairs.sort_unstable();
        let mut hasher = Sha256::new();
        for (code, description) in pairs {
            hasher.update(code.to_string().as_bytes());
            hasher.update(b"\t");
            hasher.update(description.as_bytes());
            hasher.update(b"\n");
        }
        hex::encode(hasher.finalize())
    }
}
