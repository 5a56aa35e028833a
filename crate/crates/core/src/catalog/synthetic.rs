//! Generated stand-in catalogs with a prescribed split topology.
//!
//! The bundled catalog reproduces the MS-DRG v34.0 shape (757 codes over 340
//! base DRGs) and keeps the well-known example codes at their real numbers;
//! every other description is synthetic.

use std::collections::BTreeSet;

use super::{recompose, SeverityArm, SplitType};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SyntheticCatalogSpec {
    pub three_way: usize,
    pub two_way_ccmcc_vs_none: usize,
    pub two_way_mcc_vs_rest: usize,
    pub no_split: usize,
    /// Keep DRGs 11-13, 52-53, 56-57, 69 and 691-694 at their real codes.
    pub include_reference_examples: bool,
}

impl SyntheticCatalogSpec {
    /// Split counts of MS-DRG v34.0.
    pub const V34: SyntheticCatalogSpec = SyntheticCatalogSpec {
        three_way: 154,
        two_way_ccmcc_vs_none: 44,
        two_way_mcc_vs_rest: 65,
        no_split: 77,
        include_reference_examples: true,
    };

    pub fn bases(&self) -> usize {
        self.three_way + self.two_way_ccmcc_vs_none + self.two_way_mcc_vs_rest + self.no_split
    }

    pub fn codes(&self) -> usize {
        3 * self.three_way
            + 2 * (self.two_way_ccmcc_vs_none + self.two_way_mcc_vs_rest)
            + self.no_split
    }

    /// Render as CSV with a `code,description` header, rows in code order.
    pub fn render_csv(&self) -> String {
        let mut rows = self.rows();
        rows.sort_by_key(|(code, _)| *code);
        let mut out = String::from("code,description\n");
        for (code, description) in rows {
            out.push_str(&format!("{code},{description}\n"));
        }
        out
    }

    fn rows(&self) -> Vec<(u32, String)> {
        let mut rows = Vec::with_capacity(self.codes());
        let mut used: BTreeSet<u32> = BTreeSet::new();
        let mut remaining = [
            (SplitType::ThreeWay, self.three_way),
            (SplitType::TwoWayCcMccVsNone, self.two_way_ccmcc_vs_none),
            (SplitType::TwoWayMccVsRest, self.two_way_mcc_vs_rest),
            (SplitType::NoSplit, self.no_split),
        ];

        if self.include_reference_examples {
            for (split, base_text, first_code) in REFERENCE_BASES {
                let slot = remaining.iter_mut().find(|(s, _)| s == split).unwrap();
                if slot.1 == 0 {
                    continue;
                }
                slot.1 -= 1;
                for (offset, arm) in ordered_arms(*split).iter().enumerate() {
                    let code = first_code + offset as u32;
                    used.insert(code);
                    rows.push((code, recompose(base_text, *arm)));
                }
            }
        }

        let mut names = synthetic_base_names();
        let mut next_code = 1u32;
        for split in interleave(&remaining) {
            let arms = ordered_arms(split);
            let start = next_free_run(&used, next_code, arms.len());
            let base_text = names.next().expect("base name pool exhausted");
            for (offset, arm) in arms.iter().enumerate() {
                let code = start + offset as u32;
                used.insert(code);
                rows.push((code, recompose(&base_text, *arm)));
            }
            next_code = start + arms.len() as u32;
        }
        rows
    }
}

/// CSV text of the bundled 757-code catalog.
pub fn bundled_catalog_csv() -> String {
    SyntheticCatalogSpec::V34.render_csv()
}

const REFERENCE_BASES: &[(SplitType, &str, u32)] = &[
    (
        SplitType::ThreeWay,
        "TRACHEOSTOMY FOR FACE MOUTH AND NECK DIAGNOSES",
        11,
    ),
    (
        SplitType::TwoWayCcMccVsNone,
        "SPINAL DISORDERS AND INJURIES",
        52,
    ),
    (
        SplitType::TwoWayMccVsRest,
        "DEGENERATIVE NERVOUS SYSTEM DISORDERS",
        56,
    ),
    (SplitType::NoSplit, "TRANSIENT ISCHEMIA", 69),
    (
        SplitType::TwoWayCcMccVsNone,
        "URINARY STONES WITH ESW LITHOTRIPSY",
        691,
    ),
    (
        SplitType::TwoWayMccVsRest,
        "URINARY STONES WITHOUT ESW LITHOTRIPSY",
        693,
    ),
];

// most severe arm gets the lowest code, as in the CMS numbering
fn ordered_arms(split: SplitType) -> &'static [SeverityArm] {
    split.arms()
}

fn next_free_run(used: &BTreeSet<u32>, from: u32, len: usize) -> u32 {
    let mut start = from;
    loop {
        if (start..start + len as u32).all(|c| !used.contains(&c)) {
            return start;
        }
        start += 1;
    }
}

/// Spread split types evenly over the code range.
fn interleave(counts: &[(SplitType, usize)]) -> Vec<SplitType> {
    let mut slots: Vec<(f64, usize, SplitType)> = Vec::new();
    for (rank, &(split, n)) in counts.iter().enumerate() {
        for i in 0..n {
            slots.push(((i as f64 + 0.5) / n as f64, rank, split));
        }
    }
    slots.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    slots.into_iter().map(|(_, _, s)| s).collect()
}

const SITES: &[&str] = &[
    "CRANIAL",
    "OCULAR",
    "AURAL",
    "NASAL SINUS",
    "DENTAL",
    "LARYNGEAL",
    "BRONCHIAL",
    "PLEURAL",
    "PULMONARY",
    "CORONARY",
    "VALVULAR",
    "AORTIC",
    "VENOUS",
    "ESOPHAGEAL",
    "GASTRIC",
    "DUODENAL",
    "COLONIC",
    "RECTAL",
    "HEPATIC",
    "BILIARY",
    "PANCREATIC",
    "SPLENIC",
    "RENAL",
    "BLADDER",
    "PROSTATIC",
    "UTERINE",
    "OVARIAN",
    "THYROID",
    "ADRENAL",
    "PITUITARY",
    "DERMAL",
    "BREAST",
    "HIP",
    "KNEE",
    "SHOULDER",
    "ELBOW",
    "WRIST",
    "ANKLE",
    "PELVIC",
    "THORACIC",
];

const CONDITIONS: &[&str] = &[
    "DISORDERS",
    "INFECTIONS",
    "MALIGNANCY",
    "PROCEDURES",
    "TRAUMA",
    "OBSTRUCTION",
    "HEMORRHAGE",
    "INFLAMMATION",
    "ANOMALIES",
    "REPLACEMENT",
];

fn synthetic_base_names() -> impl Iterator<Item = String> {
    CONDITIONS
        .iter()
        .flat_map(|c| SITES.iter().map(move |s| format!("{s} {c}")))
}
