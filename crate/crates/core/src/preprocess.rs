//! Cohort construction: "brief hospital course" extraction, quality
//! filters, rare-class removal and a per-class stratified train/test split.

use std::collections::{BTreeMap, HashSet};
use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::harmonize::{Decision, MappingTable};
use crate::stats;

pub const MIN_WORDS: usize = 40;
pub const DEFAULT_MIN_CLASS_COUNT: usize = 2;
pub const DEFAULT_TEST_FRACTION: f64 = 0.10;

#[derive(Debug, Error)]
pub enum PreprocessError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("duplicate stay_id {0:?}")]
    DuplicateStay(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawNote {
    pub stay_id: String,
    #[serde(rename = "text")]
    pub full_text: String,
    pub drg_description: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drg_version_tag: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StayRecord {
    pub stay_id: String,
    pub course_text: String,
    pub word_count: usize,
    pub drg_code: u32,
}

impl StayRecord {
    pub fn new(stay_id: impl Into<String>, course_text: impl Into<String>, drg_code: u32) -> Self {
        let course_text = course_text.into();
        StayRecord {
            stay_id: stay_id.into(),
            word_count: word_count(&course_text),
            course_text,
            drg_code,
        }
    }
}

/// A record before filtering. `drg_code` is `None` when harmonization left
/// the stay without a reference code.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CandidateRecord {
    pub stay_id: String,
    pub course_text: String,
    pub drg_code: Option<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    MissingSection,
    UnmappedDrg,
    TooShort,
    Duplicate,
    RareDrg,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DropReport(pub BTreeMap<DropReason, usize>);

impl DropReport {
    pub fn add(&mut self, reason: DropReason, n: usize) {
        if n > 0 {
            *self.0.entry(reason).or_default() += n;
        }
    }

    pub fn get(&self, reason: DropReason) -> usize {
        self.0.get(&reason).copied().unwrap_or(0)
    }

    pub fn total(&self) -> usize {
        self.0.values().sum()
    }

    pub fn merge(&mut self, other: &DropReport) {
        for (&reason, &n) in &other.0 {
            self.add(reason, n);
        }
    }
}

/// Whitespace-delimited token count.
pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

const HEADER_CONNECTORS: &[&str] = &[
    "on", "of", "and", "at", "to", "the", "for", "in", "with", "or",
];

/// A section header is a line of at most six words ending in a colon, where
/// the first word is capitalized and every other word is capitalized or a
/// short connector ("Medications on Admission:").
fn is_section_header(line: &str) -> bool {
    let line = line.trim();
    let Some(body) = line.strip_suffix(':') else {
        return false;
    };
    let words: Vec<&str> = body.split_whitespace().collect();
    if words.is_empty() || words.len() > 6 {
        return false;
    }
    let capitalized = |w: &str| w.chars().next().is_some_and(|c| c.is_uppercase());
    capitalized(words[0])
        && words[1..]
            .iter()
            .all(|w| capitalized(w) || HEADER_CONNECTORS.contains(&w.to_lowercase().as_str()))
}

const COURSE_HEADER: &str = "brief hospital course";

/// If `line` opens the course section, the inline remainder after the header.
fn course_header_remainder(line: &str) -> Option<&str> {
    let trimmed = line.trim_start();
    let head = trimmed.get(..COURSE_HEADER.len())?;
    if !head.eq_ignore_ascii_case(COURSE_HEADER) {
        return None;
    }
    let rest = &trimmed[COURSE_HEADER.len()..];
    let rest = rest.strip_prefix(':').unwrap_or(rest);
    // "Brief Hospital Courses" or similar is not the header
    if rest.starts_with(|c: char| c.is_alphanumeric()) {
        return None;
    }
    Some(rest.trim())
}

/// Text between the `Brief Hospital Course` header line and the next section
/// header, or `None` when the header is missing.
pub fn extract_brief_hospital_course(text: &str) -> Option<String> {
    let mut lines = text.lines();
    let mut body: Vec<&str> = Vec::new();
    loop {
        let line = lines.next()?;
        if let Some(rest) = course_header_remainder(line) {
            if !rest.is_empty() {
                body.push(rest);
            }
            break;
        }
    }
    for line in lines {
        if is_section_header(line) {
            break;
        }
        body.push(line);
    }
    Some(body.join("\n").trim().to_string())
}

/// Resolve each note to a candidate record. Notes without the section come
/// back as `None`.
pub fn extract_candidates(
    notes: &[RawNote],
    mapping: &MappingTable,
) -> Vec<Option<CandidateRecord>> {
    notes
        .par_iter()
        .map(|note| {
            let course_text = extract_brief_hospital_course(&note.full_text)?;
            let drg_code = match mapping.get(&note.drg_description) {
                Some(Decision::Assign(code)) => Some(*code),
                Some(Decision::Exclude) | None => None,
            };
            Some(CandidateRecord {
                stay_id: note.stay_id.clone(),
                course_text,
                drg_code,
            })
        })
        .collect()
}

/// Drop unmapped stays, courses under [`MIN_WORDS`] words, and exact
/// duplicate courses after their first occurrence.
pub fn filter_cohort(records: Vec<CandidateRecord>) -> (Vec<StayRecord>, DropReport) {
    let mut report = DropReport::default();
    let mut seen: HashSet<String> = HashSet::new();
    let mut kept = Vec::new();
    for r in records {
        let Some(code) = r.drg_code else {
            report.add(DropReason::UnmappedDrg, 1);
            continue;
        };
        let record = StayRecord::new(r.stay_id, r.course_text, code);
        if record.word_count < MIN_WORDS {
            report.add(DropReason::TooShort, 1);
            continue;
        }
        if !seen.insert(record.course_text.clone()) {
            report.add(DropReason::Duplicate, 1);
            continue;
        }
        kept.push(record);
    }
    (kept, report)
}

/// Remove every record whose class has fewer than `min_count` members.
pub fn drop_rare_drgs(records: Vec<StayRecord>, min_count: usize) -> (Vec<StayRecord>, usize) {
    let counts = class_counts(&records);
    let before = records.len();
    let kept: Vec<StayRecord> = records
        .into_iter()
        .filter(|r| counts[&r.drg_code] >= min_count)
        .collect();
    let dropped = before - kept.len();
    (kept, dropped)
}

pub fn class_counts(records: &[StayRecord]) -> BTreeMap<u32, usize> {
    let mut counts = BTreeMap::new();
    for r in records {
        *counts.entry(r.drg_code).or_default() += 1;
    }
    counts
}

/// Training share of a class of size `n`: round-half-up of
/// `(1 - test_fraction) * n`, clamped to `[1, n]`.
pub fn train_count(n: usize, test_fraction: f64) -> usize {
    if n == 0 {
        return 0;
    }
    let exact = n as f64 * (1.0 - test_fraction);
    // tolerance absorbs representation error at exact halves (0.9 * 5 = 4.5)
    let rounded = (exact + 0.5 + 1e-9).floor() as usize;
    rounded.clamp(1, n)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CohortSplit {
    pub train: Vec<StayRecord>,
    pub test: Vec<StayRecord>,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitSide {
    Train,
    Test,
}

/// Per-class stratified split. Each class is shuffled with its own
/// generator derived from `seed` and the class code; both output lists keep
/// the input order.
pub fn stratified_split(records: &[StayRecord], test_fraction: f64, seed: u64) -> CohortSplit {
    let mut by_class: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        by_class.entry(r.drg_code).or_default().push(i);
    }
    let mut side = vec![SplitSide::Train; records.len()];
    for (&code, members) in &by_class {
        let mut shuffled = members.clone();
        let mut rng =
            ChaCha8Rng::seed_from_u64(seed ^ (u64::from(code)).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        shuffled.shuffle(&mut rng);
        let n_train = train_count(members.len(), test_fraction);
        for &i in &shuffled[n_train..] {
            side[i] = SplitSide::Test;
        }
    }
    let mut split = CohortSplit {
        train: Vec::new(),
        test: Vec::new(),
        seed,
    };
    for (r, s) in records.iter().zip(side) {
        match s {
            SplitSide::Train => split.train.push(r.clone()),
            SplitSide::Test => split.test.push(r.clone()),
        }
    }
    split
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortStats {
    pub n_records: usize,
    pub unique_labels: usize,
    pub per_class: BTreeMap<u32, usize>,
    pub median_cases_per_class: Option<f64>,
    pub mean_word_count: Option<f64>,
}

pub fn cohort_stats(records: &[StayRecord]) -> CohortStats {
    let per_class = class_counts(records);
    let counts: Vec<f64> = per_class.values().map(|&c| c as f64).collect();
    let words: Vec<f64> = records.iter().map(|r| r.word_count as f64).collect();
    CohortStats {
        n_records: records.len(),
        unique_labels: per_class.len(),
        median_cases_per_class: stats::median(&counts),
        mean_word_count: stats::mean(&words),
        per_class,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitStats {
    pub train: CohortStats,
    pub test: CohortStats,
}

pub fn split_stats(split: &CohortSplit) -> SplitStats {
    SplitStats {
        train: cohort_stats(&split.train),
        test: cohort_stats(&split.test),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PreprocessConfig {
    pub min_class_count: usize,
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            min_class_count: DEFAULT_MIN_CLASS_COUNT,
            test_fraction: DEFAULT_TEST_FRACTION,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CohortOutcome {
    pub split: CohortSplit,
    /// Stays in input order with their side, for the cohort file.
    pub rows: Vec<CohortRow>,
    pub drops: DropReport,
    pub stats: SplitStats,
}

/// Full pipeline: extraction, mapping, filters, rare-class removal, split.
pub fn build_cohort(
    notes: &[RawNote],
    mapping: &MappingTable,
    config: &PreprocessConfig,
) -> Result<CohortOutcome, PreprocessError> {
    let mut ids = HashSet::new();
    for n in notes {
        if !ids.insert(n.stay_id.as_str()) {
            return Err(PreprocessError::DuplicateStay(n.stay_id.clone()));
        }
    }
    let mut drops = DropReport::default();
    let candidates: Vec<CandidateRecord> = extract_candidates(notes, mapping)
        .into_iter()
        .filter_map(|c| {
            if c.is_none() {
                drops.add(DropReason::MissingSection, 1);
            }
            c
        })
        .collect();
    let (kept, filter_drops) = filter_cohort(candidates);
    drops.merge(&filter_drops);
    let (kept, rare) = drop_rare_drgs(kept, config.min_class_count);
    drops.add(DropReason::RareDrg, rare);
    let split = stratified_split(&kept, config.test_fraction, config.seed);

    let test_ids: HashSet<&str> = split.test.iter().map(|r| r.stay_id.as_str()).collect();
    let rows = kept
        .iter()
        .map(|r| CohortRow {
            stay_id: r.stay_id.clone(),
            course_text: r.course_text.clone(),
            drg_code: r.drg_code,
            split: if test_ids.contains(r.stay_id.as_str()) {
                SplitSide::Test
            } else {
                SplitSide::Train
            },
        })
        .collect();
    let stats = split_stats(&split);
    Ok(CohortOutcome {
        split,
        rows,
        drops,
        stats,
    })
}

// ---- JSON-lines ----

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CohortRow {
    pub stay_id: String,
    pub course_text: String,
    pub drg_code: u32,
    pub split: SplitSide,
}

pub fn read_jsonl<T, R>(reader: R) -> Result<Vec<T>, PreprocessError>
where
    T: serde::de::DeserializeOwned,
    R: BufRead,
{
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line).map_err(|e| PreprocessError::Parse {
                line: i + 1,
                message: e.to_string(),
            })?,
        );
    }
    Ok(out)
}

pub fn write_jsonl<T, W>(mut writer: W, items: &[T]) -> Result<(), PreprocessError>
where
    T: Serialize,
    W: Write,
{
    for item in items {
        serde_json::to_writer(&mut writer, item).map_err(std::io::Error::from)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

/// Rebuild a split from cohort rows.
pub fn split_from_rows(rows: &[CohortRow], seed: u64) -> CohortSplit {
    let mut split = CohortSplit {
        train: Vec::new(),
        test: Vec::new(),
        seed,
    };
    for row in rows {
        let record = StayRecord::new(row.stay_id.clone(), row.course_text.clone(), row.drg_code);
        match row.split {
            SplitSide::Train => split.train.push(record),
            SplitSide::Test => split.test.push(record),
        }
    }
    split
}

/// Class code → count, restricted to one side.
pub fn train_counts(split: &CohortSplit) -> BTreeMap<u32, usize> {
    class_counts(&split.train)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn words(n: usize) -> String {
        (0..n)
            .map(|i| format!("w{i}"))
            .collect::<Vec<_>>()
            .join(" ")
    }

    fn records(sizes: &[(u32, usize)]) -> Vec<StayRecord> {
        let mut out = Vec::new();
        for &(code, n) in sizes {
            for i in 0..n {
                out.push(StayRecord::new(format!("{code}-{i}"), words(40), code));
            }
        }
        out
    }

    #[test]
    fn extracts_two_section_note() {
        let note = "Chief Complaint:\nchest pain\nBrief Hospital Course:\nPatient admitted...\nMedications on Admission:\naspirin\n";
        assert_eq!(
            extract_brief_hospital_course(note).as_deref(),
            Some("Patient admitted...")
        );
    }

    #[test]
    fn missing_section_is_absent() {
        assert_eq!(
            extract_brief_hospital_course("History of Present Illness:\nfoo\n"),
            None
        );
    }

    #[test]
    fn lowercase_header_and_inline_text() {
        let note = "brief hospital course:\nline one\nline two\nDischarge Disposition:\nHome\n";
        assert_eq!(
            extract_brief_hospital_course(note).as_deref(),
            Some("line one\nline two")
        );
        let note = "BRIEF HOSPITAL COURSE: inline start\nmore\n";
        assert_eq!(
            extract_brief_hospital_course(note).as_deref(),
            Some("inline start\nmore")
        );
        assert_eq!(
            extract_brief_hospital_course("Brief Hospital Courses:\nx"),
            None
        );
    }

    #[test]
    fn header_grammar() {
        assert!(is_section_header("Medications on Admission:"));
        assert!(is_section_header("DISCHARGE DIAGNOSIS:"));
        assert!(!is_section_header("the patient was stable:"));
        assert!(!is_section_header("One Two Three Four Five Six Seven:"));
        assert!(!is_section_header("Discharge Diagnosis"));
    }

    #[test]
    fn length_filter_boundary() {
        let recs = vec![
            CandidateRecord {
                stay_id: "a".into(),
                course_text: words(39),
                drg_code: Some(1),
            },
            CandidateRecord {
                stay_id: "b".into(),
                course_text: words(40),
                drg_code: Some(1),
            },
        ];
        let (kept, report) = filter_cohort(recs);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].stay_id, "b");
        assert_eq!(report.get(DropReason::TooShort), 1);
    }

    #[test]
    fn duplicates_keep_first() {
        let recs = vec![
            CandidateRecord {
                stay_id: "a".into(),
                course_text: words(45),
                drg_code: Some(1),
            },
            CandidateRecord {
                stay_id: "b".into(),
                course_text: words(45),
                drg_code: Some(2),
            },
            CandidateRecord {
                stay_id: "c".into(),
                course_text: words(45),
                drg_code: None,
            },
        ];
        let (kept, report) = filter_cohort(recs);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].stay_id, "a");
        assert_eq!(report.get(DropReason::Duplicate), 1);
        assert_eq!(report.get(DropReason::UnmappedDrg), 1);
    }

    #[test]
    fn rare_classes() {
        let (kept, dropped) = drop_rare_drgs(records(&[(1, 1), (2, 2)]), 2);
        assert_eq!(dropped, 1);
        assert!(kept.iter().all(|r| r.drg_code == 2));
        assert!(drop_rare_drgs(Vec::new(), 2).0.is_empty());
    }

    #[test]
    fn split_rounding() {
        assert_eq!(train_count(10, 0.1), 9);
        assert_eq!(train_count(2, 0.1), 2);
        assert_eq!(train_count(20, 0.1), 18);
        assert_eq!(train_count(5, 0.1), 5);
        assert_eq!(train_count(15, 0.1), 14);
        assert_eq!(train_count(1, 0.9), 1);
    }

    #[test]
    fn split_sizes_per_class() {
        let split = stratified_split(&records(&[(1, 2), (2, 3), (3, 10), (4, 20)]), 0.1, 7);
        let train = class_counts(&split.train);
        let test = class_counts(&split.test);
        assert_eq!(
            train.values().copied().collect::<Vec<_>>(),
            vec![2, 3, 9, 18]
        );
        assert_eq!(test.get(&1), None);
        assert_eq!(test.get(&2), None);
        assert_eq!(test[&3], 1);
        assert_eq!(test[&4], 2);
    }

    #[test]
    fn stats_medians() {
        let s = cohort_stats(&records(&[(1, 1), (2, 2), (3, 3), (4, 4)]));
        assert_eq!(s.median_cases_per_class, Some(2.5));
        assert_eq!(s.unique_labels, 4);
        assert_eq!(s.mean_word_count, Some(40.0));
        let s = cohort_stats(&records(&[(9, 6)]));
        assert_eq!(s.median_cases_per_class, Some(6.0));
    }

    #[test]
    fn pipeline_counts() {
        let mut notes = Vec::new();
        let mut mapping = MappingTable::new();
        mapping.insert("A".into(), Decision::Assign(1));
        mapping.insert("B".into(), Decision::Exclude);
        for i in 0..6 {
            notes.push(RawNote {
                stay_id: format!("s{i}"),
                full_text: format!("Brief Hospital Course:\n{} extra{i}\nPlan:\n", words(40)),
                drg_description: "A".into(),
                drg_version_tag: None,
            });
        }
        notes.push(RawNote {
            stay_id: "x".into(),
            full_text: "no section".into(),
            drg_description: "A".into(),
            drg_version_tag: None,
        });
        notes.push(RawNote {
            stay_id: "y".into(),
            full_text: format!("Brief Hospital Course:\n{}\n", words(50)),
            drg_description: "B".into(),
            drg_version_tag: None,
        });
        let out = build_cohort(&notes, &mapping, &PreprocessConfig::default()).unwrap();
        assert_eq!(out.rows.len(), 6);
        assert_eq!(out.drops.get(DropReason::MissingSection), 1);
        assert_eq!(out.drops.get(DropReason::UnmappedDrg), 1);
        assert_eq!(out.split.train.len() + out.split.test.len(), 6);
        assert_eq!(out.split.test.len(), 1);
        let json = serde_json::to_string(&out.drops).unwrap();
        assert_eq!(json, r#"{"missing_section":1,"unmapped_drg":1}"#);
    }

    #[test]
    fn duplicate_stay_ids_rejected() {
        let note = RawNote {
            stay_id: "s".into(),
            full_text: String::new(),
            drg_description: "A".into(),
            drg_version_tag: None,
        };
        assert!(matches!(
            build_cohort(
                &[note.clone(), note],
                &MappingTable::new(),
                &PreprocessConfig::default()
            ),
            Err(PreprocessError::DuplicateStay(_))
        ));
    }

    proptest! {
        #[test]
        fn split_is_deterministic_and_count_preserving(
            sizes in proptest::collection::vec(2usize..30, 1..8),
            seed_a in any::<u64>(),
            seed_b in any::<u64>(),
        ) {
            let spec: Vec<(u32, usize)> = sizes.iter().enumerate().map(|(i, &n)| (i as u32, n)).collect();
            let recs = records(&spec);
            let a = stratified_split(&recs, 0.1, seed_a);
            prop_assert_eq!(&a, &stratified_split(&recs, 0.1, seed_a));
            let b = stratified_split(&recs, 0.1, seed_b);
            prop_assert_eq!(class_counts(&a.train), class_counts(&b.train));
            prop_assert_eq!(class_counts(&a.test), class_counts(&b.test));
            let train = class_counts(&a.train);
            for (code, n) in class_counts(&a.test) {
                prop_assert!(n > 0 && train[&code] >= 1);
            }
            let ids: HashSet<&str> = a.train.iter().map(|r| r.stay_id.as_str()).collect();
            prop_assert!(a.test.iter().all(|r| !ids.contains(r.stay_id.as_str())));
            prop_assert_eq!(a.train.len() + a.test.len(), recs.len());
        }

        #[test]
        fn filters_conserve_records(lens in proptest::collection::vec((0usize..60, 0u32..4, any::<bool>()), 0..40)) {
            let recs: Vec<CandidateRecord> = lens
                .iter()
                .enumerate()
                .map(|(i, &(n, code, mapped))| CandidateRecord {
                    stay_id: i.to_string(),
                    course_text: words(n),
                    drg_code: mapped.then_some(code),
                })
                .collect();
            let total = recs.len();
            let (kept, report) = filter_cohort(recs);
            prop_assert_eq!(kept.len() + report.total(), total);
            let before = class_counts(&kept);
            let (rare_kept, rare) = drop_rare_drgs(kept, 2);
            prop_assert_eq!(rare_kept.len() + rare + report.total(), total);
            for (code, n) in class_counts(&rare_kept) {
                prop_assert!(n <= before[&code]);
            }
        }
    }
}
