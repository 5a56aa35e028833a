//! Cross-version harmonization of historical DRG descriptions onto a
//! reference catalog: abbreviation normalization, token-sort fuzzy
//! matching, and an externalized manual-review queue.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::DrgCatalog;

pub const DEFAULT_ACCEPT_THRESHOLD: f64 = 0.95;
pub const DEFAULT_REVIEW_THRESHOLD: f64 = 0.70;
pub const REVIEW_CANDIDATES: usize = 5;

#[derive(Debug, Error)]
pub enum HarmonizeError {
    #[error("catalog is empty")]
    EmptyCatalog,
    #[error("accept threshold {accept} is below review threshold {review}")]
    Thresholds { accept: f64, review: f64 },
    #[error("rule {pattern:?} -> {replacement:?}: {message}")]
    InvalidRule {
        pattern: String,
        replacement: String,
        message: String,
    },
    #[error("no review decision for {0:?}")]
    IncompleteReview(String),
    #[error("more than one review decision for {0:?}")]
    DuplicateDecision(String),
    #[error("decision for {0:?} does not match any queued item")]
    UnexpectedDecision(String),
    #[error("decision for {description:?} assigns unknown code {code}")]
    UnknownCode { description: String, code: u32 },
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
}

/// Ordered whole-token rewrite rules applied after upper-casing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NormalizationRuleSet {
    rules: Vec<(String, String)>,
    case_fold: bool,
}

impl Default for NormalizationRuleSet {
    fn default() -> Self {
        Self::new(
            [
                ("W/O", "WITHOUT"),
                ("CATH", "CATHETERIZATION"),
                ("PROC", "PROCEDURES"),
                ("W", "WITH"),
            ]
            .into_iter()
            .map(|(p, r)| (p.to_string(), r.to_string())),
        )
        .expect("default rules are valid")
    }
}

impl NormalizationRuleSet {
    /// Build a rule set, rejecting rules that would make normalization
    /// non-idempotent (a rewrite whose output is rewritten again).
    pub fn new<I>(rules: I) -> Result<Self, HarmonizeError>
    where
        I: IntoIterator<Item = (String, String)>,
    {
        let mut set = NormalizationRuleSet {
            rules: Vec::new(),
            case_fold: true,
        };
        for (pattern, replacement) in rules {
            let pattern = pattern.trim().to_uppercase();
            let replacement = replacement.trim().to_uppercase();
            let bad = |message: &str| HarmonizeError::InvalidRule {
                pattern: pattern.clone(),
                replacement: replacement.clone(),
                message: message.to_string(),
            };
            if pattern.is_empty() || pattern.split_whitespace().count() != 1 {
                return Err(bad("pattern must be a single token"));
            }
            if replacement.is_empty() || replacement.split_whitespace().count() != 1 {
                return Err(bad("replacement must be a single token"));
            }
            set.rules.push((pattern, replacement));
        }
        for (pattern, replacement) in &set.rules {
            let once = set.rewrite_token(pattern);
            if set.rewrite_token(&once) != once {
                return Err(HarmonizeError::InvalidRule {
                    pattern: pattern.clone(),
                    replacement: replacement.clone(),
                    message: format!("output {once:?} would be rewritten again"),
                });
            }
        }
        Ok(set)
    }

    /// Default rules followed by `extra`.
    pub fn with_extra<I>(extra: I) -> Result<Self, HarmonizeError>
    where
        I: IntoIterator<Item = (String, String)>,
    {
        let defaults = NormalizationRuleSet::default().rules;
        Self::new(defaults.into_iter().chain(extra))
    }

    /// Parse a `pattern,replacement` CSV (header optional).
    pub fn parse_csv(text: &str) -> Result<Vec<(String, String)>, HarmonizeError> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let mut out = Vec::new();
        for (i, record) in reader.records().enumerate() {
            let record = record.map_err(|e| HarmonizeError::Parse {
                line: e.position().map(|p| p.line()).unwrap_or(0),
                message: e.to_string(),
            })?;
            let line = record.position().map(|p| p.line()).unwrap_or(0);
            if i == 0
                && record
                    .get(0)
                    .is_some_and(|f| f.eq_ignore_ascii_case("pattern"))
            {
                continue;
            }
            if record.len() != 2 {
                return Err(HarmonizeError::Parse {
                    line,
                    message: format!("expected 2 fields, found {}", record.len()),
                });
            }
            out.push((record[0].to_string(), record[1].to_string()));
        }
        Ok(out)
    }

    pub fn rules(&self) -> &[(String, String)] {
        &self.rules
    }

    pub fn case_fold(&self) -> bool {
        self.case_fold
    }

    fn rewrite_token(&self, token: &str) -> String {
        let mut current = token.to_string();
        for (pattern, replacement) in &self.rules {
            if current == *pattern {
                current = replacement.clone();
            }
        }
        current
    }
}

/// Upper-case, collapse whitespace, and apply the rewrite rules token by
/// token.
pub fn normalize_description(raw: &str, rules: &NormalizationRuleSet) -> String {
    raw.split_whitespace()
        .map(|token| rules.rewrite_token(&token.to_uppercase()))
        .collect::<Vec<_>>()
        .join(" ")
}

fn token_sorted(s: &str) -> String {
    let mut tokens: Vec<&str> = s.split_whitespace().collect();
    tokens.sort_unstable();
    tokens.join(" ")
}

/// Token-sort ratio: `1 - levenshtein / max_len` over the sorted,
/// space-joined tokens. Two empty strings score 1.
pub fn fuzzy_score(a: &str, b: &str) -> f64 {
    let a = token_sorted(a);
    let b = token_sorted(b);
    let max_len = a.chars().count().max(b.chars().count());
    if max_len == 0 {
        return 1.0;
    }
    1.0 - strsim::levenshtein(&a, &b) as f64 / max_len as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchCandidate {
    pub code: u32,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum HarmonizationOutcome {
    Matched(u32),
    NeedsReview(Vec<MatchCandidate>),
    Excluded,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Decision {
    Assign(u32),
    Exclude,
}

impl fmt::Display for Decision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Decision::Assign(code) => write!(f, "{code}"),
            Decision::Exclude => f.write_str("EXCLUDE"),
        }
    }
}

impl std::str::FromStr for Decision {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("EXCLUDE") {
            Ok(Decision::Exclude)
        } else {
            s.parse()
                .map(Decision::Assign)
                .map_err(|_| format!("expected an integer code or EXCLUDE, found {s:?}"))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReviewDecision {
    pub historical_description: String,
    pub decision: Decision,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReviewItem {
    pub historical_description: String,
    pub candidates: Vec<MatchCandidate>,
}

/// Historical description → final decision.
pub type MappingTable = BTreeMap<String, Decision>;

/// Matches historical descriptions against a catalog.
pub struct Harmonizer<'a> {
    catalog: &'a DrgCatalog,
    rules: NormalizationRuleSet,
    accept_threshold: f64,
    review_threshold: f64,
    exact: HashMap<String, u32>,
    // (code, normalized description)
    targets: Vec<(u32, String)>,
}

impl<'a> Harmonizer<'a> {
    pub fn new(
        catalog: &'a DrgCatalog,
        rules: NormalizationRuleSet,
        accept_threshold: f64,
        review_threshold: f64,
    ) -> Result<Self, HarmonizeError> {
        if catalog.is_empty() {
            return Err(HarmonizeError::EmptyCatalog);
        }
        if accept_threshold < review_threshold {
            return Err(HarmonizeError::Thresholds {
                accept: accept_threshold,
                review: review_threshold,
            });
        }
        let mut targets: Vec<(u32, String)> = catalog
            .entries()
            .iter()
            .map(|e| {
                (
                    e.code.code,
                    normalize_description(&e.code.description, &rules),
                )
            })
            .collect();
        targets.sort_by_key(|(code, _)| *code);
        let mut exact = HashMap::new();
        for (code, text) in &targets {
            exact.entry(text.clone()).or_insert(*code);
        }
        Ok(Harmonizer {
            catalog,
            rules,
            accept_threshold,
            review_threshold,
            exact,
            targets,
        })
    }

    pub fn catalog(&self) -> &DrgCatalog {
        self.catalog
    }

    /// All candidates sorted by descending score, ties by ascending code.
    pub fn rank_candidates(&self, historical: &str) -> Vec<MatchCandidate> {
        let query = normalize_description(historical, &self.rules);
        let mut candidates: Vec<MatchCandidate> = self
            .targets
            .iter()
            .map(|(code, text)| MatchCandidate {
                code: *code,
                score: fuzzy_score(&query, text),
            })
            .collect();
        candidates.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.code.cmp(&b.code)));
        candidates
    }

    pub fn harmonize(&self, historical: &str) -> HarmonizationOutcome {
        let query = normalize_description(historical, &self.rules);
        if let Some(&code) = self.exact.get(&query) {
            return HarmonizationOutcome::Matched(code);
        }
        let ranked = self.rank_candidates(historical);
        let best = ranked[0].score;
        let unique = ranked.get(1).is_none_or(|second| second.score < best);
        if best >= self.accept_threshold && unique {
            return HarmonizationOutcome::Matched(ranked[0].code);
        }
        if best >= self.review_threshold {
            return HarmonizationOutcome::NeedsReview(
                ranked.into_iter().take(REVIEW_CANDIDATES).collect(),
            );
        }
        HarmonizationOutcome::NeedsReview(Vec::new())
    }

    /// Harmonize a batch of distinct descriptions; output order follows input.
    pub fn harmonize_batch(&self, historical: &[String]) -> Vec<(String, HarmonizationOutcome)> {
        historical
            .par_iter()
            .map(|h| (h.clone(), self.harmonize(h)))
            .collect()
    }
}

/// Harmonize the distinct descriptions: auto-accepted matches go to the
/// mapping, everything else to the review queue. Both come out sorted by
/// description.
pub fn build_mapping<'d, I>(
    harmonizer: &Harmonizer,
    descriptions: I,
) -> (MappingTable, Vec<ReviewItem>)
where
    I: IntoIterator<Item = &'d str>,
{
    let distinct: BTreeSet<&str> = descriptions.into_iter().collect();
    let distinct: Vec<String> = distinct.into_iter().map(str::to_string).collect();
    let mut mapping = MappingTable::new();
    let mut queue = Vec::new();
    for (description, outcome) in harmonizer.harmonize_batch(&distinct) {
        match outcome {
            HarmonizationOutcome::Matched(code) => {
                mapping.insert(description, Decision::Assign(code));
            }
            HarmonizationOutcome::Excluded => {
                mapping.insert(description, Decision::Exclude);
            }
            HarmonizationOutcome::NeedsReview(candidates) => queue.push(ReviewItem {
                historical_description: description,
                candidates,
            }),
        }
    }
    (mapping, queue)
}

/// One-shot wrapper around [`Harmonizer`].
pub fn harmonize_code(
    historical: &str,
    catalog: &DrgCatalog,
    accept_threshold: f64,
    review_threshold: f64,
) -> Result<HarmonizationOutcome, HarmonizeError> {
    let h = Harmonizer::new(
        catalog,
        NormalizationRuleSet::default(),
        accept_threshold,
        review_threshold,
    )?;
    Ok(h.harmonize(historical))
}

/// Resolve every queued item with exactly one decision.
pub fn apply_review_decisions(
    queue: &[ReviewItem],
    decisions: &[ReviewDecision],
    catalog: &DrgCatalog,
) -> Result<MappingTable, HarmonizeError> {
    let queued: HashSet<&str> = queue
        .iter()
        .map(|q| q.historical_description.as_str())
        .collect();
    let mut by_description: HashMap<&str, Decision> = HashMap::new();
    for d in decisions {
        let key = d.historical_description.as_str();
        if !queued.contains(key) {
            return Err(HarmonizeError::UnexpectedDecision(key.to_string()));
        }
        if by_description.insert(key, d.decision).is_some() {
            return Err(HarmonizeError::DuplicateDecision(key.to_string()));
        }
        if let Decision::Assign(code) = d.decision {
            if !catalog.contains(code) {
                return Err(HarmonizeError::UnknownCode {
                    description: key.to_string(),
                    code,
                });
            }
        }
    }
    let mut table = MappingTable::new();
    for item in queue {
        let decision = by_description
            .get(item.historical_description.as_str())
            .ok_or_else(|| HarmonizeError::IncompleteReview(item.historical_description.clone()))?;
        table.insert(item.historical_description.clone(), *decision);
    }
    Ok(table)
}

// ---- file formats ----

/// `historical_description,candidate_1_code,candidate_1_score,...` with five
/// candidate slots; empty slots are left blank.
pub fn write_review_queue(queue: &[ReviewItem]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["historical_description".to_string()];
    for i in 1..=REVIEW_CANDIDATES {
        header.push(format!("candidate_{i}_code"));
        header.push(format!("candidate_{i}_score"));
    }
    w.write_record(&header).expect("in-memory write");
    for item in queue {
        let mut row = vec![item.historical_description.clone()];
        for i in 0..REVIEW_CANDIDATES {
            match item.candidates.get(i) {
                Some(c) => {
                    row.push(c.code.to_string());
                    row.push(format!("{:.6}", c.score));
                }
                None => {
                    row.push(String::new());
                    row.push(String::new());
                }
            }
        }
        w.write_record(&row).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
}

pub fn read_review_queue(text: &str) -> Result<Vec<ReviewItem>, HarmonizeError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(text.as_bytes());
    let mut queue = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| HarmonizeError::Parse {
            line: e.position().map(|p| p.line()).unwrap_or(0),
            message: e.to_string(),
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let mut candidates = Vec::new();
        let mut i = 1;
        while i < record.len() {
            let code = record[i].trim();
            let score = record.get(i + 1).unwrap_or("").trim();
            if !code.is_empty() {
                let parse_err = || HarmonizeError::Parse {
                    line,
                    message: format!("bad candidate {code:?}/{score:?}"),
                };
                candidates.push(MatchCandidate {
                    code: code.parse().map_err(|_| parse_err())?,
                    score: score.parse().map_err(|_| parse_err())?,
                });
            }
            i += 2;
        }
        queue.push(ReviewItem {
            historical_description: record.get(0).unwrap_or("").to_string(),
            candidates,
        });
    }
    Ok(queue)
}

/// `historical_description,decision` where decision is a code or `EXCLUDE`.
pub fn read_decisions(text: &str) -> Result<Vec<ReviewDecision>, HarmonizeError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(text.as_bytes());
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| HarmonizeError::Parse {
            line: e.position().map(|p| p.line()).unwrap_or(0),
            message: e.to_string(),
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() != 2 {
            return Err(HarmonizeError::Parse {
                line,
                message: format!("expected 2 fields, found {}", record.len()),
            });
        }
        let decision = record[1]
            .parse()
            .map_err(|message| HarmonizeError::Parse { line, message })?;
        out.push(ReviewDecision {
            historical_description: record[0].to_string(),
            decision,
        });
    }
    Ok(out)
}

/// `historical_description,decision`.
pub fn write_mapping(table: &MappingTable) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["historical_description", "decision"])
        .expect("in-memory write");
    for (description, decision) in table {
        w.write_record([description.as_str(), &decision.to_string()])
            .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
}

pub fn read_mapping(text: &str) -> Result<MappingTable, HarmonizeError> {
    Ok(read_decisions(text)?
        .into_iter()
        .map(|d| (d.historical_description, d.decision))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::bundled_catalog_csv;
    use proptest::prelude::*;

    fn bundled() -> DrgCatalog {
        DrgCatalog::parse(&bundled_catalog_csv(), "v34").unwrap()
    }

    /// Full-matrix edit distance over chars.
    fn dp_levenshtein(a: &str, b: &str) -> usize {
        let a: Vec<char> = a.chars().collect();
        let b: Vec<char> = b.chars().collect();
        let mut d = vec![vec![0usize; b.len() + 1]; a.len() + 1];
        for (i, row) in d.iter_mut().enumerate() {
            row[0] = i;
        }
        for j in 0..=b.len() {
            d[0][j] = j;
        }
        for i in 1..=a.len() {
            for j in 1..=b.len() {
                let sub = d[i - 1][j - 1] + usize::from(a[i - 1] != b[j - 1]);
                d[i][j] = sub.min(d[i - 1][j] + 1).min(d[i][j - 1] + 1);
            }
        }
        d[a.len()][b.len()]
    }

    #[test]
    fn normalize_examples() {
        let rules = NormalizationRuleSet::default();
        assert_eq!(
            normalize_description("Urinary Stones w/o MCC", &rules),
            "URINARY STONES WITHOUT MCC"
        );
        assert_eq!(
            normalize_description("TRANSIENT ISCHEMIA", &rules),
            "TRANSIENT ISCHEMIA"
        );
        assert_eq!(
            normalize_description("CARDIAC CATH PROC", &rules),
            "CARDIAC CATHETERIZATION PROCEDURES"
        );
        assert_eq!(
            normalize_description("  URINARY   STONES W MCC ", &rules),
            "URINARY STONES WITH MCC"
        );
    }

    #[test]
    fn non_idempotent_rules_rejected() {
        // A -> B happens after B -> C, so a second pass would turn B into C
        let rules = vec![("B".into(), "C".into()), ("A".into(), "B".into())];
        assert!(matches!(
            NormalizationRuleSet::new(rules),
            Err(HarmonizeError::InvalidRule { .. })
        ));
        // chained rules collapse within one pass
        let rules = vec![("A".into(), "B".into()), ("B".into(), "C".into())];
        let set = NormalizationRuleSet::new(rules).unwrap();
        assert_eq!(normalize_description("a b c", &set), "C C C");
    }

    #[test]
    fn rules_csv() {
        let parsed =
            NormalizationRuleSet::parse_csv("pattern,replacement\nHOSP,HOSPITAL\n").unwrap();
        assert_eq!(parsed, vec![("HOSP".to_string(), "HOSPITAL".to_string())]);
        let set = NormalizationRuleSet::with_extra(parsed).unwrap();
        assert_eq!(set.rules().len(), 5);
    }

    #[test]
    fn fuzzy_examples() {
        assert_eq!(fuzzy_score("SPINAL DISORDERS", "SPINAL DISORDERS"), 1.0);
        assert_eq!(fuzzy_score("DISORDERS SPINAL", "SPINAL DISORDERS"), 1.0);
        assert_eq!(fuzzy_score("", ""), 1.0);
        // sorted: "CC CONCUSSION WITH" vs "CONCUSSION MCC WITH"
        let a = "CC CONCUSSION WITH";
        let b = "CONCUSSION MCC WITH";
        let expected = 1.0 - dp_levenshtein(a, b) as f64 / 19.0;
        assert_eq!(
            fuzzy_score("CONCUSSION WITH CC", "CONCUSSION WITH MCC"),
            expected
        );
    }

    #[test]
    fn exact_match_path() {
        let catalog = bundled();
        assert_eq!(
            harmonize_code("TRANSIENT ISCHEMIA", &catalog, 0.95, 0.70).unwrap(),
            HarmonizationOutcome::Matched(69)
        );
        assert_eq!(
            harmonize_code("Transient  Ischemia", &catalog, 0.95, 0.70).unwrap(),
            HarmonizationOutcome::Matched(69)
        );
    }

    #[test]
    fn historical_urinary_stones_goes_to_review_then_excluded() {
        let catalog = bundled();
        let outcome = harmonize_code("URINARY STONES W MCC", &catalog, 0.95, 0.70).unwrap();
        let candidates = match outcome {
            HarmonizationOutcome::NeedsReview(c) => c,
            other => panic!("unexpected {other:?}"),
        };
        let queue = vec![ReviewItem {
            historical_description: "URINARY STONES W MCC".into(),
            candidates,
        }];
        let table = apply_review_decisions(
            &queue,
            &[ReviewDecision {
                historical_description: "URINARY STONES W MCC".into(),
                decision: Decision::Exclude,
            }],
            &catalog,
        )
        .unwrap();
        assert_eq!(table["URINARY STONES W MCC"], Decision::Exclude);
    }

    #[test]
    fn build_mapping_splits_matches_from_queue() {
        let catalog = bundled();
        let h = Harmonizer::new(&catalog, NormalizationRuleSet::default(), 0.95, 0.70).unwrap();
        let (mapping, queue) = build_mapping(
            &h,
            [
                "TRANSIENT ISCHEMIA",
                "URINARY STONES W MCC",
                "TRANSIENT ISCHEMIA",
                "URINARY STONES W/O ESW LITHOTRIPSY W MCC",
            ],
        );
        assert_eq!(mapping.len(), 2);
        assert_eq!(mapping["TRANSIENT ISCHEMIA"], Decision::Assign(69));
        assert_eq!(
            mapping["URINARY STONES W/O ESW LITHOTRIPSY W MCC"],
            Decision::Assign(693)
        );
        assert_eq!(queue.len(), 1);
        assert_eq!(queue[0].historical_description, "URINARY STONES W MCC");
    }

    #[test]
    fn token_swap_matches_via_fuzzy_path() {
        let catalog = bundled();
        let swapped = "SPINAL AND DISORDERS INJURIES WITHOUT CC/MCC";
        assert_eq!(
            harmonize_code(swapped, &catalog, 0.95, 0.70).unwrap(),
            HarmonizationOutcome::Matched(53)
        );
    }

    #[test]
    fn review_candidates_sorted_and_capped() {
        let catalog = bundled();
        let h = Harmonizer::new(&catalog, NormalizationRuleSet::default(), 0.99, 0.5).unwrap();
        match h.harmonize("SPINAL DISORDERS AND INJURY WITH CC") {
            HarmonizationOutcome::NeedsReview(c) => {
                assert_eq!(c.len(), REVIEW_CANDIDATES);
                assert!(c.windows(2).all(|w| w[0].score > w[1].score
                    || (w[0].score == w[1].score && w[0].code < w[1].code)));
                assert!(c[0].code == 52 || c[0].code == 53);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn non_unique_maximizer_goes_to_review() {
        // two catalog rows equal as token multisets
        let catalog = DrgCatalog::parse("1,ALPHA BETA GAMMA\n2,GAMMA BETA ALPHA\n", "t").unwrap();
        let out = harmonize_code("BETA ALPHA GAMMA", &catalog, 0.95, 0.70).unwrap();
        assert!(matches!(out, HarmonizationOutcome::NeedsReview(ref c) if c.len() == 2));
    }

    #[test]
    fn configuration_errors() {
        let empty = DrgCatalog::default();
        assert!(matches!(
            harmonize_code("X", &empty, 0.95, 0.7),
            Err(HarmonizeError::EmptyCatalog)
        ));
        assert!(matches!(
            harmonize_code("X", &bundled(), 0.5, 0.7),
            Err(HarmonizeError::Thresholds { .. })
        ));
    }

    #[test]
    fn review_decision_errors() {
        let catalog = bundled();
        let queue = vec![ReviewItem {
            historical_description: "FOO".into(),
            candidates: vec![],
        }];
        let ok = apply_review_decisions(
            &queue,
            &[ReviewDecision {
                historical_description: "FOO".into(),
                decision: Decision::Assign(69),
            }],
            &catalog,
        )
        .unwrap();
        assert_eq!(ok["FOO"], Decision::Assign(69));
        assert!(matches!(
            apply_review_decisions(&queue, &[], &catalog),
            Err(HarmonizeError::IncompleteReview(_))
        ));
        assert!(matches!(
            apply_review_decisions(
                &queue,
                &[ReviewDecision {
                    historical_description: "FOO".into(),
                    decision: Decision::Assign(99999),
                }],
                &catalog
            ),
            Err(HarmonizeError::UnknownCode { code: 99999, .. })
        ));
    }

    #[test]
    fn queue_csv_round_trip() {
        let queue = vec![
            ReviewItem {
                historical_description: "URINARY STONES W MCC, OLD".into(),
                candidates: vec![
                    MatchCandidate {
                        code: 693,
                        score: 0.5,
                    },
                    MatchCandidate {
                        code: 694,
                        score: 0.25,
                    },
                ],
            },
            ReviewItem {
                historical_description: "NOTHING".into(),
                candidates: vec![],
            },
        ];
        let text = write_review_queue(&queue);
        assert!(text.starts_with("historical_description,candidate_1_code,candidate_1_score,"));
        assert!(text
            .lines()
            .next()
            .unwrap()
            .ends_with("candidate_5_code,candidate_5_score"));
        assert_eq!(read_review_queue(&text).unwrap(), queue);
    }

    #[test]
    fn decisions_csv() {
        let d = read_decisions("historical_description,decision\nFOO,69\nBAR,EXCLUDE\n").unwrap();
        assert_eq!(d[0].decision, Decision::Assign(69));
        assert_eq!(d[1].decision, Decision::Exclude);
        assert!(read_decisions("historical_description,decision\nFOO,maybe\n").is_err());
    }

    proptest! {
        #[test]
        fn normalize_idempotent(raw in "[a-zA-Z/ ]{0,40}") {
            let rules = NormalizationRuleSet::default();
            let once = normalize_description(&raw, &rules);
            prop_assert_eq!(normalize_description(&once, &rules), once);
        }

        #[test]
        fn fuzzy_symmetric_and_order_free(
            a in proptest::collection::vec("[A-C]{1,4}", 0..6),
            b in proptest::collection::vec("[A-C]{1,4}", 0..6),
        ) {
            let sa = a.join(" ");
            let sb = b.join(" ");
            let s = fuzzy_score(&sa, &sb);
            prop_assert!((0.0..=1.0).contains(&s));
            prop_assert_eq!(s, fuzzy_score(&sb, &sa));
            prop_assert_eq!(fuzzy_score(&sa, &sa), 1.0);
            let mut rev = a.clone();
            rev.reverse();
            prop_assert_eq!(s, fuzzy_score(&rev.join(" "), &sb));
            let ta = token_sorted(&sa);
            let tb = token_sorted(&sb);
            let max = ta.chars().count().max(tb.chars().count());
            if max > 0 {
                prop_assert_eq!(s, 1.0 - dp_levenshtein(&ta, &tb) as f64 / max as f64);
            }
        }
    }
}
