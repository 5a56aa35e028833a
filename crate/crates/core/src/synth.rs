//! Synthetic discharge notes with learnable structure, for desk-scale
//! end-to-end runs.
//!
//! Each base DRG owns three pseudo-word signature tokens and each severity
//! arm draws keywords from a complication-level pool, so both the base and
//! the arm are recoverable from the text. Filler words, cross-base confuser
//! tokens, short notes, duplicates, notes without the course section,
//! abbreviated historical DRG descriptions and ungroupable stays exercise
//! the preprocessing and harmonization stages.

use rand::distributions::WeightedIndex;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::catalog::{recompose, DrgCatalog, SeverityArm, SyntheticCatalogSpec};
use crate::preprocess::RawNote;

/// Description used for stays that no catalog entry can absorb.
pub const UNGROUPABLE_DESCRIPTION: &str = "UNGROUPABLE";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoteGenSpec {
    pub n_notes: usize,
    pub seed: u64,
    /// Zipf exponent over a seeded permutation of the codes.
    pub zipf_exponent: f64,
    pub short_fraction: f64,
    pub duplicate_fraction: f64,
    pub missing_section_fraction: f64,
    /// Notes whose DRG description uses the older `W` / `W/O` spelling.
    pub historical_fraction: f64,
    pub ungroupable_fraction: f64,
    /// Probability of one signature token borrowed from another base.
    pub confuser_rate: f64,
}

impl Default for NoteGenSpec {
    fn default() -> Self {
        NoteGenSpec {
            n_notes: 6000,
            seed: 0,
            zipf_exponent: 0.6,
            short_fraction: 0.02,
            duplicate_fraction: 0.01,
            missing_section_fraction: 0.01,
            historical_fraction: 0.10,
            ungroupable_fraction: 0.005,
            confuser_rate: 0.10,
        }
    }
}

/// 60 bases (20 three-way, 14 + 14 two-way, 12 unsplit) with the reference
/// examples at their real codes: 128 codes.
pub const DESK_CATALOG: SyntheticCatalogSpec = SyntheticCatalogSpec {
    three_way: 20,
    two_way_ccmcc_vs_none: 14,
    two_way_mcc_vs_rest: 14,
    no_split: 12,
    include_reference_examples: true,
};

const SYLLABLES: &[&str] = &[
    "ka", "lo", "mi", "ne", "ru", "ta", "vo", "xi", "ze", "bu", "da", "fe", "gi", "ho", "ju", "pa",
    "qe", "si", "wo", "yu",
];

const MCC_WORDS: &[&str] = &[
    "sepsis",
    "intubated",
    "pressors",
    "shock",
    "hemorrhage",
    "arrest",
    "icu",
    "ventilator",
];
const CC_WORDS: &[&str] = &[
    "anemia",
    "hyponatremia",
    "delirium",
    "malnutrition",
    "cellulitis",
    "effusion",
    "ckd",
    "afib",
];
const PLAIN_WORDS: &[&str] = &[
    "uncomplicated",
    "ambulating",
    "tolerated",
    "unremarkable",
    "routine",
    "afebrile",
    "euvolemic",
    "baseline",
];

const FILLER: &[&str] = &[
    "patient",
    "was",
    "admitted",
    "with",
    "the",
    "and",
    "for",
    "on",
    "to",
    "of",
    "in",
    "given",
    "started",
    "continued",
    "held",
    "day",
    "morning",
    "evening",
    "team",
    "plan",
    "follow",
    "up",
    "outpatient",
    "discharge",
    "home",
    "pain",
    "controlled",
    "oral",
    "iv",
    "fluids",
    "labs",
    "imaging",
    "consulted",
    "service",
    "recommended",
    "monitoring",
    "vital",
    "signs",
    "normal",
    "improved",
    "symptoms",
    "history",
    "presented",
    "noted",
    "medications",
    "dose",
    "adjusted",
    "family",
    "discussed",
    "status",
    "stable",
    "nursing",
    "physical",
    "therapy",
    "evaluation",
    "overnight",
    "repeat",
    "studies",
    "showed",
    "no",
    "acute",
    "changes",
    "remained",
    "hospital",
    "course",
    "further",
    "workup",
    "negative",
    "diet",
    "advanced",
    "tolerating",
    "well",
    "after",
    "prior",
    "admission",
    "ed",
    "floor",
    "transferred",
    "received",
    "regimen",
];

/// Three signature pseudo-words per base, disjoint across bases.
pub fn signature_tokens(base_id: usize) -> [String; 3] {
    let n = SYLLABLES.len();
    let word = |i: usize| {
        format!(
            "{}{}{}",
            SYLLABLES[(i / (n * n)) % n],
            SYLLABLES[(i / n) % n],
            SYLLABLES[i % n]
        )
    };
    // offset keeps signatures away from degenerate repeats like "kakaka"
    let i = 3 * base_id + n * n + n + 1;
    [word(i), word(i + 1), word(i + 2)]
}

#[derive(Clone, Copy)]
enum Level {
    Major,
    Minor,
    Plain,
}

fn level_words(level: Level) -> &'static [&'static str] {
    match level {
        Level::Major => MCC_WORDS,
        Level::Minor => CC_WORDS,
        Level::Plain => PLAIN_WORDS,
    }
}

fn arm_level(arm: SeverityArm, rng: &mut ChaCha8Rng) -> Level {
    match arm {
        SeverityArm::WithMcc => Level::Major,
        SeverityArm::WithCc => Level::Minor,
        SeverityArm::WithoutCcMcc => Level::Plain,
        SeverityArm::WithCcMcc => *[Level::Major, Level::Minor].choose(rng).unwrap(),
        SeverityArm::WithoutMcc => *[Level::Minor, Level::Plain].choose(rng).unwrap(),
        SeverityArm::None => *[Level::Major, Level::Minor, Level::Plain]
            .choose(rng)
            .unwrap(),
    }
}

/// Older spelling of a catalog description: `WITHOUT` as `W/O`, `WITH` as `W`.
pub fn historical_spelling(description: &str) -> String {
    description
        .split(' ')
        .map(|w| match w {
            "WITHOUT" => "W/O",
            "WITH" => "W",
            other => other,
        })
        .collect::<Vec<_>>()
        .join(" ")
}

fn sentences(words: &[String]) -> String {
    let mut out = String::new();
    for chunk in words.chunks(10) {
        let mut sentence = chunk.join(" ");
        if let Some(first) = sentence.get(..1) {
            let upper = first.to_uppercase();
            sentence.replace_range(..1, &upper);
        }
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(&sentence);
        out.push('.');
    }
    out
}

fn course_words(
    catalog: &DrgCatalog,
    code: u32,
    short: bool,
    spec: &NoteGenSpec,
    rng: &mut ChaCha8Rng,
) -> Vec<String> {
    let entry = catalog.entry(code).expect("code drawn from catalog");
    let base_id = entry.base_id;
    let mut words: Vec<String> = Vec::new();
    let signature = signature_tokens(base_id);
    words.extend(signature.choose_multiple(rng, 2).cloned());
    if rng.gen_bool(0.5) {
        let base_text = &catalog.bases()[base_id].base_text;
        words.extend(base_text.split_whitespace().map(str::to_lowercase));
    }
    let level = arm_level(entry.arm, rng);
    words.extend(
        level_words(level)
            .choose_multiple(rng, 2)
            .map(|w| w.to_string()),
    );
    if rng.gen_bool(spec.confuser_rate) {
        let other = rng.gen_range(0..catalog.bases().len());
        words.push(signature_tokens(other)[rng.gen_range(0..3)].clone());
    }
    let n_filler = if short {
        rng.gen_range(5..20)
    } else {
        rng.gen_range(40..60)
    };
    words.extend((0..n_filler).map(|_| FILLER.choose(rng).unwrap().to_string()));
    words.shuffle(rng);
    words
}

fn note_text(course: Option<&str>, rng: &mut ChaCha8Rng) -> String {
    let filler = |rng: &mut ChaCha8Rng, n: usize| {
        let words: Vec<String> = (0..n)
            .map(|_| FILLER.choose(rng).unwrap().to_string())
            .collect();
        sentences(&words)
    };
    let mut text = String::from("Name: ___ Unit No: ___\n\nChief Complaint:\n");
    text.push_str(&filler(rng, 6));
    text.push_str("\n\nHistory of Present Illness:\n");
    text.push_str(&filler(rng, 25));
    text.push('\n');
    if let Some(course) = course {
        text.push_str("\nBrief Hospital Course:\n");
        text.push_str(course);
        text.push('\n');
    }
    text.push_str("\nMedications on Admission:\n");
    text.push_str(&filler(rng, 8));
    text.push_str("\n\nDischarge Disposition:\nHome\n");
    text
}

/// Generate notes labeled with catalog descriptions. Deterministic for a
/// given catalog and spec.
pub fn generate_notes(catalog: &DrgCatalog, spec: &NoteGenSpec) -> Vec<RawNote> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut codes = catalog.sorted_codes();
    codes.shuffle(&mut rng);
    let weights: Vec<f64> = (1..=codes.len())
        .map(|rank| (rank as f64).powf(-spec.zipf_exponent))
        .collect();
    let sampler = WeightedIndex::new(&weights).expect("catalog is non-empty");

    let mut notes: Vec<RawNote> = Vec::with_capacity(spec.n_notes);
    for i in 0..spec.n_notes {
        let stay_id = format!("S{i:06}");
        if !notes.is_empty() && rng.gen_bool(spec.duplicate_fraction) {
            let source = notes[rng.gen_range(0..notes.len())].clone();
            notes.push(RawNote { stay_id, ..source });
            continue;
        }
        let code = codes[sampler.sample(&mut rng)];
        let short = rng.gen_bool(spec.short_fraction);
        let words = course_words(catalog, code, short, spec, &mut rng);
        let course = sentences(&words);
        let missing = rng.gen_bool(spec.missing_section_fraction);
        let full_text = note_text((!missing).then_some(course.as_str()), &mut rng);

        let entry = catalog.entry(code).expect("code drawn from catalog");
        let current = recompose(&catalog.bases()[entry.base_id].base_text, entry.arm);
        let (drg_description, tag) = if rng.gen_bool(spec.ungroupable_fraction) {
            (UNGROUPABLE_DESCRIPTION.to_string(), "v31")
        } else if rng.gen_bool(spec.historical_fraction) {
            (historical_spelling(&current), "v31")
        } else {
            (current, "v34")
        };
        notes.push(RawNote {
            stay_id,
            full_text,
            drg_description,
            drg_version_tag: Some(tag.to_string()),
        });
    }
    notes
}
