#![allow(dead_code)]

use std::path::Path;
use std::process::{Command, Output};

pub fn drgkit(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_drgkit"))
        .current_dir(dir)
        .arg("--quiet")
        .args(args)
        .output()
        .expect("spawn drgkit")
}

/// Runs `drgkit` and panics with its stderr unless it exits 0.
pub fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = drgkit(dir, args);
    assert!(
        out.status.success(),
        "drgkit {args:?} exited {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

pub fn read_json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

/// Synthesizes notes, harmonizes, excludes the review queue and writes a
/// cohort. Paths are relative to `dir`.
pub fn desk_cohort(dir: &Path, n_notes: usize, seed: u64) {
    let seed = seed.to_string();
    let n = n_notes.to_string();
    ok(
        dir,
        &[
            "--seed",
            &seed,
            "synth",
            "--out",
            "notes.jsonl",
            "--n-notes",
            &n,
            "--write-catalog",
            "desk.csv",
        ],
    );
    ok(
        dir,
        &[
            "harmonize",
            "--input",
            "notes.jsonl",
            "--catalog",
            "desk.csv",
            "--out-queue",
            "queue.csv",
            "--out-mapping",
            "auto.csv",
        ],
    );
    let queue = std::fs::read_to_string(dir.join("queue.csv")).unwrap();
    let mut decisions = String::from("historical_description,decision\n");
    for row in csv_rows(&queue).into_iter().skip(1) {
        decisions.push_str(&format!("\"{}\",EXCLUDE\n", row[0]));
    }
    std::fs::write(dir.join("decisions.csv"), decisions).unwrap();
    ok(
        dir,
        &[
            "apply-reviews",
            "--queue",
            "queue.csv",
            "--decisions",
            "decisions.csv",
            "--mapping",
            "auto.csv",
            "--catalog",
            "desk.csv",
            "--out",
            "mapping.csv",
        ],
    );
    ok(
        dir,
        &[
            "--seed",
            &seed,
            "preprocess",
            "--input",
            "notes.jsonl",
            "--mapping",
            "mapping.csv",
            "--out",
            "cohort.jsonl",
            "--drops",
            "drops.json",
        ],
    );
}

pub fn csv_rows(text: &str) -> Vec<Vec<String>> {
    csv::ReaderBuilder::new()
        .has_headers(false)
        .from_reader(text.as_bytes())
        .records()
        .map(|r| r.unwrap().iter().map(str::to_string).collect())
        .collect()
}
