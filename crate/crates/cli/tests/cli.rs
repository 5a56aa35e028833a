mod common;

use std::fs;
use std::path::Path;

use common::{csv_rows, desk_cohort, drgkit, ok, read_json};

fn write(dir: &Path, name: &str, text: &str) {
    fs::write(dir.join(name), text).unwrap();
}

fn long_course(i: usize) -> String {
    let words: Vec<String> = (0..45).map(|j| format!("w{i}x{j}")).collect();
    words.join(" ")
}

fn note(id: &str, course: Option<&str>, description: &str) -> String {
    let mut text = String::from("Chief Complaint:\nweakness\n\n");
    if let Some(course) = course {
        text.push_str(&format!("Brief Hospital Course:\n{course}\n\n"));
    }
    text.push_str("Medications on Admission:\nnone\n");
    serde_json::json!({"stay_id": id, "text": text, "drg_description": description}).to_string()
}

#[test]
fn build_catalog_bundled_counts() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["build-catalog", "--out", "catalog.json"]);
    let v = read_json(&dir.path().join("catalog.json"));
    let s = &v["summary"];
    assert_eq!(s["codes"], 757);
    assert_eq!(s["bases"], 340);
    let splits = &s["splits"];
    assert_eq!(splits["three_way"], 154);
    assert_eq!(splits["two_way_ccmcc_vs_none"], 44);
    assert_eq!(splits["two_way_mcc_vs_rest"], 65);
    assert_eq!(splits["no_split"], 77);
    assert_eq!(v["entries"].as_array().unwrap().len(), 757);
}

#[test]
fn build_catalog_small_file_and_empty_file() {
    let dir = tempfile::tempdir().unwrap();
    write(
        dir.path(),
        "pair.csv",
        "code,description\n56,DEGENERATIVE NERVOUS SYSTEM DISORDERS WITH MCC\n57,DEGENERATIVE NERVOUS SYSTEM DISORDERS WITHOUT MCC\n",
    );
    ok(
        dir.path(),
        &[
            "build-catalog",
            "--catalog",
            "pair.csv",
            "--out",
            "pair.json",
        ],
    );
    let v = read_json(&dir.path().join("pair.json"));
    assert_eq!(v["summary"]["bases"], 1);
    assert_eq!(v["bases"][0]["split"], "TWO_WAY_MCC_VS_REST");

    write(dir.path(), "empty.csv", "code,description\n");
    let out = drgkit(
        dir.path(),
        &["build-catalog", "--catalog", "empty.csv", "--out", "x.json"],
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(!dir.path().join("x.json").exists());
}

#[test]
fn exit_codes_distinguish_io_from_validation() {
    let dir = tempfile::tempdir().unwrap();
    let missing = drgkit(
        dir.path(),
        &["build-catalog", "--catalog", "nope.csv", "--out", "x.json"],
    );
    assert_eq!(missing.status.code(), Some(2));
    let bogus = drgkit(dir.path(), &["build-catalog", "--frobnicate"]);
    assert_eq!(bogus.status.code(), Some(1));
    write(dir.path(), "bad.toml", "[train]\nlearning_rat = 1\n");
    let config = drgkit(
        dir.path(),
        &["--config", "bad.toml", "build-catalog", "--out", "x.json"],
    );
    assert_eq!(config.status.code(), Some(1));
}

#[test]
fn harmonize_queue_and_reviews() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let notes = [
        note(
            "a",
            Some("x"),
            "URINARY STONES WITH ESW LITHOTRIPSY WITH CC/MCC",
        ),
        note("b", Some("x"), "URINARY STONES W/O ESW LITHOTRIPSY W MCC"),
    ]
    .join("\n");
    write(p, "canonical.jsonl", &notes);
    ok(
        p,
        &[
            "harmonize",
            "--input",
            "canonical.jsonl",
            "--out-queue",
            "q.csv",
            "--out-mapping",
            "m.csv",
        ],
    );
    assert_eq!(
        csv_rows(&fs::read_to_string(p.join("q.csv")).unwrap()).len(),
        1
    );
    let mapping = csv_rows(&fs::read_to_string(p.join("m.csv")).unwrap());
    assert_eq!(mapping.len(), 3);
    assert!(mapping
        .iter()
        .any(|r| r[0] == "URINARY STONES W/O ESW LITHOTRIPSY W MCC" && r[1] == "693"));

    write(
        p,
        "ambiguous.jsonl",
        &note("c", Some("x"), "URINARY STONES W MCC"),
    );
    ok(
        p,
        &[
            "harmonize",
            "--input",
            "ambiguous.jsonl",
            "--out-queue",
            "q2.csv",
            "--out-mapping",
            "m2.csv",
        ],
    );
    let queue = csv_rows(&fs::read_to_string(p.join("q2.csv")).unwrap());
    assert_eq!(queue.len(), 2);
    assert_eq!(queue[1][0], "URINARY STONES W MCC");

    write(
        p,
        "decisions.csv",
        "historical_description,decision\nURINARY STONES W MCC,693\n",
    );
    ok(
        p,
        &[
            "apply-reviews",
            "--queue",
            "q2.csv",
            "--decisions",
            "decisions.csv",
            "--mapping",
            "m2.csv",
            "--out",
            "final.csv",
        ],
    );
    let last = csv_rows(&fs::read_to_string(p.join("final.csv")).unwrap());
    assert_eq!(last[1], ["URINARY STONES W MCC", "693"]);

    write(
        p,
        "wrong.csv",
        "historical_description,decision\nURINARY STONES W MCC,99999\n",
    );
    let bad = drgkit(
        p,
        &[
            "apply-reviews",
            "--queue",
            "q2.csv",
            "--decisions",
            "wrong.csv",
            "--out",
            "f.csv",
        ],
    );
    assert_eq!(bad.status.code(), Some(1));
}

fn preprocess_fixture(p: &Path) {
    let description = "TRANSIENT ISCHEMIA";
    let mut lines = Vec::new();
    for i in 0..9 {
        lines.push(note(&format!("s{i}"), Some(&long_course(i)), description));
    }
    lines.push(note("short1", Some("too short"), description));
    lines.push(note("short2", Some("also too short to keep"), description));
    lines.push(note("dup", Some(&long_course(3)), description));
    write(p, "notes.jsonl", &lines.join("\n"));
    write(
        p,
        "mapping.csv",
        "historical_description,decision\nTRANSIENT ISCHEMIA,69\n",
    );
}

#[test]
fn preprocess_filters_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    preprocess_fixture(p);
    let args = |out: &'static str, drops: &'static str| {
        [
            "--seed",
            "3",
            "preprocess",
            "--input",
            "notes.jsonl",
            "--mapping",
            "mapping.csv",
            "--out",
            out,
            "--drops",
            drops,
        ]
    };
    ok(p, &args("c1.jsonl", "d1.json"));
    ok(p, &args("c2.jsonl", "d2.json"));
    let c1 = fs::read(p.join("c1.jsonl")).unwrap();
    assert_eq!(c1, fs::read(p.join("c2.jsonl")).unwrap());
    let rows: Vec<serde_json::Value> = String::from_utf8(c1)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(rows.len(), 9);
    assert_eq!(rows.iter().filter(|r| r["split"] == "test").count(), 1);
    let drops = read_json(&p.join("d1.json"));
    assert_eq!(drops["too_short"], 2);
    assert_eq!(drops["duplicate"], 1);
}

#[test]
fn preprocess_without_sections_warns() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let lines: Vec<String> = (0..4)
        .map(|i| note(&format!("s{i}"), None, "TRANSIENT ISCHEMIA"))
        .collect();
    write(p, "notes.jsonl", &lines.join("\n"));
    write(
        p,
        "mapping.csv",
        "historical_description,decision\nTRANSIENT ISCHEMIA,69\n",
    );
    let out = ok(
        p,
        &[
            "preprocess",
            "--input",
            "notes.jsonl",
            "--mapping",
            "mapping.csv",
            "--out",
            "c.jsonl",
        ],
    );
    assert!(String::from_utf8_lossy(&out.stderr).contains("warning"));
    assert_eq!(fs::read_to_string(p.join("c.jsonl")).unwrap().trim(), "");
}

#[test]
fn train_predict_evaluate_report() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    desk_cohort(p, 1500, 5);
    ok(
        p,
        &[
            "--seed",
            "5",
            "train",
            "--cohort",
            "cohort.jsonl",
            "--catalog",
            "desk.csv",
            "--mode",
            "two-label",
            "--out",
            "model.json",
        ],
    );
    let mismatch = drgkit(
        p,
        &[
            "predict",
            "--artifact",
            "model.json",
            "--cohort",
            "cohort.jsonl",
            "--catalog",
            "desk.csv",
            "--mode",
            "single",
            "--out",
            "x.jsonl",
        ],
    );
    assert_eq!(mismatch.status.code(), Some(1));
    ok(
        p,
        &[
            "predict",
            "--artifact",
            "model.json",
            "--cohort",
            "cohort.jsonl",
            "--catalog",
            "desk.csv",
            "--out",
            "preds.jsonl",
        ],
    );
    let first: serde_json::Value = serde_json::from_str(
        fs::read_to_string(p.join("preds.jsonl"))
            .unwrap()
            .lines()
            .next()
            .unwrap(),
    )
    .unwrap();
    for key in [
        "stay_id",
        "topk",
        "base_topk",
        "cc",
        "cc_topk",
        "composed_code",
    ] {
        assert!(first.get(key).is_some(), "{key}");
    }
    assert_eq!(first["topk"][0]["code"], first["composed_code"]);

    ok(
        p,
        &[
            "--seed",
            "5",
            "evaluate",
            "--predictions",
            "preds.jsonl",
            "--cohort",
            "cohort.jsonl",
            "--catalog",
            "desk.csv",
            "--subsets",
            "300,50,30",
            "--out",
            "report.json",
            "--per-drg",
            "per_drg.csv",
        ],
    );
    let report = read_json(&p.join("report.json"));
    for key in [
        "acc1",
        "acc5",
        "acc10",
        "macro_f1",
        "micro_f1",
        "macro_auc",
        "micro_auc",
        "bootstrap",
        "n",
        "metadata",
    ] {
        assert!(report.get(key).is_some(), "{key}");
    }
    assert_eq!(report["subsets"].as_array().unwrap().len(), 3);
    assert!(report["two_label"]["composed_acc1"].is_number());
    assert!(report["bootstrap"]["acc1"]["sd"].is_number());
    let header = fs::read_to_string(p.join("per_drg.csv")).unwrap();
    assert!(header.starts_with("code,n_train,n_test,acc1,acc5,rank"));

    ok(
        p,
        &["report", "--report", "report.json", "--out", "report.md"],
    );
    let md = fs::read_to_string(p.join("report.md")).unwrap();
    assert!(md.contains("| "));
}

#[test]
fn flags_override_config() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    preprocess_fixture(p);
    write(
        p,
        "pipeline.toml",
        "seed = 3\n[paths]\nnotes = \"notes.jsonl\"\nmapping = \"mapping.csv\"\ncohort = \"from_config.jsonl\"\n[preprocess]\ntest_fraction = 0.5\n",
    );
    ok(p, &["--config", "pipeline.toml", "preprocess"]);
    let count_test = |name: &str| {
        fs::read_to_string(p.join(name))
            .unwrap()
            .lines()
            .filter(|l| l.contains("\"split\":\"test\""))
            .count()
    };
    assert_eq!(count_test("from_config.jsonl"), 4);
    ok(
        p,
        &[
            "--config",
            "pipeline.toml",
            "preprocess",
            "--test-fraction",
            "0.1",
            "--out",
            "from_flag.jsonl",
        ],
    );
    assert_eq!(count_test("from_flag.jsonl"), 1);
}
