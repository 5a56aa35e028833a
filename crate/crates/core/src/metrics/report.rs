use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::bootstrap::{resample_indices, BootstrapSummary, DEFAULT_BOOTSTRAP_ITERATIONS};
use super::{auc_scores, f1_scores, probability_matrix, MetricsError, Prediction};
use crate::stats::{median, quantile};

pub const MACRO_F1_SCOPE: &str = "classes_in_test_or_predicted";
pub const MACRO_AUC_SCOPE: &str = "classes_with_positive_and_negative";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    /// Zero disables bootstrapping.
    pub bootstrap_iterations: usize,
    pub seed: u64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            bootstrap_iterations: DEFAULT_BOOTSTRAP_ITERATIONS,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetDescriptor {
    pub name: String,
    /// `None` for the full test set.
    pub top_n: Option<usize>,
    pub n_cases: usize,
    pub pct_cases: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsMetadata {
    /// Classes the model can predict.
    pub n_classes: usize,
    pub macro_f1_scope: String,
    pub n_macro_f1_classes: usize,
    /// Macro F1 averaged over every model class, absent ones scoring 0.
    pub macro_f1_all_classes: f64,
    pub macro_auc_scope: String,
    pub n_macro_auc_classes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub acc1: f64,
    pub acc5: f64,
    pub acc10: f64,
    pub macro_f1: f64,
    pub micro_f1: f64,
    pub macro_auc: Option<f64>,
    pub micro_auc: Option<f64>,
    pub bootstrap: BTreeMap<String, BootstrapSummary>,
    pub n: usize,
    pub subset: SubsetDescriptor,
    pub metadata: MetricsMetadata,
}

#[derive(Debug, Clone, Copy)]
struct Point {
    acc1: f64,
    acc5: f64,
    acc10: f64,
    macro_f1: f64,
    micro_f1: f64,
    macro_f1_all: f64,
    n_f1_classes: usize,
    macro_auc: Option<f64>,
    micro_auc: Option<f64>,
    n_auc_classes: usize,
}

impl Point {
    fn named(&self) -> [(&'static str, Option<f64>); 7] {
        [
            ("acc1", Some(self.acc1)),
            ("acc5", Some(self.acc5)),
            ("acc10", Some(self.acc10)),
            ("macro_f1", Some(self.macro_f1)),
            ("micro_f1", Some(self.micro_f1)),
            ("macro_auc", self.macro_auc),
            ("micro_auc", self.micro_auc),
        ]
    }
}

fn point(preds: &[&Prediction], rows: &[&Vec<f64>], classes: &[u32]) -> Point {
    let n = preds.len() as f64;
    let acc = |k: usize| preds.iter().filter(|p| p.hit_at(k)).count() as f64 / n;
    let truths: Vec<u32> = preds.iter().map(|p| p.truth).collect();
    let top1: Vec<u32> = preds.iter().map(|p| p.top1().unwrap_or(u32::MAX)).collect();
    let observed: BTreeSet<u32> = truths.iter().chain(&top1).copied().collect();
    let scores = f1_scores(&top1, &truths, &observed).expect("universe covers every label");
    let all: BTreeSet<u32> = observed.iter().chain(classes).copied().collect();
    let scores_all = f1_scores(&top1, &truths, &all).expect("universe covers every label");
    let auc = auc_scores(rows, &truths, classes);
    Point {
        acc1: acc(1),
        acc5: acc(5),
        acc10: acc(10),
        macro_f1: scores.macro_f1,
        micro_f1: scores.micro_f1,
        macro_f1_all: scores_all.macro_f1,
        n_f1_classes: observed.len(),
        macro_auc: auc.macro_auc,
        micro_auc: auc.micro_auc,
        n_auc_classes: auc.n_scored_classes,
    }
}

fn report_for(
    preds: &[&Prediction],
    classes: &[u32],
    subset: SubsetDescriptor,
    opts: &EvalOptions,
) -> Result<MetricsReport, MetricsError> {
    if preds.is_empty() {
        return Err(MetricsError::Empty);
    }
    let matrix = probability_matrix(preds, classes);
    let rows: Vec<&Vec<f64>> = matrix.iter().collect();
    let p = point(preds, &rows, classes);

    let mut bootstrap = BTreeMap::new();
    if opts.bootstrap_iterations > 0 {
        let samples: Vec<Point> = (0..opts.bootstrap_iterations)
            .into_par_iter()
            .map(|i| {
                let idx = resample_indices(preds.len(), opts.seed, i);
                let sp: Vec<&Prediction> = idx.iter().map(|&j| preds[j]).collect();
                let sr: Vec<&Vec<f64>> = idx.iter().map(|&j| rows[j]).collect();
                point(&sp, &sr, classes)
            })
            .collect();
        for (k, (name, _)) in p.named().iter().enumerate() {
            let values: Vec<f64> = samples.iter().filter_map(|s| s.named()[k].1).collect();
            if !values.is_empty() {
                bootstrap.insert(name.to_string(), BootstrapSummary::from_values(&values));
            }
        }
    }

    Ok(MetricsReport {
        acc1: p.acc1,
        acc5: p.acc5,
        acc10: p.acc10,
        macro_f1: p.macro_f1,
        micro_f1: p.micro_f1,
        macro_auc: p.macro_auc,
        micro_auc: p.micro_auc,
        bootstrap,
        n: preds.len(),
        subset,
        metadata: MetricsMetadata {
            n_classes: classes.len(),
            macro_f1_scope: MACRO_F1_SCOPE.into(),
            n_macro_f1_classes: p.n_f1_classes,
            macro_f1_all_classes: p.macro_f1_all,
            macro_auc_scope: MACRO_AUC_SCOPE.into(),
            n_macro_auc_classes: p.n_auc_classes,
        },
    })
}

/// Full-test-set report. `classes` are the classes the model can predict.
pub fn evaluate(
    preds: &[Prediction],
    classes: &[u32],
    opts: &EvalOptions,
) -> Result<MetricsReport, MetricsError> {
    let refs: Vec<&Prediction> = preds.iter().collect();
    let subset = SubsetDescriptor {
        name: "all".into(),
        top_n: None,
        n_cases: preds.len(),
        pct_cases: 100.0,
    };
    report_for(&refs, classes, subset, opts)
}

/// The `top_n` classes with most training cases, ties by ascending code.
/// `top_n` is clamped to the number of training classes.
pub fn top_classes(train_counts: &BTreeMap<u32, usize>, top_n: usize) -> Vec<u32> {
    let mut order: Vec<(u32, usize)> = train_counts.iter().map(|(&c, &n)| (c, n)).collect();
    order.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    order.into_iter().take(top_n).map(|(c, _)| c).collect()
}

/// Report restricted to test instances whose true class is among the
/// `top_n` most frequent training classes.
pub fn subset_eval(
    preds: &[Prediction],
    classes: &[u32],
    train_counts: &BTreeMap<u32, usize>,
    top_n: usize,
    opts: &EvalOptions,
) -> Result<MetricsReport, MetricsError> {
    let keep: BTreeSet<u32> = top_classes(train_counts, top_n).into_iter().collect();
    let refs: Vec<&Prediction> = preds.iter().filter(|p| keep.contains(&p.truth)).collect();
    let subset = SubsetDescriptor {
        name: format!("top{top_n}"),
        top_n: Some(top_n),
        n_cases: refs.len(),
        pct_cases: if preds.is_empty() {
            0.0
        } else {
            100.0 * refs.len() as f64 / preds.len() as f64
        },
    };
    report_for(&refs, classes, subset, opts)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerDrgRow {
    pub code: u32,
    pub n_train: usize,
    pub n_test: usize,
    pub acc1: f64,
    pub acc5: f64,
    /// 1 = most training cases among the rows, ties by ascending code.
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub lower: f64,
    pub upper: f64,
    pub n_classes: usize,
    pub median_train: Option<f64>,
    pub q1_train: Option<f64>,
    pub q3_train: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerDrgReport {
    pub rows: Vec<PerDrgRow>,
    pub groups: Vec<GroupSummary>,
}

const ACC5_BINS: usize = 5;

/// One row per class present in the test predictions plus training-count
/// summaries for classes binned by ACC@5 into fifths; the top bin is closed.
pub fn per_drg_report(preds: &[Prediction], train_counts: &BTreeMap<u32, usize>) -> PerDrgReport {
    // (n_test, hits@1, hits@5)
    let mut tally: BTreeMap<u32, (usize, usize, usize)> = BTreeMap::new();
    for p in preds {
        let t = tally.entry(p.truth).or_default();
        t.0 += 1;
        t.1 += p.hit_at(1) as usize;
        t.2 += p.hit_at(5) as usize;
    }
    let mut rows: Vec<PerDrgRow> = tally
        .iter()
        .map(|(&code, &(n, h1, h5))| PerDrgRow {
            code,
            n_train: train_counts.get(&code).copied().unwrap_or(0),
            n_test: n,
            acc1: h1 as f64 / n as f64,
            acc5: h5 as f64 / n as f64,
            rank: 0,
        })
        .collect();
    rows.sort_by(|a, b| b.n_train.cmp(&a.n_train).then(a.code.cmp(&b.code)));
    for (i, row) in rows.iter_mut().enumerate() {
        row.rank = i + 1;
    }

    let mut binned: Vec<Vec<f64>> = vec![Vec::new(); ACC5_BINS];
    for row in &rows {
        let (n, _, h5) = tally[&row.code];
        // integer arithmetic keeps exact fifths on the right bin edge
        let bin = ((ACC5_BINS * h5) / n).min(ACC5_BINS - 1);
        binned[bin].push(row.n_train as f64);
    }
    let groups = if rows.is_empty() {
        Vec::new()
    } else {
        binned
            .iter()
            .enumerate()
            .map(|(i, counts)| GroupSummary {
                lower: i as f64 / ACC5_BINS as f64,
                upper: (i + 1) as f64 / ACC5_BINS as f64,
                n_classes: counts.len(),
                median_train: median(counts),
                q1_train: quantile(counts, 0.25),
                q3_train: quantile(counts, 0.75),
            })
            .collect()
    };
    PerDrgReport { rows, groups }
}

/// Writes `code,n_train,n_test,acc1,acc5,rank`.
pub fn write_per_drg_csv<W: Write>(rows: &[PerDrgRow], writer: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["code", "n_train", "n_test", "acc1", "acc5", "rank"])?;
    for r in rows {
        w.write_record([
            r.code.to_string(),
            r.n_train.to_string(),
            r.n_test.to_string(),
            r.acc1.to_string(),
            r.acc5.to_string(),
            r.rank.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::super::ClassScore;
    use super::*;

    fn pred(truth: u32, order: &[u32]) -> Prediction {
        let n = order.len() as f64;
        Prediction {
            id: String::new(),
            truth,
            ranking: order
                .iter()
                .enumerate()
                .map(|(i, &c)| ClassScore {
                    class: c,
                    prob: (n - i as f64) / (n * (n + 1.0) / 2.0),
                })
                .collect(),
        }
    }

    fn fixture() -> (Vec<Prediction>, BTreeMap<u32, usize>) {
        let preds = vec![
            pred(1, &[1, 2, 3]),
            pred(1, &[2, 1, 3]),
            pred(2, &[2, 1, 3]),
            pred(3, &[1, 2, 3]),
            pred(3, &[3, 2, 1]),
            pred(3, &[3, 1, 2]),
        ];
        let counts: BTreeMap<u32, usize> = [(1, 10), (2, 40), (3, 10)].into();
        (preds, counts)
    }

    #[test]
    fn micro_f1_equals_acc1_in_report() {
        let (preds, _) = fixture();
        let r = evaluate(&preds, &[1, 2, 3], &EvalOptions::default()).unwrap();
        assert_eq!(r.micro_f1, r.acc1);
        assert_eq!(r.acc1, 4.0 / 6.0);
        assert_eq!(r.n, 6);
        for key in [
            "acc1",
            "acc5",
            "acc10",
            "macro_f1",
            "micro_f1",
            "macro_auc",
            "micro_auc",
        ] {
            let b = r.bootstrap[key];
            assert!((0.0..=1.0).contains(&b.mean), "{key}");
        }
    }

    #[test]
    fn macro_variants_differ_when_classes_absent() {
        let (preds, _) = fixture();
        let r = evaluate(&preds, &[1, 2, 3, 4, 5], &EvalOptions::default()).unwrap();
        assert_eq!(r.metadata.n_macro_f1_classes, 3);
        assert!((r.metadata.macro_f1_all_classes - r.macro_f1 * 3.0 / 5.0).abs() < 1e-12);
    }

    #[test]
    fn subset_all_classes_matches_full_report() {
        let (preds, counts) = fixture();
        let opts = EvalOptions::default();
        let full = evaluate(&preds, &[1, 2, 3], &opts).unwrap();
        let sub = subset_eval(&preds, &[1, 2, 3], &counts, 3, &opts).unwrap();
        assert_eq!(sub.acc1, full.acc1);
        assert_eq!(sub.macro_auc, full.macro_auc);
        assert_eq!(sub.bootstrap, full.bootstrap);
        assert_eq!(sub.subset.pct_cases, 100.0);
    }

    #[test]
    fn subset_hand_counts() {
        let (preds, counts) = fixture();
        let opts = EvalOptions::default();
        // order: 2 (40), then 1 and 3 tie at 10 so 1 precedes 3
        assert_eq!(top_classes(&counts, 2), vec![2, 1]);
        let top1 = subset_eval(&preds, &[1, 2, 3], &counts, 1, &opts).unwrap();
        assert_eq!(top1.subset.n_cases, 1);
        let top2 = subset_eval(&preds, &[1, 2, 3], &counts, 2, &opts).unwrap();
        assert_eq!(top2.subset.n_cases, 3);
        assert!((top2.subset.pct_cases - 50.0).abs() < 1e-12);
        assert_eq!(top_classes(&counts, 99).len(), 3);
    }

    #[test]
    fn per_drg_rows_and_bins() {
        let (preds, counts) = fixture();
        let report = per_drg_report(&preds, &counts);
        let codes: Vec<u32> = report.rows.iter().map(|r| r.code).collect();
        assert_eq!(codes, vec![2, 1, 3]);
        assert_eq!(
            report.rows.iter().map(|r| r.rank).collect::<Vec<_>>(),
            vec![1, 2, 3]
        );
        let row3 = &report.rows[2];
        assert_eq!((row3.n_test, row3.acc1), (3, 2.0 / 3.0));
        assert_eq!(row3.acc5, 1.0);
        assert_eq!(report.groups.len(), 5);
        let top = &report.groups[4];
        assert_eq!(top.n_classes, 3);
        assert_eq!(top.median_train, Some(10.0));
        assert_eq!(report.groups[0].median_train, None);
    }

    #[test]
    fn per_drg_single_class_and_empty() {
        let preds = vec![pred(7, &[7, 8]), pred(7, &[7, 8])];
        let counts: BTreeMap<u32, usize> = [(7, 5)].into();
        let report = per_drg_report(&preds, &counts);
        assert_eq!(report.rows.len(), 1);
        assert_eq!(report.rows[0].acc5, 1.0);
        let empty = per_drg_report(&[], &counts);
        assert!(empty.rows.is_empty() && empty.groups.is_empty());
    }

    #[test]
    fn exact_fifth_lands_in_upper_bin() {
        let mut preds = vec![pred(1, &[1, 2, 3, 4, 5, 6])];
        preds.extend((0..4).map(|_| pred(1, &[2, 3, 4, 5, 6, 1])));
        let report = per_drg_report(&preds, &BTreeMap::new());
        assert_eq!(report.rows[0].acc5, 0.2);
        assert_eq!(report.groups[1].n_classes, 1);
    }

    #[test]
    fn csv_layout() {
        let (preds, counts) = fixture();
        let mut buf = Vec::new();
        write_per_drg_csv(&per_drg_report(&preds, &counts).rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("code,n_train,n_test,acc1,acc5,rank\n2,40,1,1,1,1\n"));
    }
}
