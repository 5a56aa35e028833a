//! Evaluation protocol: ACC@k, macro/micro F1, one-vs-rest macro/micro
//! AUC, bootstrap standard deviations, frequency subsets and per-class
//! analytics.

mod bootstrap;
mod report;

pub use bootstrap::{bootstrap, resample_indices, BootstrapSummary, DEFAULT_BOOTSTRAP_ITERATIONS};
pub use report::{
    evaluate, per_drg_report, subset_eval, top_classes, write_per_drg_csv, EvalOptions,
    GroupSummary, MetricsMetadata, MetricsReport, PerDrgReport, PerDrgRow, SubsetDescriptor,
    MACRO_AUC_SCOPE, MACRO_F1_SCOPE,
};

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("no predictions to evaluate")]
    Empty,
    #[error("k must be at least 1")]
    InvalidK,
    #[error("label {0} is outside the class universe")]
    OutsideUniverse(u32),
    #[error("top-1 and truth lists differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
}

/// One scored class in a ranking.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassScore {
    pub class: u32,
    pub prob: f64,
}

/// One test instance: its true class and the model's full ranking.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    pub truth: u32,
    pub ranking: Vec<ClassScore>,
}

impl Prediction {
    pub fn top1(&self) -> Option<u32> {
        self.ranking.first().map(|c| c.class)
    }

    pub fn hit_at(&self, k: usize) -> bool {
        self.ranking.iter().take(k).any(|c| c.class == self.truth)
    }

    pub fn prob_of(&self, class: u32) -> f64 {
        self.ranking
            .iter()
            .find(|c| c.class == class)
            .map_or(0.0, |c| c.prob)
    }
}

/// Fraction of instances whose truth is in the first `k` ranked classes.
pub fn top_k_accuracy(preds: &[Prediction], k: usize) -> Result<f64, MetricsError> {
    if k == 0 {
        return Err(MetricsError::InvalidK);
    }
    if preds.is_empty() {
        return Err(MetricsError::Empty);
    }
    let hits = preds.iter().filter(|p| p.hit_at(k)).count();
    Ok(hits as f64 / preds.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct F1Scores {
    pub macro_f1: f64,
    pub micro_f1: f64,
}

/// Per-class F1 (0/0 taken as 0), averaged without weights over
/// `universe`; micro F1 from pooled counts.
pub fn f1_scores(
    top1: &[u32],
    truths: &[u32],
    universe: &BTreeSet<u32>,
) -> Result<F1Scores, MetricsError> {
    if top1.len() != truths.len() {
        return Err(MetricsError::LengthMismatch(top1.len(), truths.len()));
    }
    // (tp, fp, fn)
    let mut counts: BTreeMap<u32, (u64, u64, u64)> =
        universe.iter().map(|&c| (c, (0, 0, 0))).collect();
    for (&p, &t) in top1.iter().zip(truths) {
        for label in [p, t] {
            if !universe.contains(&label) {
                return Err(MetricsError::OutsideUniverse(label));
            }
        }
        if p == t {
            counts.get_mut(&t).unwrap().0 += 1;
        } else {
            counts.get_mut(&p).unwrap().1 += 1;
            counts.get_mut(&t).unwrap().2 += 1;
        }
    }
    let f1 = |tp: u64, fp: u64, fn_: u64| {
        let denom = 2 * tp + fp + fn_;
        if denom == 0 {
            0.0
        } else {
            (2 * tp) as f64 / denom as f64
        }
    };
    let macro_f1 = if counts.is_empty() {
        0.0
    } else {
        counts
            .values()
            .map(|&(tp, fp, fn_)| f1(tp, fp, fn_))
            .sum::<f64>()
            / counts.len() as f64
    };
    let (tp, fp, fn_) = counts.values().fold((0, 0, 0), |acc, &(a, b, c)| {
        (acc.0 + a, acc.1 + b, acc.2 + c)
    });
    Ok(F1Scores {
        macro_f1,
        micro_f1: f1(tp, fp, fn_),
    })
}

/// Mann-Whitney AUC with midranks for ties. `None` unless there is at
/// least one positive and one negative.
pub fn binary_auc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks are 1-based; the tie block i..=j shares the mean rank
        let midrank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            if positive[idx] {
                rank_sum_pos += midrank;
            }
        }
        i = j + 1;
    }
    let n_pos = n_pos as f64;
    let n_neg = n_neg as f64;
    Some((rank_sum_pos - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AucScores {
    pub macro_auc: Option<f64>,
    pub micro_auc: Option<f64>,
    /// Classes with at least one positive and one negative.
    pub n_scored_classes: usize,
}

/// One-vs-rest AUC. `probs[i][j]` is instance `i`'s score for
/// `classes[j]`. Macro averages over classes where AUC is defined; micro
/// pools every (instance, class) pair.
pub fn auc_scores<R: AsRef<[f64]>>(probs: &[R], truths: &[u32], classes: &[u32]) -> AucScores {
    let mut per_class = Vec::new();
    let mut pooled_scores = Vec::with_capacity(probs.len() * classes.len());
    let mut pooled_labels = Vec::with_capacity(probs.len() * classes.len());
    for (j, &class) in classes.iter().enumerate() {
        let scores: Vec<f64> = probs.iter().map(|row| row.as_ref()[j]).collect();
        let labels: Vec<bool> = truths.iter().map(|&t| t == class).collect();
        if let Some(auc) = binary_auc(&scores, &labels) {
            per_class.push(auc);
        }
        pooled_scores.extend(scores);
        pooled_labels.extend(labels);
    }
    AucScores {
        macro_auc: if per_class.is_empty() {
            None
        } else {
            Some(per_class.iter().sum::<f64>() / per_class.len() as f64)
        },
        micro_auc: binary_auc(&pooled_scores, &pooled_labels),
        n_scored_classes: per_class.len(),
    }
}

/// Dense probability matrix over `classes` from ranked predictions.
pub fn probability_matrix(preds: &[&Prediction], classes: &[u32]) -> Vec<Vec<f64>> {
    let column: BTreeMap<u32, usize> = classes.iter().enumerate().map(|(j, &c)| (c, j)).collect();
    preds
        .iter()
        .map(|p| {
            let mut row = vec![0.0; classes.len()];
            for s in &p.ranking {
                if let Some(&j) = column.get(&s.class) {
                    row[j] = s.prob;
                }
            }
            row
        })
        .collect()
}
