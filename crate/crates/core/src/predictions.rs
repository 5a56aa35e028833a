//! Prediction records as written to the predictions file, and the
//! evaluation report assembled from them.

use std::collections::{BTreeMap, HashSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{CcMccLabel, DrgCatalog};
use crate::metrics::{
    evaluate, per_drg_report, subset_eval, ClassScore, EvalOptions, MetricsError, MetricsReport,
    PerDrgReport, Prediction,
};
use crate::model::{ModeKind, ModelArtifact, ModelError, RankedBase, RankedCode, RankedLabel};

#[derive(Debug, Error)]
pub enum EvaluationError {
    #[error("prediction for stay {0} has no test-split truth")]
    UnknownStay(String),
    #[error("test stay {0} has no prediction")]
    MissingPrediction(String),
    #[error("duplicate prediction for stay {0}")]
    DuplicatePrediction(String),
    #[error("prediction for stay {0} lacks the two-label fields")]
    NotTwoLabel(String),
    #[error("DRG code {0} is not in the catalog")]
    UnknownCode(u32),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// One line of the predictions file. Two-label fields are present only for
/// two-label artifacts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub stay_id: String,
    /// Every DRG code, most likely first.
    pub topk: Vec<RankedCode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_topk: Option<Vec<RankedBase>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cc: Option<CcMccLabel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cc_topk: Option<Vec<RankedLabel>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub composed_code: Option<u32>,
}

/// Run the artifact over `(stay_id, text)` pairs; output order follows input.
///
/// For two-label artifacts `topk` is the joint code ranking with the
/// composed code moved to the front, so rank 1 is always the composed code.
pub fn predict_records(
    artifact: &ModelArtifact,
    stays: &[(String, String)],
    catalog: &DrgCatalog,
) -> Result<Vec<PredictionRecord>, ModelError> {
    artifact.check_catalog(catalog)?;
    stays
        .par_iter()
        .map(|(stay_id, text)| match artifact.kind() {
            ModeKind::Single => Ok(PredictionRecord {
                stay_id: stay_id.clone(),
                topk: artifact.predict_single(text)?,
                base_topk: None,
                cc: None,
                cc_topk: None,
                composed_code: None,
            }),
            ModeKind::TwoLabel => {
                let p = artifact.predict_two_label(text, catalog)?;
                let mut topk = Vec::with_capacity(p.joint_ranking.len());
                let composed = p.joint_ranking.iter().find(|r| r.code == p.composed_code);
                topk.extend(composed.copied());
                topk.extend(p.joint_ranking.iter().filter(|r| r.code != p.composed_code));
                Ok(PredictionRecord {
                    stay_id: stay_id.clone(),
                    topk,
                    base_topk: Some(p.base_ranking),
                    cc: Some(p.cc),
                    cc_topk: Some(p.cc_ranking),
                    composed_code: Some(p.composed_code),
                })
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoLabelBlock {
    /// Composed-code top-1 accuracy.
    pub composed_acc1: f64,
    pub base: MetricsReport,
    /// Computed on the unrestricted CC/MCC distribution.
    pub cc: MetricsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    #[serde(flatten)]
    pub overall: MetricsReport,
    pub subsets: Vec<MetricsReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub two_label: Option<TwoLabelBlock>,
    pub per_drg_groups: Vec<crate::metrics::GroupSummary>,
}

fn code_prediction(r: &PredictionRecord, truth: u32) -> Prediction {
    Prediction {
        id: r.stay_id.clone(),
        truth,
        ranking: r
            .topk
            .iter()
            .map(|c| ClassScore {
                class: c.code,
                prob: c.prob,
            })
            .collect(),
    }
}

/// Join predictions to test truths. Every test stay needs exactly one
/// prediction and every prediction a test stay.
pub fn join_truths<'r>(
    records: &'r [PredictionRecord],
    truths: &BTreeMap<String, u32>,
) -> Result<Vec<(&'r PredictionRecord, u32)>, EvaluationError> {
    let mut seen = HashSet::new();
    let mut joined = Vec::with_capacity(records.len());
    for r in records {
        let &truth = truths
            .get(&r.stay_id)
            .ok_or_else(|| EvaluationError::UnknownStay(r.stay_id.clone()))?;
        if !seen.insert(r.stay_id.as_str()) {
            return Err(EvaluationError::DuplicatePrediction(r.stay_id.clone()));
        }
        joined.push((r, truth));
    }
    if let Some(missing) = truths.keys().find(|k| !seen.contains(k.as_str())) {
        return Err(EvaluationError::MissingPrediction(missing.clone()));
    }
    Ok(joined)
}

/// Overall report, frequency subsets, the two-label block when the records
/// carry it, and per-DRG analytics.
pub fn evaluate_records(
    records: &[PredictionRecord],
    truths: &BTreeMap<String, u32>,
    catalog: &DrgCatalog,
    train_counts: &BTreeMap<u32, usize>,
    subsets: &[usize],
    opts: &EvalOptions,
) -> Result<(EvaluationReport, PerDrgReport), EvaluationError> {
    let joined = join_truths(records, truths)?;
    let preds: Vec<Prediction> = joined.iter().map(|(r, t)| code_prediction(r, *t)).collect();
    let classes = catalog.sorted_codes();
    let overall = evaluate(&preds, &classes, opts)?;
    let subsets = subsets
        .iter()
        .map(|&n| subset_eval(&preds, &classes, train_counts, n, opts))
        .collect::<Result<Vec<_>, _>>()?;
    let per_drg = per_drg_report(&preds, train_counts);

    let two_label = if joined.iter().any(|(r, _)| r.composed_code.is_some()) {
        Some(two_label_block(&joined, catalog, opts)?)
    } else {
        None
    };
    Ok((
        EvaluationReport {
            overall,
            subsets,
            two_label,
            per_drg_groups: per_drg.groups.clone(),
        },
        per_drg,
    ))
}

fn two_label_block(
    joined: &[(&PredictionRecord, u32)],
    catalog: &DrgCatalog,
    opts: &EvalOptions,
) -> Result<TwoLabelBlock, EvaluationError> {
    let mut base_preds = Vec::with_capacity(joined.len());
    let mut cc_preds = Vec::with_capacity(joined.len());
    let mut composed_hits = 0usize;
    for (r, truth) in joined {
        let missing = || EvaluationError::NotTwoLabel(r.stay_id.clone());
        let (base_id, label) = catalog
            .two_label_target(*truth)
            .ok_or(EvaluationError::UnknownCode(*truth))?;
        let base_topk = r.base_topk.as_ref().ok_or_else(missing)?;
        let cc_topk = r.cc_topk.as_ref().ok_or_else(missing)?;
        composed_hits += (r.composed_code.ok_or_else(missing)? == *truth) as usize;
        base_preds.push(Prediction {
            id: r.stay_id.clone(),
            truth: base_id as u32,
            ranking: base_topk
                .iter()
                .map(|b| ClassScore {
                    class: b.base_id as u32,
                    prob: b.prob,
                })
                .collect(),
        });
        cc_preds.push(Prediction {
            id: r.stay_id.clone(),
            truth: label.index() as u32,
            ranking: cc_topk
                .iter()
                .map(|c| ClassScore {
                    class: c.label.index() as u32,
                    prob: c.prob,
                })
                .collect(),
        });
    }
    let base_classes: Vec<u32> = (0..catalog.bases().len() as u32).collect();
    let cc_classes: Vec<u32> = (0..CcMccLabel::COUNT as u32).collect();
    Ok(TwoLabelBlock {
        composed_acc1: composed_hits as f64 / joined.len() as f64,
        base: evaluate(&base_preds, &base_classes, opts)?,
        cc: evaluate(&cc_preds, &cc_classes, opts)?,
    })
}
