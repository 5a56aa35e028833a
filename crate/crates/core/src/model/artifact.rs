//! Trained model container and the two inference modes.

use std::fmt;

use serde::{Deserialize, Serialize};

use super::features::Vocabulary;
use super::head::{forward, LinearHead, LoraAdapter};
use super::loss::softmax;
use super::{ModelError, TrainConfig};
use crate::catalog::{label_valid_set, CcMccLabel, DrgCatalog};

pub const ARTIFACT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeKind {
    Single,
    TwoLabel,
}

impl fmt::Display for ModeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModeKind::Single => "single",
            ModeKind::TwoLabel => "two_label",
        })
    }
}

/// Output layout of the head.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HeadMode {
    /// One logit per DRG code, codes in ascending order.
    Single { classes: Vec<u32> },
    /// `n_bases` base-DRG logits followed by five CC/MCC logits.
    TwoLabel { n_bases: usize },
}

impl HeadMode {
    pub fn for_catalog(kind: ModeKind, catalog: &DrgCatalog) -> Self {
        match kind {
            ModeKind::Single => HeadMode::Single {
                classes: catalog.sorted_codes(),
            },
            ModeKind::TwoLabel => HeadMode::TwoLabel {
                n_bases: catalog.bases().len(),
            },
        }
    }

    pub fn kind(&self) -> ModeKind {
        match self {
            HeadMode::Single { .. } => ModeKind::Single,
            HeadMode::TwoLabel { .. } => ModeKind::TwoLabel,
        }
    }

    pub fn n_outputs(&self) -> usize {
        match self {
            HeadMode::Single { classes } => classes.len(),
            HeadMode::TwoLabel { n_bases } => n_bases + CcMccLabel::COUNT,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelArtifact {
    pub format_version: u32,
    pub mode: HeadMode,
    pub vocabulary: Vocabulary,
    pub head: LinearHead,
    #[serde(default)]
    pub adapter: Option<LoraAdapter>,
    pub catalog_fingerprint: String,
    pub config: TrainConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankedCode {
    pub code: u32,
    pub prob: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankedBase {
    pub base_id: usize,
    pub prob: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankedLabel {
    pub label: CcMccLabel,
    pub prob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoLabelPrediction {
    pub base_ranking: Vec<RankedBase>,
    /// Unrestricted CC/MCC distribution.
    pub cc_ranking: Vec<RankedLabel>,
    /// Argmax over the labels valid for the top base.
    pub cc: CcMccLabel,
    pub composed_code: u32,
    /// Distribution over DRG codes: `P(base) * P(label | base)` with the
    /// label softmax restricted to the base's valid set.
    pub joint_ranking: Vec<RankedCode>,
}

/// Indices ordered by descending logit, ties by ascending index.
pub fn rank_indices(logits: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..logits.len()).collect();
    order.sort_by(|&a, &b| logits[b].total_cmp(&logits[a]).then(a.cmp(&b)));
    order
}

/// Two-label inference from raw logits: base argmax, CC/MCC argmax
/// restricted to the base's valid labels, then composition.
pub fn decode_two_label(
    logits: &[f64],
    catalog: &DrgCatalog,
) -> Result<TwoLabelPrediction, ModelError> {
    let n_bases = catalog.bases().len();
    if logits.len() != n_bases + CcMccLabel::COUNT {
        return Err(ModelError::DimensionMismatch {
            expected: n_bases + CcMccLabel::COUNT,
            found: logits.len(),
        });
    }
    let (base_logits, cc_logits) = logits.split_at(n_bases);
    let base_probs = softmax(base_logits);
    let base_ranking: Vec<RankedBase> = rank_indices(base_logits)
        .into_iter()
        .map(|i| RankedBase {
            base_id: i,
            prob: base_probs[i],
        })
        .collect();
    let cc_probs = softmax(cc_logits);
    let cc_ranking: Vec<RankedLabel> = rank_indices(cc_logits)
        .into_iter()
        .map(|i| RankedLabel {
            label: CcMccLabel::ALL[i],
            prob: cc_probs[i],
        })
        .collect();

    let top_base = base_ranking[0].base_id;
    let valid = label_valid_set(&catalog.bases()[top_base]);
    let cc = cc_ranking
        .iter()
        .map(|r| r.label)
        .find(|l| valid.contains(l))
        .expect("every base has at least one valid label");
    let composed_code = catalog.compose(top_base, cc)?;

    let mut joint_ranking = Vec::with_capacity(catalog.len());
    for (base, &p_base) in catalog.bases().iter().zip(&base_probs) {
        let labels: Vec<CcMccLabel> = label_valid_set(base).into_iter().collect();
        let restricted: Vec<f64> = labels.iter().map(|l| cc_logits[l.index()]).collect();
        for (label, p) in labels.iter().zip(softmax(&restricted)) {
            joint_ranking.push(RankedCode {
                code: catalog.compose(base.base_id, *label)?,
                prob: p_base * p,
            });
        }
    }
    joint_ranking.sort_by(|a, b| b.prob.total_cmp(&a.prob).then(a.code.cmp(&b.code)));

    Ok(TwoLabelPrediction {
        base_ranking,
        cc_ranking,
        cc,
        composed_code,
        joint_ranking,
    })
}

impl ModelArtifact {
    pub fn kind(&self) -> ModeKind {
        self.mode.kind()
    }

    pub fn logits(&self, text: &str) -> Result<Vec<f64>, ModelError> {
        let x = self.vocabulary.featurize(text);
        forward(&x, &self.head, self.adapter.as_ref())
    }

    /// Every class ranked by probability, ties by ascending code.
    pub fn predict_single(&self, text: &str) -> Result<Vec<RankedCode>, ModelError> {
        let HeadMode::Single { classes } = &self.mode else {
            return Err(ModelError::ModeMismatch {
                expected: ModeKind::Single,
                found: self.kind(),
            });
        };
        let logits = self.logits(text)?;
        let probs = softmax(&logits);
        Ok(rank_indices(&logits)
            .into_iter()
            .map(|i| RankedCode {
                code: classes[i],
                prob: probs[i],
            })
            .collect())
    }

    pub fn predict_two_label(
        &self,
        text: &str,
        catalog: &DrgCatalog,
    ) -> Result<TwoLabelPrediction, ModelError> {
        if self.kind() != ModeKind::TwoLabel {
            return Err(ModelError::ModeMismatch {
                expected: ModeKind::TwoLabel,
                found: self.kind(),
            });
        }
        self.check_catalog(catalog)?;
        decode_two_label(&self.logits(text)?, catalog)
    }

    pub fn check_catalog(&self, catalog: &DrgCatalog) -> Result<(), ModelError> {
        let found = catalog.fingerprint();
        if found != self.catalog_fingerprint {
            return Err(ModelError::CatalogMismatch {
                expected: self.catalog_fingerprint.clone(),
                found,
            });
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String, ModelError> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        let artifact: ModelArtifact = serde_json::from_str(text)?;
        if artifact.format_version != ARTIFACT_FORMAT_VERSION {
            return Err(ModelError::FormatVersion(artifact.format_version));
        }
        let expected = artifact.mode.n_outputs();
        let head = &artifact.head;
        if head.n_outputs != expected
            || head.n_features != artifact.vocabulary.len()
            || head.weights.len() != head.n_outputs * head.n_features
            || head.bias.len() != head.n_outputs
        {
            return Err(ModelError::DimensionMismatch {
                expected: expected * artifact.vocabulary.len(),
                found: head.weights.len(),
            });
        }
        if let Some(a) = &artifact.adapter {
            if a.a.len() != a.rank * head.n_features || a.b.len() != head.n_outputs * a.rank {
                return Err(ModelError::DimensionMismatch {
                    expected: a.rank * (head.n_features + head.n_outputs),
                    found: a.a.len() + a.b.len(),
                });
            }
        }
        Ok(artifact)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const CATALOG: &str = "11,TRACHEOSTOMY WITH MCC\n12,TRACHEOSTOMY WITH CC\n13,TRACHEOSTOMY WITHOUT CC/MCC\n56,DEGENERATIVE DISORDERS WITH MCC\n57,DEGENERATIVE DISORDERS WITHOUT MCC\n69,TRANSIENT ISCHEMIA\n";

    fn catalog() -> DrgCatalog {
        DrgCatalog::parse(CATALOG, "t").unwrap()
    }

    #[test]
    fn ties_rank_by_index() {
        assert_eq!(rank_indices(&[0.0, 0.0, 0.0]), vec![0, 1, 2]);
        assert_eq!(rank_indices(&[0.0, 2.0, 2.0, 1.0]), vec![1, 2, 3, 0]);
    }

    #[test]
    fn not_applicable_forced_for_unsplit_base() {
        let catalog = catalog();
        let ischemia = catalog.base_by_text("TRANSIENT ISCHEMIA").unwrap().base_id;
        let mut logits = vec![0.0; catalog.bases().len() + 5];
        logits[ischemia] = 5.0;
        let n = catalog.bases().len();
        logits[n + CcMccLabel::WithMcc.index()] = 9.0;
        let p = decode_two_label(&logits, &catalog).unwrap();
        assert_eq!(p.cc, CcMccLabel::NotApplicable);
        assert_eq!(p.composed_code, 69);
        assert_eq!(p.cc_ranking[0].label, CcMccLabel::WithMcc);
    }

    #[test]
    fn restricted_argmax_stays_in_valid_set() {
        let catalog = catalog();
        let degen = catalog
            .base_by_text("DEGENERATIVE DISORDERS")
            .unwrap()
            .base_id;
        let n = catalog.bases().len();
        let mut logits = vec![0.0; n + 5];
        logits[degen] = 3.0;
        logits[n + CcMccLabel::WithCc.index()] = 4.0;
        logits[n + CcMccLabel::WithoutMcc.index()] = 2.0;
        logits[n + CcMccLabel::WithMcc.index()] = 1.0;
        let p = decode_two_label(&logits, &catalog).unwrap();
        assert_eq!(p.cc, CcMccLabel::WithoutMcc);
        assert_eq!(p.composed_code, 57);
    }

    #[test]
    fn uniform_logits_pick_base_zero() {
        let catalog = catalog();
        let logits = vec![0.0; catalog.bases().len() + 5];
        let p = decode_two_label(&logits, &catalog).unwrap();
        assert_eq!(p.base_ranking[0].base_id, 0);
        assert!(catalog.bases()[0]
            .members
            .values()
            .any(|&c| c == p.composed_code));
        let total: f64 = p.joint_ranking.iter().map(|r| r.prob).sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert_eq!(p.joint_ranking.len(), catalog.len());
    }

    #[test]
    fn wrong_logit_count() {
        assert!(decode_two_label(&[0.0; 3], &catalog()).is_err());
    }
}
