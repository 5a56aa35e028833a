//! Desk-scale DRG classifier: tf-idf features into a linear head, trained
//! with either the single-label cross-entropy over every DRG code or the
//! two-label composite loss over base DRGs plus CC/MCC status. An optional
//! low-rank adapter trains on top of a frozen head.

mod artifact;
pub mod features;
pub mod head;
pub mod loss;
pub mod optim;
mod train;

pub use artifact::{
    decode_two_label, rank_indices, HeadMode, ModeKind, ModelArtifact, RankedBase, RankedCode,
    RankedLabel, TwoLabelPrediction, ARTIFACT_FORMAT_VERSION,
};
pub use features::{tokenize, FeatureVector, Vocabulary};
pub use head::{forward, LinearHead, LoraAdapter};
pub use loss::{log_sum_exp, single_label_loss, softmax, two_label_loss};
pub use optim::{optimizer_step, AdamConfig, AdamState};
pub use train::{fit, initialize, train, EpochLog, TrainLog};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::CatalogError;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("training corpus is empty")]
    EmptyCorpus,
    #[error("training split is empty")]
    EmptyTrainingSet,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("artifact is in {found} mode, operation needs {expected} mode")]
    ModeMismatch { expected: ModeKind, found: ModeKind },
    #[error("non-finite gradient {value} at parameter {index}")]
    NonFiniteGradient { index: usize, value: f64 },
    #[error("DRG code {0} is not in the catalog")]
    UnknownCode(u32),
    #[error("artifact was trained against catalog {expected}, got {found}")]
    CatalogMismatch { expected: String, found: String },
    #[error("unsupported artifact format version {0}")]
    FormatVersion(u32),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdapterConfig {
    pub rank: usize,
    pub alpha: f64,
    /// Dropout on the adapter input during training only.
    pub dropout: f64,
}

impl Default for AdapterConfig {
    fn default() -> Self {
        AdapterConfig {
            rank: 8,
            alpha: 8.0,
            dropout: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lambda_cc: f64,
    pub seed: u64,
    pub min_df: usize,
    #[serde(default)]
    pub adapter: Option<AdapterConfig>,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-2,
            weight_decay: 0.01,
            epochs: 3,
            batch_size: 4,
            lambda_cc: loss::DEFAULT_LAMBDA_CC,
            seed: 0,
            min_df: features::DEFAULT_MIN_DF,
            adapter: None,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl TrainConfig {
    /// The LLM fine-tuning hyperparameters: learning rate 2e-5 and a rank-8,
    /// alpha-8 adapter with 0.05 dropout. Far too small a step for the
    /// linear model; kept for reference runs.
    pub fn reference_preset() -> Self {
        TrainConfig {
            learning_rate: 2e-5,
            adapter: Some(AdapterConfig::default()),
            ..Default::default()
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            weight_decay: self.weight_decay,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::InvalidConfig(m));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            ));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!(
                "weight_decay must be non-negative, got {}",
                self.weight_decay
            ));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.lambda_cc) {
            return bad(format!(
                "lambda_cc must be in [0, 1], got {}",
                self.lambda_cc
            ));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.eps <= 0.0
        {
            return bad("Adam betas must be in [0, 1) and eps positive".into());
        }
        if let Some(a) = &self.adapter {
            if a.rank == 0 || a.alpha <= 0.0 || !(0.0..1.0).contains(&a.dropout) {
                return bad(format!("invalid adapter settings {a:?}"));
            }
        }
        Ok(())
    }
}
