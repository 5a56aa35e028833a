//! Linear output head with an optional low-rank adapter.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::features::FeatureVector;
use super::ModelError;

/// `C x V` weights (row-major) and `C` biases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearHead {
    pub n_outputs: usize,
    pub n_features: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl LinearHead {
    pub fn zeros(n_outputs: usize, n_features: usize) -> Self {
        LinearHead {
            n_outputs,
            n_features,
            weights: vec![0.0; n_outputs * n_features],
            bias: vec![0.0; n_outputs],
        }
    }

    pub fn weight(&self, row: usize, col: usize) -> f64 {
        self.weights[row * self.n_features + col]
    }
}

/// Trainable delta `(alpha / r) * B * A` on top of a frozen head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoraAdapter {
    pub rank: usize,
    pub alpha: f64,
    /// `r x V`, row-major.
    pub a: Vec<f64>,
    /// `C x r`, row-major.
    pub b: Vec<f64>,
    pub n_outputs: usize,
    pub n_features: usize,
}

impl LoraAdapter {
    /// `A` uniform in `±1/sqrt(V)`, `B` zero, so the initial delta is zero.
    pub fn new<R: Rng>(
        n_outputs: usize,
        n_features: usize,
        rank: usize,
        alpha: f64,
        rng: &mut R,
    ) -> Result<Self, ModelError> {
        if rank == 0 || rank > n_outputs.min(n_features) {
            return Err(ModelError::InvalidConfig(format!(
                "adapter rank {rank} must be in 1..={}",
                n_outputs.min(n_features)
            )));
        }
        let bound = 1.0 / (n_features as f64).sqrt();
        let a = (0..rank * n_features)
            .map(|_| rng.gen_range(-bound..bound))
            .collect();
        Ok(LoraAdapter {
            rank,
            alpha,
            a,
            b: vec![0.0; n_outputs * rank],
            n_outputs,
            n_features,
        })
    }

    pub fn scale(&self) -> f64 {
        self.alpha / self.rank as f64
    }

    /// `A x`, length `r`.
    pub fn project(&self, x: &FeatureVector) -> Vec<f64> {
        (0..self.rank)
            .map(|r| {
                let row = &self.a[r * self.n_features..(r + 1) * self.n_features];
                x.iter().map(|(i, v)| row[i] * v).sum()
            })
            .collect()
    }

    /// Dense `(alpha / r) * B * A`, for inspection and tests.
    pub fn delta(&self) -> Vec<f64> {
        let scale = self.scale();
        let mut out = vec![0.0; self.n_outputs * self.n_features];
        for c in 0..self.n_outputs {
            for r in 0..self.rank {
                let bcr = self.b[c * self.rank + r];
                if bcr == 0.0 {
                    continue;
                }
                for j in 0..self.n_features {
                    out[c * self.n_features + j] += scale * bcr * self.a[r * self.n_features + j];
                }
            }
        }
        out
    }
}

fn check_dims(x: &FeatureVector, head: &LinearHead) -> Result<(), ModelError> {
    if x.dim != head.n_features {
        return Err(ModelError::DimensionMismatch {
            expected: head.n_features,
            found: x.dim,
        });
    }
    Ok(())
}

/// `W x + b`, plus `(alpha / r) B (A x)` when an adapter is present.
pub fn forward(
    x: &FeatureVector,
    head: &LinearHead,
    adapter: Option<&LoraAdapter>,
) -> Result<Vec<f64>, ModelError> {
    check_dims(x, head)?;
    let mut logits = head.bias.clone();
    for (c, logit) in logits.iter_mut().enumerate() {
        let row = &head.weights[c * head.n_features..(c + 1) * head.n_features];
        *logit += x.iter().map(|(i, v)| row[i] * v).sum::<f64>();
    }
    if let Some(adapter) = adapter {
        if adapter.n_outputs != head.n_outputs || adapter.n_features != head.n_features {
            return Err(ModelError::DimensionMismatch {
                expected: head.n_outputs * head.n_features,
                found: adapter.n_outputs * adapter.n_features,
            });
        }
        add_adapter(&mut logits, &adapter.project(x), adapter);
    }
    Ok(logits)
}

/// Adds `scale * B * ax` into `logits`.
pub(crate) fn add_adapter(logits: &mut [f64], ax: &[f64], adapter: &LoraAdapter) {
    let scale = adapter.scale();
    for (c, logit) in logits.iter_mut().enumerate() {
        let row = &adapter.b[c * adapter.rank..(c + 1) * adapter.rank];
        let delta: f64 = row.iter().zip(ax).map(|(b, a)| b * a).sum();
        *logit += scale * delta;
    }
}
