//! Softmax cross-entropy for the single-label head and the composite
//! base + lambda * CC/MCC loss for the two-label head.

use crate::catalog::CcMccLabel;

pub const DEFAULT_LAMBDA_CC: f64 = 0.5;

pub fn log_sum_exp(logits: &[f64]) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// `-log softmax(logits)[target]` and its gradient `softmax - onehot`.
pub fn single_label_loss(logits: &[f64], target: usize) -> (f64, Vec<f64>) {
    assert!(
        target < logits.len(),
        "target {target} out of range {}",
        logits.len()
    );
    let loss = log_sum_exp(logits) - logits[target];
    let mut grad = softmax(logits);
    grad[target] -= 1.0;
    (loss, grad)
}

/// `CE(base block) + lambda_cc * CE(last five logits)`. The first
/// `logits.len() - 5` entries are base-DRG logits.
pub fn two_label_loss(
    logits: &[f64],
    base_target: usize,
    cc_target: CcMccLabel,
    lambda_cc: f64,
) -> (f64, Vec<f64>) {
    let n_bases = logits.len() - CcMccLabel::COUNT;
    let (base_logits, cc_logits) = logits.split_at(n_bases);
    let (base_loss, base_grad) = single_label_loss(base_logits, base_target);
    let (cc_loss, cc_grad) = single_label_loss(cc_logits, cc_target.index());
    let mut grad = base_grad;
    grad.extend(cc_grad.into_iter().map(|g| lambda_cc * g));
    (base_loss + lambda_cc * cc_loss, grad)
}
