use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub const DEFAULT_BOOTSTRAP_ITERATIONS: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapSummary {
    pub mean: f64,
    /// Population standard deviation over iterations.
    pub sd: f64,
}

impl BootstrapSummary {
    pub fn from_values(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        BootstrapSummary {
            mean,
            sd: var.sqrt(),
        }
    }
}

/// `n` indices drawn uniformly with replacement. Iteration `i` is seeded
/// with `seed + i` so iterations are independent of evaluation order.
pub fn resample_indices(n: usize, seed: u64, iteration: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(iteration as u64));
    (0..n).map(|_| rng.gen_range(0..n)).collect()
}

/// Resamples `n` items `iterations` times and summarizes `metric` over the
/// resamples. `metric` receives the resampled indices. Returns `None` when
/// `n` or `iterations` is zero.
pub fn bootstrap<F>(n: usize, iterations: usize, seed: u64, metric: F) -> Option<BootstrapSummary>
where
    F: Fn(&[usize]) -> f64 + Sync,
{
    if n == 0 || iterations == 0 {
        return None;
    }
    let values: Vec<f64> = (0..iterations)
        .into_par_iter()
        .map(|i| metric(&resample_indices(n, seed, i)))
        .collect();
    Some(BootstrapSummary::from_values(&values))
}
