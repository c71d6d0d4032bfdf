use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::preprocess::quantile;

pub const DEFAULT_BOOTSTRAP: usize = 1000;
pub const DEFAULT_PERMUTATIONS: usize = 1000;
/// Undefined resamples allowed per requested resample before giving up.
const MAX_REDRAW_FACTOR: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceInterval {
    pub low: f64,
    pub high: f64,
    /// Resamples discarded because the metric was undefined on them.
    pub redrawn: usize,
}

/// Percentile 95% interval of `metric` over `b` resamples drawn with
/// replacement. `metric` receives the resampled example indices; resamples
/// where it returns `None` are redrawn.
pub fn bootstrap_ci<F>(n: usize, metric: F, b: usize, seed: u64) -> Option<ConfidenceInterval>
where
    F: Fn(&[usize]) -> Option<f64>,
{
    assert!(b >= 1, "need at least one resample");
    if n == 0 {
        return None;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = Vec::with_capacity(b);
    let mut redrawn = 0;
    let mut idx = vec![0usize; n];
    while values.len() < b {
        for slot in idx.iter_mut() {
            *slot = rng.random_range(0..n);
        }
        match metric(&idx) {
            Some(v) => values.push(v),
            None => {
                redrawn += 1;
                if redrawn > MAX_REDRAW_FACTOR * b {
                    tracing::warn!(redrawn, "bootstrap metric undefined on nearly every resample");
                    return None;
                }
            }
        }
    }
    if redrawn > 0 {
        tracing::debug!(redrawn, "bootstrap resamples redrawn");
    }
    Some(ConfidenceInterval {
        low: quantile(&mut values, 0.025),
        high: quantile(&mut values, 0.975),
        redrawn,
    })
}

/// Two-sided paired permutation test of `metric(a) - metric(b)`: each
/// permutation swaps the two models' scores of every example with
/// probability 1/2. Returns `(count + 1) / (n_perm + 1)`.
pub fn permutation_test<F>(metric: F, scores_a: &[f64], scores_b: &[f64], truths: &[bool], n_perm: usize, seed: u64) -> Option<f64>
where
    F: Fn(&[f64], &[bool]) -> Option<f64>,
{
    assert_eq!(scores_a.len(), scores_b.len(), "paired score length");
    assert_eq!(scores_a.len(), truths.len(), "score/truth length");
    let observed = (metric(scores_a, truths)? - metric(scores_b, truths)?).abs();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pa = scores_a.to_vec();
    let mut pb = scores_b.to_vec();
    let mut count = 0usize;
    // Guards against ties being split by rounding in the metric.
    let tol = 1e-12 * observed.max(1.0);
    for _ in 0..n_perm {
        for i in 0..pa.len() {
            if rng.random_bool(0.5) {
                pa[i] = scores_b[i];
                pb[i] = scores_a[i];
            } else {
                pa[i] = scores_a[i];
                pb[i] = scores_b[i];
            }
        }
        let diff = (metric(&pa, truths)? - metric(&pb, truths)?).abs();
        if diff >= observed - tol {
            count += 1;
        }
    }
    Some((count + 1) as f64 / (n_perm + 1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::metrics::auroc;

    #[test]
    fn constant_metric_gives_zero_width() {
        let ci = bootstrap_ci(50, |_| Some(0.42), 200, 1).unwrap();
        assert_eq!((ci.low, ci.high), (0.42, 0.42));
    }

    #[test]
    fn bootstrap_is_reproducible_and_redraws() {
        let truths: Vec<bool> = (0..20).map(|i| i == 3).collect();
        let scores: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let metric = |idx: &[usize]| {
            let s: Vec<f64> = idx.iter().map(|&i| scores[i]).collect();
            let t: Vec<bool> = idx.iter().map(|&i| truths[i]).collect();
            auroc(&s, &t)
        };
        let a = bootstrap_ci(20, metric, 300, 5).unwrap();
        let b = bootstrap_ci(20, metric, 300, 5).unwrap();
        assert_eq!(a, b);
        assert!(a.redrawn > 0);
    }

    #[test]
    fn identical_models_have_p_one() {
        let s = [0.1, 0.7, 0.3, 0.9];
        let t = [false, true, false, true];
        assert_eq!(permutation_test(auroc, &s, &s, &t, 100, 3), Some(1.0));
    }

    #[test]
    fn opposite_rankings_are_significant() {
        let n = 50;
        let truths: Vec<bool> = (0..n).map(|i| i % 2 == 0).collect();
        let good: Vec<f64> = truths.iter().map(|&t| if t { 0.9 } else { 0.1 }).collect();
        let bad: Vec<f64> = truths.iter().map(|&t| if t { 0.1 } else { 0.9 }).collect();
        let p = permutation_test(auroc, &good, &bad, &truths, 1000, 4).unwrap();
        assert!(p <= 2.0 / 1001.0, "p = {p}");
    }
}
