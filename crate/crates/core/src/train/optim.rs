use serde::{Deserialize, Serialize};

use crate::model::ParamStore;
use crate::tensor::{softmax, Matrix, ParamId};

/// Cross entropy of `softmax(logits)` against class `target`, computed
/// with log-sum-exp.
pub fn cross_entropy(logits: &[f64], target: usize) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
    lse - logits[target]
}

/// Gradient of [`cross_entropy`] with respect to the logits:
/// `softmax(logits) - one_hot(target)`.
pub fn cross_entropy_grad(logits: &[f64], target: usize) -> Vec<f64> {
    let mut g = softmax(logits);
    g[target] -= 1.0;
    g
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 5e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adam without weight decay or clipping. Moments exist per parameter and
/// are only touched for parameters that receive a gradient.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Option<Matrix>>,
    v: Vec<Option<Matrix>>,
}

impl Adam {
    pub fn new(config: AdamConfig, n_params: usize) -> Self {
        Adam {
            config,
            step: 0,
            m: vec![None; n_params],
            v: vec![None; n_params],
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &[(ParamId, Matrix)]) {
        self.step += 1;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        for (id, g) in grads {
            let (rows, cols) = g.shape();
            let m = self.m[id.0].get_or_insert_with(|| Matrix::zeros(rows, cols));
            let v = self.v[id.0].get_or_insert_with(|| Matrix::zeros(rows, cols));
            let p = store.get_mut(*id);
            let (m, v, p) = (m.as_mut_slice(), v.as_mut_slice(), p.as_mut_slice());
            for (k, &gk) in g.as_slice().iter().enumerate() {
                m[k] = c.beta1 * m[k] + (1.0 - c.beta1) * gk;
                v[k] = c.beta2 * v[k] + (1.0 - c.beta2) * gk * gk;
                let mh = m[k] / bc1;
                let vh = v[k] / bc2;
                p[k] -= c.learning_rate * mh / (vh.sqrt() + c.epsilon);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_ln3() {
        assert!((cross_entropy(&[0.3, 0.3, 0.3], 1) - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn confident_logits_approach_zero() {
        assert!(cross_entropy(&[50.0, 0.0, 0.0], 0) < 1e-20);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let logits = [0.2, -1.3, 0.7];
        let g = cross_entropy_grad(&logits, 2);
        for k in 0..3 {
            let mut hi = logits;
            let mut lo = logits;
            hi[k] += 1e-6;
            lo[k] -= 1e-6;
            let num = (cross_entropy(&hi, 2) - cross_entropy(&lo, 2)) / 2e-6;
            assert!((num - g[k]).abs() < 1e-8, "{k}: {num} vs {}", g[k]);
        }
    }

    #[test]
    fn first_adam_step_moves_by_learning_rate() {
        let mut store = ParamStore::new();
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        let id = store.add("w", "g", 1, 2, crate::model::Init::Zeros, &mut rng);
        let mut adam = Adam::new(AdamConfig::default(), store.len());
        adam.step(&mut store, &[(id, Matrix::from_vec(1, 2, vec![3.0, -0.5]))]);
        let p = store.get(id).as_slice();
        assert!((p[0] + 5e-4).abs() < 1e-10 && (p[1] - 5e-4).abs() < 1e-10, "{p:?}");
    }
}
