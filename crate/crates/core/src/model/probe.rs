use rand::Rng;

use super::config::ModelConfig;
use crate::preprocess::{ModelInput, SourceInput};

/// A random well-formed input for `config`, used as a probe batch for
/// checkpoint checks and in tests. Each source has 1..=`max_points`
/// points with sorted offsets, and with probability 1/4 is a placeholder.
pub fn random_input(config: &ModelConfig, max_points: usize, rng: &mut impl Rng) -> ModelInput {
    let sources = config
        .sources
        .iter()
        .enumerate()
        .map(|(m, spec)| {
            let c = spec.vocab_sizes.len();
            if rng.random_bool(0.25) {
                return SourceInput {
                    source_id: m + 1,
                    present: false,
                    offsets: vec![0.0],
                    numeric: vec![0.0; spec.n_numeric],
                    categorical: vec![1; c],
                };
            }
            let t = rng.random_range(1..=max_points.max(1));
            let mut offsets: Vec<f64> = (0..t).map(|_| rng.random_range(0.0..5000.0f64).round()).collect();
            offsets.sort_by(f64::total_cmp);
            SourceInput {
                source_id: m + 1,
                present: true,
                offsets,
                numeric: (0..t * spec.n_numeric).map(|_| rng.random_range(-2.0..2.0)).collect(),
                categorical: (0..t)
                    .flat_map(|_| spec.vocab_sizes.iter().map(|&v| rng.random_range(0..v as u32)).collect::<Vec<_>>())
                    .collect(),
            }
        })
        .collect();
    ModelInput { sources }
}
