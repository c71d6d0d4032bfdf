use std::collections::{BTreeSet, HashMap};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::episode::Episode;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        SplitFractions {
            train: 0.7,
            val: 0.1,
            test: 0.2,
        }
    }
}

impl SplitFractions {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|f| !(0.0..=1.0).contains(f)) {
            return Err(Error::InvalidInput(format!("split fractions out of [0, 1]: {self:?}")));
        }
        if (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidInput(format!("split fractions must sum to 1: {self:?}")));
        }
        Ok(())
    }
}

/// Episode indices per split; a patient's stays all land in the same split.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PatientSplit {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Shuffles the distinct patient ids with `seed` and cuts the list at the
/// rounded train and validation counts; the test split takes the remainder.
pub fn split_by_patient(
    episodes: &[Episode],
    fractions: SplitFractions,
    seed: u64,
) -> Result<PatientSplit> {
    fractions.validate()?;
    if episodes.is_empty() {
        return Err(Error::InvalidInput("cannot split an empty cohort".into()));
    }
    let patients: Vec<&str> = episodes
        .iter()
        .map(|e| e.patient_id.as_str())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let assignment = assign_units(&patients, fractions, seed);
    let mut split = PatientSplit::default();
    for (i, e) in episodes.iter().enumerate() {
        match assignment[e.patient_id.as_str()] {
            0 => split.train.push(i),
            1 => split.val.push(i),
            _ => split.test.push(i),
        }
    }
    Ok(split)
}

/// Maps every unit to 0 (train), 1 (val) or 2 (test).
fn assign_units<'a>(units: &[&'a str], fractions: SplitFractions, seed: u64) -> HashMap<&'a str, u8> {
    let n = units.len();
    let mut order: Vec<&str> = units.to_vec();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = ((fractions.train * n as f64).round() as usize).min(n);
    let n_val = ((fractions.val * n as f64).round() as usize).min(n - n_train);
    order
        .into_iter()
        .enumerate()
        .map(|(i, u)| {
            let part = if i < n_train {
                0
            } else if i < n_train + n_val {
                1
            } else {
                2
            };
            (u, part)
        })
        .collect()
}
