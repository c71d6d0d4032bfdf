use serde::{Deserialize, Serialize};

use super::metrics::{balanced_accuracy, Confusion};
use crate::data::{classify_target, GlycemicClass, NUM_CLASSES};
use crate::error::Result;

/// Carry-forward baseline: the next class is the class of the current value.
pub fn locf_predict(current_value: f64) -> Result<GlycemicClass> {
    classify_target(current_value)
}

/// Counts of (current class -> next class) over a set of examples.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TransitionMatrix {
    /// `counts[from][to]`
    pub counts: [[u64; NUM_CLASSES]; NUM_CLASSES],
}

impl TransitionMatrix {
    pub fn from_pairs(pairs: impl IntoIterator<Item = (GlycemicClass, GlycemicClass)>) -> Self {
        let mut m = TransitionMatrix::default();
        for (from, to) in pairs {
            m.counts[from.index()][to.index()] += 1;
        }
        m
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    /// Share of transitions whose class changes.
    pub fn change_rate(&self) -> Option<f64> {
        let total = self.total();
        let same: u64 = (0..NUM_CLASSES).map(|c| self.counts[c][c]).sum();
        (total > 0).then(|| (total - same) as f64 / total as f64)
    }

    /// One-vs-rest confusion of the carry-forward prediction for `class`:
    /// it predicts `class` exactly on rows `from == class`.
    pub fn locf_confusion(&self, class: usize) -> Confusion {
        let mut c = Confusion::default();
        for from in 0..NUM_CLASSES {
            for to in 0..NUM_CLASSES {
                let n = self.counts[from][to];
                match (from == class, to == class) {
                    (true, true) => c.tp += n,
                    (true, false) => c.fp += n,
                    (false, false) => c.tn += n,
                    (false, true) => c.fn_ += n,
                }
            }
        }
        c
    }

    /// Mean recall of the carry-forward prediction over the next classes
    /// that occur.
    pub fn locf_balanced_accuracy(&self) -> Option<f64> {
        let recalls: Vec<f64> = (0..NUM_CLASSES)
            .filter_map(|to| {
                let col: u64 = (0..NUM_CLASSES).map(|from| self.counts[from][to]).sum();
                (col > 0).then(|| self.counts[to][to] as f64 / col as f64)
            })
            .collect();
        (!recalls.is_empty()).then(|| recalls.iter().sum::<f64>() / recalls.len() as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocfReport {
    pub transitions: TransitionMatrix,
    pub balanced_accuracy: Option<f64>,
    pub change_rate: Option<f64>,
}

/// Baseline report from `(current value, true next class)` pairs.
pub fn locf_report(pairs: &[(f64, usize)]) -> Result<LocfReport> {
    let mut predicted = Vec::with_capacity(pairs.len());
    let mut truths = Vec::with_capacity(pairs.len());
    let mut trans = Vec::with_capacity(pairs.len());
    for &(current, next) in pairs {
        let from = locf_predict(current)?;
        predicted.push(from.index());
        truths.push(next);
        if let Some(to) = GlycemicClass::from_index(next) {
            trans.push((from, to));
        }
    }
    let transitions = TransitionMatrix::from_pairs(trans);
    Ok(LocfReport {
        change_rate: transitions.change_rate(),
        balanced_accuracy: balanced_accuracy(&predicted, &truths, NUM_CLASSES),
        transitions,
    })
}
