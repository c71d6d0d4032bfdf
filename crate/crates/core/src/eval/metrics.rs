use serde::{Deserialize, Serialize};

/// Confusion counts of a binary prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

impl Confusion {
    pub fn from_predictions(predictions: &[bool], truths: &[bool]) -> Self {
        assert_eq!(predictions.len(), truths.len(), "prediction/truth length");
        let mut c = Confusion::default();
        for (&p, &t) in predictions.iter().zip(truths) {
            match (p, t) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fn_ += 1,
            }
        }
        c
    }

    pub fn metrics(&self) -> BinaryMetrics {
        let ratio = |num: u64, den: u64| (den > 0).then(|| num as f64 / den as f64);
        BinaryMetrics {
            ppv: ratio(self.tp, self.tp + self.fp),
            npv: ratio(self.tn, self.tn + self.fn_),
            sensitivity: ratio(self.tp, self.tp + self.fn_),
            specificity: ratio(self.tn, self.tn + self.fp),
        }
    }
}

/// Threshold metrics; `None` marks a zero denominator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinaryMetrics {
    pub ppv: Option<f64>,
    pub npv: Option<f64>,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
}

pub fn binary_metrics(predictions: &[bool], truths: &[bool]) -> BinaryMetrics {
    Confusion::from_predictions(predictions, truths).metrics()
}

fn class_counts(truths: &[bool]) -> (usize, usize) {
    let pos = truths.iter().filter(|&&t| t).count();
    (pos, truths.len() - pos)
}

/// Indices sorted by descending score (stable, so ties keep input order).
fn order_desc(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    idx
}

/// Area under the ROC curve as the Mann-Whitney statistic with tied
/// scores sharing their mid-rank. `None` unless both classes occur.
pub fn auroc(scores: &[f64], truths: &[bool]) -> Option<f64> {
    assert_eq!(scores.len(), truths.len(), "score/truth length");
    let (pos, neg) = class_counts(truths);
    if pos == 0 || neg == 0 {
        return None;
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1 share their mean
        let mid = (i + j + 2) as f64 / 2.0;
        rank_sum += mid * idx[i..=j].iter().filter(|&&k| truths[k]).count() as f64;
        i = j + 1;
    }
    let u = rank_sum - (pos * (pos + 1)) as f64 / 2.0;
    Some(u / (pos as f64 * neg as f64))
}

/// Non-interpolated area under the precision-recall curve:
/// `sum_k (R_k - R_{k-1}) P_k` over distinct score thresholds.
pub fn auprc(scores: &[f64], truths: &[bool]) -> Option<f64> {
    assert_eq!(scores.len(), truths.len(), "score/truth length");
    let (pos, _) = class_counts(truths);
    if pos == 0 {
        return None;
    }
    let idx = order_desc(scores);
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut prev_recall = 0.0;
    let mut area = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let s = scores[idx[i]];
        while i < idx.len() && scores[idx[i]] == s {
            if truths[idx[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let recall = tp as f64 / pos as f64;
        let precision = tp as f64 / (tp + fp) as f64;
        area += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    Some(area)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cutpoint {
    /// Predict positive iff `score >= threshold`; may be +/- infinity.
    pub threshold: f64,
    pub sensitivity: f64,
    pub specificity: f64,
}

impl Cutpoint {
    pub fn youden_sum(&self) -> f64 {
        self.sensitivity + self.specificity
    }
}

/// Threshold among the observed scores and the two infinite sentinels that
/// maximizes sensitivity + specificity; ties go to the higher threshold.
pub fn select_cutpoint(scores: &[f64], truths: &[bool]) -> Option<Cutpoint> {
    assert_eq!(scores.len(), truths.len(), "score/truth length");
    let (pos, neg) = class_counts(truths);
    if pos == 0 || neg == 0 {
        return None;
    }
    // Compare tp/pos + tn/neg exactly as tp*neg + tn*pos.
    let key = |tp: usize, tn: usize| tp as u128 * neg as u128 + tn as u128 * pos as u128;
    let (mut tp, mut tn) = (0usize, neg);
    let mut best = (key(tp, tn), f64::INFINITY, tp, tn);
    let idx = order_desc(scores);
    let mut i = 0;
    while i < idx.len() {
        let s = scores[idx[i]];
        while i < idx.len() && scores[idx[i]] == s {
            if truths[idx[i]] {
                tp += 1;
            } else {
                tn -= 1;
            }
            i += 1;
        }
        let k = key(tp, tn);
        if k > best.0 {
            best = (k, s, tp, tn);
        }
    }
    // The -inf sentinel calls everything positive, like the lowest score.
    let (_, threshold, tp, tn) = best;
    Some(Cutpoint {
        threshold,
        sensitivity: tp as f64 / pos as f64,
        specificity: tn as f64 / neg as f64,
    })
}

/// Mean per-class recall over the classes present in `truths`.
pub fn balanced_accuracy(predicted: &[usize], truths: &[usize], n_classes: usize) -> Option<f64> {
    assert_eq!(predicted.len(), truths.len(), "prediction/truth length");
    let mut hits = vec![0usize; n_classes];
    let mut totals = vec![0usize; n_classes];
    for (&p, &t) in predicted.iter().zip(truths) {
        totals[t] += 1;
        if p == t {
            hits[t] += 1;
        }
    }
    let recalls: Vec<f64> = (0..n_classes)
        .filter(|&c| totals[c] > 0)
        .map(|c| hits[c] as f64 / totals[c] as f64)
        .collect();
    (!recalls.is_empty()).then(|| recalls.iter().sum::<f64>() / recalls.len() as f64)
}
