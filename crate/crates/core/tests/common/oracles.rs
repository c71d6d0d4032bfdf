//! Exhaustive reference computations for rank metrics and cutpoints.

use rand::Rng;

pub fn auroc_pairs(scores: &[f64], truths: &[bool]) -> Option<f64> {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for i in 0..scores.len() {
        for j in 0..scores.len() {
            if truths[i] && !truths[j] {
                pairs += 1.0;
                if scores[i] > scores[j] {
                    wins += 1.0;
                } else if scores[i] == scores[j] {
                    wins += 0.5;
                }
            }
        }
    }
    (pairs > 0.0).then(|| wins / pairs)
}

fn distinct_desc(scores: &[f64]) -> Vec<f64> {
    let mut t = scores.to_vec();
    t.sort_by(|a, b| b.partial_cmp(a).unwrap());
    t.dedup();
    t
}

pub fn auprc_sweep(scores: &[f64], truths: &[bool]) -> Option<f64> {
    let pos = truths.iter().filter(|&&t| t).count();
    if pos == 0 {
        return None;
    }
    let mut area = 0.0;
    let mut prev = 0.0;
    for t in distinct_desc(scores) {
        let tp = (0..scores.len()).filter(|&i| scores[i] >= t && truths[i]).count();
        let called = (0..scores.len()).filter(|&i| scores[i] >= t).count();
        let recall = tp as f64 / pos as f64;
        area += (recall - prev) * (tp as f64 / called as f64);
        prev = recall;
    }
    Some(area)
}

/// (threshold, sensitivity, specificity) by scanning every candidate.
pub fn cutpoint_scan(scores: &[f64], truths: &[bool]) -> Option<(f64, f64, f64)> {
    let pos = truths.iter().filter(|&&t| t).count();
    let neg = truths.len() - pos;
    if pos == 0 || neg == 0 {
        return None;
    }
    let mut candidates = vec![f64::INFINITY];
    candidates.extend(distinct_desc(scores));
    candidates.push(f64::NEG_INFINITY);
    let mut best: Option<(u128, f64, usize, usize)> = None;
    for t in candidates {
        let tp = (0..scores.len()).filter(|&i| scores[i] >= t && truths[i]).count();
        let tn = (0..scores.len()).filter(|&i| scores[i] < t && !truths[i]).count();
        let key = tp as u128 * neg as u128 + tn as u128 * pos as u128;
        // candidates run from high to low, so only a strict gain moves down
        if best.map_or(true, |b| key > b.0) {
            best = Some((key, t, tp, tn));
        }
    }
    best.map(|(_, t, tp, tn)| (t, tp as f64 / pos as f64, tn as f64 / neg as f64))
}

/// A random instance of size 1..=max_n; half the instances use coarse
/// scores so ties are common.
pub fn random_instance(rng: &mut impl Rng, max_n: usize) -> (Vec<f64>, Vec<bool>) {
    let n = rng.random_range(1..=max_n);
    let coarse = rng.random_bool(0.5);
    let prevalence = rng.random_range(0.05..0.95);
    let scores = (0..n)
        .map(|_| {
            if coarse {
                rng.random_range(0..8) as f64 / 8.0
            } else {
                rng.random::<f64>()
            }
        })
        .collect();
    let truths = (0..n).map(|_| rng.random_bool(prevalence)).collect();
    (scores, truths)
}
