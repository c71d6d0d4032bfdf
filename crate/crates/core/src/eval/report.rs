use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::metrics::{auprc, auroc, balanced_accuracy, select_cutpoint, Confusion};
use super::stats::{bootstrap_ci, permutation_test, ConfidenceInterval, DEFAULT_BOOTSTRAP, DEFAULT_PERMUTATIONS};
use crate::data::GlycemicClass;
use crate::error::{Error, Result};

/// Model output for one labelled example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredExample {
    /// Softmax probabilities, one per class.
    pub scores: Vec<f64>,
    pub true_class: usize,
    pub horizon_minutes: f64,
    pub next_target_value: f64,
    /// Target value at the cutoff, used by the carry-forward baseline.
    pub current_value: f64,
    pub subgroup_tags: Vec<String>,
}

impl ScoredExample {
    pub fn predicted_class(&self) -> usize {
        let mut best = 0;
        for (i, s) in self.scores.iter().enumerate() {
            if *s > self.scores[best] {
                best = i;
            }
        }
        best
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalOptions {
    pub bootstrap_resamples: usize,
    pub permutations: usize,
    pub seed: u64,
    /// Per-class thresholds chosen elsewhere (typically on validation);
    /// when absent they are selected on the evaluated examples.
    pub cutpoints: Option<Vec<f64>>,
    pub confidence_intervals: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            bootstrap_resamples: DEFAULT_BOOTSTRAP,
            permutations: DEFAULT_PERMUTATIONS,
            seed: 0,
            cutpoints: None,
            confidence_intervals: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: String,
    pub prevalence: f64,
    pub auroc: Option<f64>,
    pub auprc: Option<f64>,
    pub cutpoint: Option<f64>,
    pub ppv: Option<f64>,
    pub npv: Option<f64>,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub auroc_ci: Option<ConfidenceInterval>,
    pub auprc_ci: Option<ConfidenceInterval>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MacroMetrics {
    pub auroc: Option<f64>,
    pub auprc: Option<f64>,
    pub ppv: Option<f64>,
    pub npv: Option<f64>,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub auroc_ci: Option<ConfidenceInterval>,
    pub auprc_ci: Option<ConfidenceInterval>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n_examples: usize,
    pub classes: Vec<ClassMetrics>,
    #[serde(rename = "macro")]
    pub macro_avg: MacroMetrics,
    /// Mean per-class recall of the argmax prediction.
    pub balanced_accuracy: Option<f64>,
}

impl MetricsReport {
    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path, e))
    }

    /// One row per class plus a `macro` row.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::Csv { path: path.into(), source: e })?;
        let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let wrap = |e: csv::Error| Error::Csv { path: path.into(), source: e };
        w.write_record([
            "class", "prevalence", "auroc", "auroc_low", "auroc_high", "auprc", "auprc_low", "auprc_high", "ppv", "npv",
            "sensitivity", "specificity", "cutpoint",
        ])
        .map_err(wrap)?;
        let ci = |c: &Option<ConfidenceInterval>| (fmt(c.map(|c| c.low)), fmt(c.map(|c| c.high)));
        for c in &self.classes {
            let (al, ah) = ci(&c.auroc_ci);
            let (pl, ph) = ci(&c.auprc_ci);
            w.write_record([
                c.class.clone(),
                c.prevalence.to_string(),
                fmt(c.auroc),
                al,
                ah,
                fmt(c.auprc),
                pl,
                ph,
                fmt(c.ppv),
                fmt(c.npv),
                fmt(c.sensitivity),
                fmt(c.specificity),
                fmt(c.cutpoint),
            ])
            .map_err(wrap)?;
        }
        let m = &self.macro_avg;
        let (al, ah) = ci(&m.auroc_ci);
        let (pl, ph) = ci(&m.auprc_ci);
        w.write_record([
            "macro".to_string(),
            String::new(),
            fmt(m.auroc),
            al,
            ah,
            fmt(m.auprc),
            pl,
            ph,
            fmt(m.ppv),
            fmt(m.npv),
            fmt(m.sensitivity),
            fmt(m.specificity),
            String::new(),
        ])
        .map_err(wrap)?;
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Arithmetic mean, undefined if any input is.
pub fn macro_mean(values: &[Option<f64>]) -> Option<f64> {
    let v: Option<Vec<f64>> = values.iter().copied().collect();
    v.filter(|v| !v.is_empty()).map(|v| v.iter().sum::<f64>() / v.len() as f64)
}

fn one_vs_rest(examples: &[ScoredExample], idx: &[usize], class: usize) -> (Vec<f64>, Vec<bool>) {
    idx.iter()
        .map(|&i| (examples[i].scores[class], examples[i].true_class == class))
        .unzip()
}

fn macro_rank_metric(examples: &[ScoredExample], idx: &[usize], n_classes: usize, f: fn(&[f64], &[bool]) -> Option<f64>) -> Option<f64> {
    let per: Vec<Option<f64>> = (0..n_classes)
        .map(|c| {
            let (s, t) = one_vs_rest(examples, idx, c);
            f(&s, &t)
        })
        .collect();
    macro_mean(&per)
}

fn validate(examples: &[ScoredExample], n_classes: usize) -> Result<()> {
    for (i, e) in examples.iter().enumerate() {
        if e.scores.len() != n_classes || e.true_class >= n_classes {
            return Err(Error::InvalidInput(format!("example {i} does not have {n_classes} class scores")));
        }
    }
    Ok(())
}

/// The full one-vs-rest metric suite over the given examples.
pub fn evaluate(examples: &[ScoredExample], n_classes: usize, options: &EvalOptions) -> Result<MetricsReport> {
    validate(examples, n_classes)?;
    if let Some(c) = &options.cutpoints {
        if c.len() != n_classes {
            return Err(Error::InvalidInput(format!("{} cutpoints for {n_classes} classes", c.len())));
        }
    }
    let n = examples.len();
    let all: Vec<usize> = (0..n).collect();
    let ci = |metric: &dyn Fn(&[usize]) -> Option<f64>, salt: u64| {
        (options.confidence_intervals && n > 0)
            .then(|| bootstrap_ci(n, metric, options.bootstrap_resamples, options.seed.wrapping_add(salt)))
            .flatten()
    };
    let mut classes = Vec::with_capacity(n_classes);
    for c in 0..n_classes {
        let (scores, truths) = one_vs_rest(examples, &all, c);
        let positives = truths.iter().filter(|&&t| t).count();
        let cut = match &options.cutpoints {
            Some(cuts) => Some(cuts[c]),
            None => select_cutpoint(&scores, &truths).map(|c| c.threshold),
        };
        let m = cut.map(|t| {
            let pred: Vec<bool> = scores.iter().map(|&s| s >= t).collect();
            Confusion::from_predictions(&pred, &truths).metrics()
        });
        let name = GlycemicClass::from_index(c).map_or_else(|| format!("class{c}"), |g| g.name().to_string());
        classes.push(ClassMetrics {
            class: name,
            prevalence: if n == 0 { 0.0 } else { positives as f64 / n as f64 },
            auroc: auroc(&scores, &truths),
            auprc: auprc(&scores, &truths),
            cutpoint: cut,
            ppv: m.and_then(|m| m.ppv),
            npv: m.and_then(|m| m.npv),
            sensitivity: m.and_then(|m| m.sensitivity),
            specificity: m.and_then(|m| m.specificity),
            auroc_ci: ci(
                &|idx| {
                    let (s, t) = one_vs_rest(examples, idx, c);
                    auroc(&s, &t)
                },
                2 * c as u64,
            ),
            auprc_ci: ci(
                &|idx| {
                    let (s, t) = one_vs_rest(examples, idx, c);
                    auprc(&s, &t)
                },
                2 * c as u64 + 1,
            ),
        });
    }
    let col = |f: fn(&ClassMetrics) -> Option<f64>| macro_mean(&classes.iter().map(f).collect::<Vec<_>>());
    let macro_avg = MacroMetrics {
        auroc: col(|c| c.auroc),
        auprc: col(|c| c.auprc),
        ppv: col(|c| c.ppv),
        npv: col(|c| c.npv),
        sensitivity: col(|c| c.sensitivity),
        specificity: col(|c| c.specificity),
        auroc_ci: ci(&|idx| macro_rank_metric(examples, idx, n_classes, auroc), 100),
        auprc_ci: ci(&|idx| macro_rank_metric(examples, idx, n_classes, auprc), 101),
    };
    let predicted: Vec<usize> = examples.iter().map(ScoredExample::predicted_class).collect();
    let truths: Vec<usize> = examples.iter().map(|e| e.true_class).collect();
    Ok(MetricsReport {
        n_examples: n,
        classes,
        macro_avg,
        balanced_accuracy: balanced_accuracy(&predicted, &truths, n_classes),
    })
}

/// Metric suite restricted to examples carrying `tag`.
pub fn subgroup_report(examples: &[ScoredExample], tag: &str, n_classes: usize, options: &EvalOptions) -> Result<MetricsReport> {
    let subset: Vec<ScoredExample> = examples
        .iter()
        .filter(|e| e.subgroup_tags.iter().any(|t| t == tag))
        .cloned()
        .collect();
    if subset.is_empty() {
        return Err(Error::InvalidInput(format!("no example carries tag `{tag}`")));
    }
    evaluate(&subset, n_classes, options)
}

/// All tags present on at least one example.
pub fn subgroup_tags(examples: &[ScoredExample]) -> BTreeSet<String> {
    examples.iter().flat_map(|e| e.subgroup_tags.iter().cloned()).collect()
}

pub const N_TIME_BUCKETS: usize = 10;
pub const BUCKET_MINUTES: f64 = 60.0;

/// Left-closed one-hour bucket of a horizon; 600 minutes joins the last.
pub fn time_bucket(horizon_minutes: f64) -> usize {
    ((horizon_minutes / BUCKET_MINUTES).floor().max(0.0) as usize).min(N_TIME_BUCKETS - 1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketMetrics {
    pub bucket: usize,
    pub start_minutes: f64,
    pub end_minutes: f64,
    pub n_examples: usize,
    /// Per class; `None` where the bucket holds a single class.
    pub auroc: Vec<Option<f64>>,
    pub auprc: Vec<Option<f64>>,
}

pub fn time_bucket_report(examples: &[ScoredExample], n_classes: usize) -> Result<Vec<BucketMetrics>> {
    validate(examples, n_classes)?;
    let mut members = vec![Vec::new(); N_TIME_BUCKETS];
    for (i, e) in examples.iter().enumerate() {
        members[time_bucket(e.horizon_minutes)].push(i);
    }
    Ok(members
        .iter()
        .enumerate()
        .map(|(b, idx)| {
            let (mut ar, mut pr) = (Vec::new(), Vec::new());
            for c in 0..n_classes {
                let (s, t) = one_vs_rest(examples, idx, c);
                let both = t.iter().any(|&x| x) && t.iter().any(|&x| !x);
                ar.push(if both { auroc(&s, &t) } else { None });
                pr.push(if both { auprc(&s, &t) } else { None });
            }
            BucketMetrics {
                bucket: b,
                start_minutes: b as f64 * BUCKET_MINUTES,
                end_minutes: (b + 1) as f64 * BUCKET_MINUTES,
                n_examples: idx.len(),
                auroc: ar,
                auprc: pr,
            }
        })
        .collect())
}

/// Paired permutation p-value for the difference in one-vs-rest AUROC of
/// `class` between two models scored on the same examples.
pub fn compare_auroc(a: &[ScoredExample], b: &[ScoredExample], class: usize, options: &EvalOptions) -> Result<Option<f64>> {
    if a.len() != b.len() || a.iter().zip(b).any(|(x, y)| x.true_class != y.true_class) {
        return Err(Error::InvalidInput("model comparison needs the same examples".into()));
    }
    let sa: Vec<f64> = a.iter().map(|e| e.scores[class]).collect();
    let sb: Vec<f64> = b.iter().map(|e| e.scores[class]).collect();
    let t: Vec<bool> = a.iter().map(|e| e.true_class == class).collect();
    Ok(permutation_test(auroc, &sa, &sb, &t, options.permutations, options.seed))
}

/// Convenience check that a report's prevalences form a distribution.
pub fn prevalence_total(report: &MetricsReport) -> f64 {
    report.classes.iter().map(|c| c.prevalence).sum()
}
