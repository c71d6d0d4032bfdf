use serde::{Deserialize, Serialize};

use super::config::GeneratorConfig;
use super::generator::generate_episode;
use super::schema::synthetic_schema;
use crate::data::{build_cohort_examples, Cohort, LabeledExample, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::eval::{locf_report, LocfReport, TransitionMatrix};

/// Allowed gap between achieved and target prevalence per class.
pub const PREVALENCE_TOLERANCE: f64 = 0.02;

/// Summary written next to a generated cohort.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortManifest {
    pub seed: u64,
    pub n_patients: usize,
    pub n_examples: usize,
    pub class_counts: [usize; NUM_CLASSES],
    pub target_prevalence: [f64; NUM_CLASSES],
    pub achieved_prevalence: [f64; NUM_CLASSES],
    /// Whether every class lands within the tolerance of its target.
    pub prevalence_within_tolerance: bool,
    pub transitions: TransitionMatrix,
    pub transition_rate: Option<f64>,
    pub locf_balanced_accuracy: Option<f64>,
    pub config: GeneratorConfig,
}

#[derive(Debug, Clone)]
pub struct GeneratedCohort {
    pub cohort: Cohort,
    pub manifest: CohortManifest,
}

/// Label distribution over the examples of `examples`.
pub fn class_counts(examples: &[LabeledExample]) -> [usize; NUM_CLASSES] {
    let mut counts = [0; NUM_CLASSES];
    for e in examples {
        counts[e.label.index()] += 1;
    }
    counts
}

fn prevalence(counts: &[usize; NUM_CLASSES]) -> [f64; NUM_CLASSES] {
    let n: usize = counts.iter().sum();
    counts.map(|c| if n == 0 { 0.0 } else { c as f64 / n as f64 })
}

/// Episodes for patients `0..n_patients`, checked against the data-model
/// validators.
pub fn generate_episodes(config: &GeneratorConfig) -> Result<Cohort> {
    config.validate()?;
    let episodes = (0..config.n_patients)
        .map(|i| generate_episode(config, i))
        .collect::<Result<Vec<_>>>()?;
    let cohort = Cohort {
        schema: synthetic_schema(),
        episodes,
    };
    cohort.validate()?;
    Ok(cohort)
}

pub fn generate_cohort(config: &GeneratorConfig) -> Result<GeneratedCohort> {
    let cohort = generate_episodes(config)?;
    let examples = build_cohort_examples(cohort.episodes.iter().enumerate());
    let counts = class_counts(&examples);
    let achieved = prevalence(&counts);
    let within = achieved
        .iter()
        .zip(&config.target_prevalence)
        .all(|(a, t)| (a - t).abs() <= PREVALENCE_TOLERANCE);
    if !within {
        tracing::warn!(?achieved, target = ?config.target_prevalence, "prevalence outside tolerance");
    }
    let locf = locf_hardness_report(&cohort)?;
    let manifest = CohortManifest {
        seed: config.seed,
        n_patients: config.n_patients,
        n_examples: examples.len(),
        class_counts: counts,
        target_prevalence: config.target_prevalence,
        achieved_prevalence: achieved,
        prevalence_within_tolerance: within,
        transitions: locf.transitions,
        transition_rate: locf.change_rate,
        locf_balanced_accuracy: locf.balanced_accuracy,
        config: config.clone(),
    };
    Ok(GeneratedCohort { cohort, manifest })
}

/// Next-step class transitions and the carry-forward balanced accuracy over
/// every labelled example of the cohort.
pub fn locf_hardness_report(cohort: &Cohort) -> Result<LocfReport> {
    if cohort.episodes.is_empty() {
        return Err(Error::InvalidInput("cohort has no episodes".into()));
    }
    let pairs: Vec<(f64, usize)> = build_cohort_examples(cohort.episodes.iter().enumerate())
        .iter()
        .map(|e| (e.current_value, e.label.index()))
        .collect();
    locf_report(&pairs)
}

/// Result of tuning a generator towards its target prevalence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub config: GeneratorConfig,
    pub achieved_prevalence: [f64; NUM_CLASSES],
    pub within_tolerance: bool,
}

fn pilot_prevalence(config: &GeneratorConfig) -> Result<[f64; NUM_CLASSES]> {
    let examples: Vec<LabeledExample> = (0..config.n_patients)
        .map(|i| generate_episode(config, i).map(|e| crate::data::build_examples(&e, i)))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    Ok(prevalence(&class_counts(&examples)))
}

/// Bisection for the `x` in `[lo, hi]` where the increasing function `f`
/// reaches `target`.
fn bisect(mut lo: f64, mut hi: f64, target: f64, steps: usize, mut f: impl FnMut(f64) -> Result<f64>) -> Result<f64> {
    for _ in 0..steps {
        let mid = 0.5 * (lo + hi);
        if f(mid)? < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Alternately tunes the baseline (driving hyperglycemia) and the
/// correction insulin strength (driving hypoglycemia) on a pilot cohort of
/// `pilot_patients`. Infeasible targets are reported through
/// `within_tolerance`, never as an error.
pub fn calibrate_prevalence(config: &GeneratorConfig, pilot_patients: usize, rounds: usize) -> Result<Calibration> {
    config.validate()?;
    let mut c = config.clone();
    c.n_patients = pilot_patients.max(1);
    let [hypo, _, hyper] = config.target_prevalence;
    for _ in 0..rounds {
        let baseline = bisect(40.0, 300.0, hyper, 14, |b| {
            let mut t = c.clone();
            t.latent.baseline_mg_dl = b;
            Ok(pilot_prevalence(&t)?[2])
        })?;
        c.latent.baseline_mg_dl = baseline;
        let effect = bisect(0.0, 60.0, hypo, 14, |e| {
            let mut t = c.clone();
            t.insulin.effect_per_unit = e;
            Ok(pilot_prevalence(&t)?[0])
        })?;
        c.insulin.effect_per_unit = effect;
    }
    let achieved = pilot_prevalence(&c)?;
    let within = achieved
        .iter()
        .zip(&config.target_prevalence)
        .all(|(a, t)| (a - t).abs() <= PREVALENCE_TOLERANCE);
    c.n_patients = config.n_patients;
    Ok(Calibration {
        config: c,
        achieved_prevalence: achieved,
        within_tolerance: within,
    })
}
