use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::config::GeneratorConfig;
use super::schema::{self, Drug, LAB_NAMES};
use crate::data::{CohortSchema, Episode, SourceSeries, TargetMeasurement, TimePoint};
use crate::error::{Error, Result};
use crate::preprocess::FrequencyTable;

/// Lagged response `(tau/peak) * exp(1 - tau/peak)` for `tau > 0`, else 0.
/// Peaks at 1 when `tau == peak`.
pub fn kernel(tau: f64, peak: f64) -> f64 {
    if tau <= 0.0 {
        0.0
    } else {
        let r = tau / peak;
        r * (1.0 - r).exp()
    }
}

/// One event's contribution to latent glucose.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelEvent {
    pub offset_minutes: f64,
    /// Signed peak effect, mg/dL.
    pub amplitude: f64,
    pub peak_minutes: f64,
}

impl KernelEvent {
    pub fn effect_at(&self, t: f64) -> f64 {
        self.amplitude * kernel(t - self.offset_minutes, self.peak_minutes)
    }
}

pub fn total_effect(events: &[KernelEvent], t: f64) -> f64 {
    events.iter().map(|e| e.effect_at(t)).sum()
}

/// Per-minute Ornstein-Uhlenbeck deviation path with stationary standard
/// deviation `sd`, started from the stationary law. Uses the exact one-step
/// transition, so `sd == 0` gives a path of zeros.
pub fn ou_path(minutes: usize, rate: f64, sd: f64, rng: &mut impl Rng) -> Vec<f64> {
    let a = (-rate).exp();
    let step_sd = sd * (1.0 - a * a).sqrt();
    let mut out = Vec::with_capacity(minutes);
    let mut x = sd * rng.sample::<f64, _>(StandardNormal);
    for _ in 0..minutes {
        out.push(x);
        x = a * x + step_sd * rng.sample::<f64, _>(StandardNormal);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Diabetes {
    None,
    Type1,
    Type2,
}

/// Hidden and visible characteristics of one simulated patient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientTraits {
    pub diabetes: Diabetes,
    pub sepsis: bool,
    pub steroids: bool,
    /// Mean latent glucose without events, mg/dL.
    pub baseline: f64,
    /// Stationary deviation scale, mg/dL.
    pub variability: f64,
    pub insulin_sensitivity: f64,
    pub basal_units: Option<f64>,
    pub age: f64,
    pub weight_kg: f64,
    pub female: bool,
}

/// A generated episode together with the hidden state that produced it.
#[derive(Debug, Clone)]
pub struct SimulatedEpisode {
    pub episode: Episode,
    pub traits: PatientTraits,
    /// Latent glucose at each target measurement.
    pub latent_at_measurements: Vec<f64>,
    pub events: Vec<KernelEvent>,
}

pub fn patient_id(index: usize) -> String {
    format!("P{index:06}")
}

pub fn stay_id(index: usize) -> String {
    format!("S{index:06}")
}

/// Independent streams per patient: even for the glucose track, odd for
/// the auxiliary sources, so auxiliary draws never perturb the labels.
fn patient_rngs(seed: u64, index: usize) -> (ChaCha8Rng, ChaCha8Rng) {
    let mut main = ChaCha8Rng::seed_from_u64(seed);
    main.set_stream(2 * index as u64);
    let mut aux = ChaCha8Rng::seed_from_u64(seed);
    aux.set_stream(2 * index as u64 + 1);
    (main, aux)
}

fn normal(rng: &mut impl Rng, mean: f64, sd: f64) -> f64 {
    mean + sd * rng.sample::<f64, _>(StandardNormal)
}

fn draw_traits(config: &GeneratorConfig, rng: &mut ChaCha8Rng) -> PatientTraits {
    let p = &config.population;
    let u: f64 = rng.random();
    let diabetes = if u < p.type1_fraction {
        Diabetes::Type1
    } else if u < p.type1_fraction + p.type2_fraction {
        Diabetes::Type2
    } else {
        Diabetes::None
    };
    let sepsis = rng.random::<f64>() < p.sepsis_fraction;
    let steroids = rng.random::<f64>() < p.steroid_fraction;
    let z = rng.sample::<f64, _>(StandardNormal);
    let (shift, var_idx) = match diabetes {
        Diabetes::None => (0.0, 0),
        Diabetes::Type2 => (p.type2_shift, 1),
        Diabetes::Type1 => (p.type1_shift, 2),
    };
    let mut baseline = config.latent.baseline_mg_dl * (config.latent.baseline_log_sd * z).exp() + shift;
    if sepsis {
        baseline += p.sepsis_shift;
    }
    if steroids {
        baseline += p.steroid_shift;
    }
    let mut variability = config.latent.noise_sd * p.variability[var_idx];
    if sepsis {
        variability *= p.sepsis_variability;
    }
    let ins = &config.insulin;
    let insulin_sensitivity = rng.random_range(ins.sensitivity.0..=ins.sensitivity.1);
    let on_basal = rng.random::<f64>() < ins.basal_fraction;
    let units = rng.random_range(ins.basal_units.0..=ins.basal_units.1);
    let basal_units = (diabetes != Diabetes::None && on_basal).then(|| units.round());
    let age = normal(rng, 63.0, 15.0).clamp(18.0, 95.0).round();
    let obese = if diabetes == Diabetes::Type2 { 12.0 } else { 0.0 };
    let weight_kg = (normal(rng, 78.0, 16.0) + obese).clamp(40.0, 200.0).round();
    let female = rng.random::<bool>();
    PatientTraits {
        diabetes,
        sepsis,
        steroids,
        baseline,
        variability,
        insulin_sensitivity,
        basal_units,
        age,
        weight_kg,
        female,
    }
}

fn log_uniform(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
    let u: f64 = rng.random();
    (lo.ln() + u * (hi.ln() - lo.ln())).exp()
}

/// Medication record with its stop offset.
fn med(schema: &CohortSchema, drug: Drug, frequency: &str, offset: f64, dose: f64, stop: Option<f64>) -> TimePoint {
    let src = &schema.sources[schema::MEDS];
    let ids = |feature: usize, name: &str| src.categorical_features[feature].id_or_unknown(name);
    let mut p = TimePoint::new(
        offset,
        vec![Some(dose)],
        vec![ids(0, drug.name()), ids(1, drug.route()), ids(2, frequency)],
    );
    p.stop_offset_minutes = stop;
    p
}

/// Order at the drug's usual frequency.
fn order(schema: &CohortSchema, drug: Drug, offset: f64, dose: f64, stop: Option<f64>) -> TimePoint {
    med(schema, drug, drug.frequency(), offset, dose, stop)
}

fn lab(schema: &CohortSchema, name: &str, offset: f64, value: f64) -> TimePoint {
    let feat = &schema.sources[schema::LABS].categorical_features[0];
    TimePoint::new(offset, vec![Some(value)], vec![feat.id_or_unknown(name)])
}

/// Offsets of a scheduled order repeated every `interval` through `stop`.
fn schedule(start: f64, stop: f64, interval: f64) -> impl Iterator<Item = f64> {
    (0..)
        .map(move |k| start + k as f64 * interval)
        .take_while(move |&t| t <= stop)
}

/// Simulates patient `index` of the cohort described by `config`. The result
/// depends only on `(config, index)`.
pub fn simulate_episode(config: &GeneratorConfig, index: usize) -> Result<SimulatedEpisode> {
    let schema = schema::synthetic_schema();
    let frequencies = FrequencyTable::default();
    let basal_interval = frequencies.interval(&config.insulin.basal_frequency).ok_or_else(|| {
        Error::schema(
            "insulin.basal_frequency",
            format!("`{}` has no interval", config.insulin.basal_frequency),
        )
    })?;
    let (mut rng, mut aux) = patient_rngs(config.seed, index);
    let traits = draw_traits(config, &mut rng);

    // Measurement times on whole minutes.
    let n_meas = rng.random_range(config.measurements.0..=config.measurements.1);
    let first = rng.random_range(30.0..180.0f64).round();
    let mut times = vec![first];
    for _ in 1..n_meas {
        let gap = log_uniform(&mut rng, config.gap_minutes)
            .round()
            .clamp(config.gap_minutes.0.ceil(), config.gap_minutes.1.floor());
        times.push(times.last().unwrap() + gap);
    }
    let last = *times.last().unwrap();
    let end = last + rng.random_range(30.0..240.0f64).round();

    let lat = &config.latent;
    let path = ou_path(last as usize + 1, lat.mean_reversion_per_minute, traits.variability, &mut rng);

    let mut events = Vec::new();
    let mut meds = Vec::new();
    if let Some(units) = traits.basal_units {
        let start = rng.random_range(60.0..300.0f64).round();
        meds.push(med(&schema, Drug::InsulinGlargine, &config.insulin.basal_frequency, start, units, Some(end)));
        let amplitude = -units * traits.insulin_sensitivity * config.insulin.basal_effect_per_unit;
        events.extend(schedule(start, end, basal_interval).map(|t| KernelEvent {
            offset_minutes: t,
            amplitude,
            peak_minutes: config.insulin.basal_peak_minutes,
        }));
    } else {
        // Keep the stream aligned across patients with and without basal insulin.
        let _: f64 = rng.random();
    }

    let latent_at = |events: &[KernelEvent], t: f64| {
        (traits.baseline + path[t as usize] + total_effect(events, t)).max(lat.floor_mg_dl)
    };
    let mut track = Vec::with_capacity(n_meas);
    let mut latent_at_measurements = Vec::with_capacity(n_meas);
    let ins = &config.insulin;
    let dex = &config.dextrose;
    for &t in &times {
        let g = latent_at(&events, t);
        // Both draws happen at every reading so intervention settings never
        // shift the random stream.
        let noise = rng.sample::<f64, _>(StandardNormal);
        let dose_noise = rng.sample::<f64, _>(StandardNormal);
        let value = (g + lat.measurement_sd * noise).max(lat.floor_mg_dl).round();
        latent_at_measurements.push(g);
        track.push(TargetMeasurement { offset_minutes: t, value });
        if value > ins.correction_threshold {
            let raw = (value - ins.correction_target) / ins.mg_dl_per_unit * (ins.dose_log_sd * dose_noise).exp();
            let units = raw.round();
            if units >= 1.0 {
                meds.push(order(&schema, Drug::InsulinRegular, t, units, None));
                events.push(KernelEvent {
                    offset_minutes: t,
                    amplitude: -units * traits.insulin_sensitivity * ins.effect_per_unit,
                    peak_minutes: ins.peak_minutes,
                });
            }
        } else if value < dex.threshold {
            meds.push(order(&schema, Drug::Dextrose, t, dex.grams, None));
            events.push(KernelEvent {
                offset_minutes: t,
                amplitude: dex.effect,
                peak_minutes: dex.peak_minutes,
            });
        }
    }

    let series = auxiliary_series(config, &schema, &traits, &track, &events, &path, end, meds, &mut aux);
    let episode = Episode {
        stay_id: stay_id(index),
        patient_id: patient_id(index),
        subgroup_tags: subgroup_tags(&traits),
        series,
        target_track: track,
    };
    Ok(SimulatedEpisode {
        episode,
        traits,
        latent_at_measurements,
        events,
    })
}

pub fn generate_episode(config: &GeneratorConfig, index: usize) -> Result<Episode> {
    simulate_episode(config, index).map(|s| s.episode)
}

pub fn subgroup_tags(traits: &PatientTraits) -> BTreeSet<String> {
    let mut tags = BTreeSet::new();
    tags.insert(
        match traits.diabetes {
            Diabetes::None => "non_diabetic",
            Diabetes::Type1 => "type1_diabetes",
            Diabetes::Type2 => "type2_diabetes",
        }
        .to_string(),
    );
    if traits.sepsis {
        tags.insert("sepsis".into());
    }
    if traits.steroids {
        tags.insert("steroids".into());
    }
    if traits.basal_units.is_some() {
        tags.insert("basal_insulin".into());
    }
    tags
}

#[allow(clippy::too_many_arguments)]
fn auxiliary_series(
    config: &GeneratorConfig,
    schema: &CohortSchema,
    traits: &PatientTraits,
    track: &[TargetMeasurement],
    events: &[KernelEvent],
    path: &[f64],
    end: f64,
    mut meds: Vec<TimePoint>,
    rng: &mut ChaCha8Rng,
) -> Vec<SourceSeries> {
    let sepsis = if traits.sepsis { 1.0 } else { 0.0 };
    let latent = |t: f64| {
        let i = (t.max(0.0) as usize).min(path.len() - 1);
        (traits.baseline + path[i] + total_effect(events, t)).max(config.latent.floor_mg_dl)
    };

    // Static record at admission.
    let st = &schema.sources[schema::STATIC];
    let sex = st.categorical_features[0].id_or_unknown(if traits.female { "female" } else { "male" });
    let admission = ["medical", "surgical", "emergency"][rng.random_range(0..3)];
    let admission = st.categorical_features[1].id_or_unknown(admission);
    let statics = vec![TimePoint::new(0.0, vec![Some(traits.age), Some(traits.weight_kg)], vec![sex, admission])];

    // Vitals roughly every interval; hypoglycemia raises the heart rate.
    let mut vitals = Vec::new();
    let step = config.vitals_interval_minutes;
    let mut t = rng.random_range(0.0..step).round();
    while t <= end {
        let hypo_drive = (70.0 - latent(t)).max(0.0);
        let mut values = vec![
            normal(rng, 82.0 + 15.0 * sepsis + 0.5 * hypo_drive, 8.0),
            normal(rng, 16.0 + 4.0 * sepsis, 2.5),
            normal(rng, 97.0 - 2.0 * sepsis, 1.5).min(100.0),
            normal(rng, 36.9 + 1.1 * sepsis, 0.4),
            normal(rng, 82.0 - 8.0 * sepsis, 9.0),
        ];
        values.iter_mut().for_each(|v| *v = (*v * 10.0).round() / 10.0);
        let numeric = values
            .into_iter()
            .map(|v| (rng.random::<f64>() >= 0.05).then_some(v))
            .collect();
        vitals.push(TimePoint::new(t, numeric, vec![]));
        t += (step + normal(rng, 0.0, step / 6.0)).max(5.0).round();
    }

    // Glucose readings double as lab records; panels of other labs.
    let mut labs: Vec<TimePoint> = track.iter().map(|m| lab(schema, "glucose", m.offset_minutes, m.value)).collect();
    let mut t = rng.random_range(0.0..60.0f64).round();
    let mut first_panel = true;
    while t <= end {
        if first_panel && rng.random::<f64>() < 0.7 {
            let a1c = 5.0 + (traits.baseline - 100.0).max(0.0) / 30.0 + normal(rng, 0.0, 0.4);
            labs.push(lab(schema, "hba1c", t, (a1c.max(4.0) * 10.0).round() / 10.0));
        }
        first_panel = false;
        for &name in &LAB_NAMES[2..] {
            if rng.random::<f64>() < 0.15 {
                continue;
            }
            let v = match name {
                "potassium" => normal(rng, 4.1, 0.45),
                "creatinine" => (normal(rng, 0.0, 0.45).exp() * (1.0 + 0.5 * sepsis)).max(0.2),
                "lactate" => (normal(rng, 1.2 + 1.6 * sepsis, 0.5)).max(0.3),
                _ => normal(rng, 24.0 - 3.0 * sepsis, 2.5),
            };
            labs.push(lab(schema, name, t, (v * 100.0).round() / 100.0));
        }
        t += (config.lab_interval_minutes + normal(rng, 0.0, 60.0)).max(60.0).round();
    }

    // Scheduled orders unrelated to glucose, plus steroids.
    if traits.steroids {
        let start = rng.random_range(0.0..120.0f64).round();
        meds.push(order(schema, Drug::Hydrocortisone, start, 50.0, Some(end)));
    }
    if rng.random::<f64>() < 0.6 {
        let start = rng.random_range(0.0..240.0f64).round();
        meds.push(order(schema, Drug::Heparin, start, 5000.0, Some(end)));
    }
    if rng.random::<f64>() < 0.5 {
        let start = rng.random_range(0.0..240.0f64).round();
        meds.push(order(schema, Drug::Pantoprazole, start, 40.0, Some(end)));
    }
    if traits.sepsis {
        let start = rng.random_range(0.0..180.0f64).round();
        meds.push(order(schema, Drug::Vancomycin, start, 1000.0, Some(end)));
        if rng.random::<f64>() < 0.5 {
            let stop = (start + rng.random_range(360.0..2000.0f64)).min(end).round();
            let rate = (rng.random_range(2.0..20.0f64) * 10.0).round() / 10.0;
            meds.push(order(schema, Drug::Norepinephrine, start, rate, Some(stop)));
        }
    }

    // Diagnoses charted early in the stay.
    let dx = &schema.sources[schema::DIAGNOSIS].categorical_features[0];
    let mut diagnoses = Vec::new();
    let mut add_dx = |name: &str, rng: &mut ChaCha8Rng| {
        let t = rng.random_range(0.0..60.0f64).round();
        diagnoses.push(TimePoint::new(t, vec![], vec![dx.id_or_unknown(name)]));
    };
    match traits.diabetes {
        Diabetes::Type1 => add_dx("diabetes type 1", rng),
        Diabetes::Type2 => add_dx("diabetes type 2", rng),
        Diabetes::None => {}
    }
    if traits.sepsis {
        add_dx("sepsis", rng);
    }
    for _ in 0..rng.random_range(1..=2) {
        let other = schema::OTHER_DIAGNOSES[rng.random_range(0..schema::OTHER_DIAGNOSES.len())];
        add_dx(other, rng);
    }
    let diagnosis_absent = rng.random::<f64>() < config.population.absent_diagnosis_fraction;
    let diagnosis = if diagnosis_absent {
        SourceSeries::absent(schema.sources[schema::DIAGNOSIS].source_id)
    } else {
        SourceSeries::from_points(schema.sources[schema::DIAGNOSIS].source_id, diagnoses)
    };

    vec![
        SourceSeries::from_points(schema.sources[schema::STATIC].source_id, statics),
        SourceSeries::from_points(schema.sources[schema::VITALS].source_id, vitals),
        SourceSeries::from_points(schema.sources[schema::LABS].source_id, labs),
        SourceSeries::from_points(schema.sources[schema::MEDS].source_id, meds),
        diagnosis,
    ]
}
