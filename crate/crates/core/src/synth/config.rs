use serde::{Deserialize, Serialize};

use crate::data::windowing::{MAX_HORIZON_MINUTES, MIN_HISTORY, MIN_HORIZON_MINUTES};
use crate::error::{Error, Result};

/// Mean-reverting latent glucose around a per-patient baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LatentConfig {
    /// Median patient baseline before diagnosis shifts, mg/dL.
    pub baseline_mg_dl: f64,
    /// Log-scale spread of the patient baseline.
    pub baseline_log_sd: f64,
    /// Pull towards the baseline per minute.
    pub mean_reversion_per_minute: f64,
    /// Stationary standard deviation of the deviation process, mg/dL.
    pub noise_sd: f64,
    /// Additive noise of a glucose reading, mg/dL.
    pub measurement_sd: f64,
    /// Latent values are clamped from below at this level.
    pub floor_mg_dl: f64,
}

impl Default for LatentConfig {
    fn default() -> Self {
        LatentConfig {
            baseline_mg_dl: 136.0,
            baseline_log_sd: 0.3,
            mean_reversion_per_minute: 1.0 / 30.0,
            noise_sd: 26.0,
            measurement_sd: 4.0,
            floor_mg_dl: 20.0,
        }
    }
}

/// Patient traits that shift the baseline and scale its variability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PopulationConfig {
    pub type1_fraction: f64,
    pub type2_fraction: f64,
    pub type1_shift: f64,
    pub type2_shift: f64,
    /// Variability multipliers for no diabetes, type 2 and type 1.
    pub variability: [f64; 3],
    pub sepsis_fraction: f64,
    pub sepsis_shift: f64,
    pub sepsis_variability: f64,
    pub steroid_fraction: f64,
    pub steroid_shift: f64,
    /// Share of episodes whose diagnosis source is missing entirely.
    pub absent_diagnosis_fraction: f64,
}

impl Default for PopulationConfig {
    fn default() -> Self {
        PopulationConfig {
            type1_fraction: 0.10,
            type2_fraction: 0.22,
            type1_shift: 55.0,
            type2_shift: 40.0,
            variability: [0.55, 1.0, 2.0],
            sepsis_fraction: 0.3,
            sepsis_shift: 20.0,
            sepsis_variability: 1.4,
            steroid_fraction: 0.15,
            steroid_shift: 30.0,
            absent_diagnosis_fraction: 0.1,
        }
    }
}

/// Insulin-like events lower glucose along a lagged kernel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InsulinConfig {
    /// Readings above this trigger a correction dose.
    pub correction_threshold: f64,
    pub correction_target: f64,
    /// mg/dL above target covered by one unit.
    pub mg_dl_per_unit: f64,
    pub dose_log_sd: f64,
    /// Peak glucose drop per unit at unit sensitivity, mg/dL.
    pub effect_per_unit: f64,
    pub peak_minutes: f64,
    /// Share of diabetic patients on scheduled basal insulin.
    pub basal_fraction: f64,
    pub basal_units: (f64, f64),
    pub basal_effect_per_unit: f64,
    pub basal_peak_minutes: f64,
    pub basal_frequency: String,
    pub sensitivity: (f64, f64),
}

impl Default for InsulinConfig {
    fn default() -> Self {
        InsulinConfig {
            correction_threshold: 200.0,
            correction_target: 150.0,
            mg_dl_per_unit: 40.0,
            dose_log_sd: 0.3,
            effect_per_unit: 16.0,
            peak_minutes: 60.0,
            basal_fraction: 0.8,
            basal_units: (5.0, 30.0),
            basal_effect_per_unit: 1.0,
            basal_peak_minutes: 240.0,
            basal_frequency: "q12h".into(),
            sensitivity: (1.0, 2.5),
        }
    }
}

/// Dextrose-like rescue events raise glucose along a lagged kernel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DextroseConfig {
    /// Readings below this trigger a rescue dose.
    pub threshold: f64,
    pub grams: f64,
    /// Peak glucose rise, mg/dL.
    pub effect: f64,
    pub peak_minutes: f64,
}

impl Default for DextroseConfig {
    fn default() -> Self {
        DextroseConfig {
            threshold: 70.0,
            grams: 25.0,
            effect: 60.0,
            peak_minutes: 25.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub seed: u64,
    pub n_patients: usize,
    /// Glucose readings per episode, inclusive range.
    pub measurements: (usize, usize),
    /// Gaps between readings are log-uniform on this range, minutes.
    pub gap_minutes: (f64, f64),
    pub vitals_interval_minutes: f64,
    pub lab_interval_minutes: f64,
    /// Class prevalence the cohort is tuned towards (hypo, euglycemia, hyper).
    pub target_prevalence: [f64; 3],
    pub latent: LatentConfig,
    pub population: PopulationConfig,
    pub insulin: InsulinConfig,
    pub dextrose: DextroseConfig,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            seed: 0,
            n_patients: 2000,
            measurements: (16, 36),
            gap_minutes: (MIN_HORIZON_MINUTES, MAX_HORIZON_MINUTES),
            vitals_interval_minutes: 60.0,
            lab_interval_minutes: 480.0,
            target_prevalence: [0.019, 0.749, 0.232],
            latent: LatentConfig::default(),
            population: PopulationConfig::default(),
            insulin: InsulinConfig::default(),
            dextrose: DextroseConfig::default(),
        }
    }
}

fn positive(field: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::schema(field, format!("must be positive, got {v}")))
    }
}

fn non_negative(field: &str, v: f64) -> Result<()> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(Error::schema(field, format!("must be non-negative, got {v}")))
    }
}

fn fraction(field: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::schema(field, format!("must lie in [0, 1], got {v}")))
    }
}

fn range(field: &str, (lo, hi): (f64, f64)) -> Result<()> {
    positive(field, lo)?;
    if hi < lo || !hi.is_finite() {
        return Err(Error::schema(field, format!("empty range ({lo}, {hi})")));
    }
    Ok(())
}

impl GeneratorConfig {
    /// Rates and scales must be positive (noise scales may be zero) and the
    /// gap range must sit inside the labelling window.
    pub fn validate(&self) -> Result<()> {
        if self.n_patients == 0 {
            return Err(Error::schema("n_patients", "need at least one patient"));
        }
        let (lo, hi) = self.measurements;
        if lo < MIN_HISTORY + 1 || hi < lo {
            return Err(Error::schema(
                "measurements",
                format!("need a range starting at {} or more, got ({lo}, {hi})", MIN_HISTORY + 1),
            ));
        }
        range("gap_minutes", self.gap_minutes)?;
        if self.gap_minutes.0 < MIN_HORIZON_MINUTES || self.gap_minutes.1 > MAX_HORIZON_MINUTES {
            return Err(Error::schema(
                "gap_minutes",
                format!("must lie within [{MIN_HORIZON_MINUTES}, {MAX_HORIZON_MINUTES}]"),
            ));
        }
        positive("vitals_interval_minutes", self.vitals_interval_minutes)?;
        positive("lab_interval_minutes", self.lab_interval_minutes)?;
        let total: f64 = self.target_prevalence.iter().sum();
        if self.target_prevalence.iter().any(|p| !(0.0..=1.0).contains(p)) || (total - 1.0).abs() > 1e-6 {
            return Err(Error::schema("target_prevalence", "must be a distribution"));
        }

        let l = &self.latent;
        positive("latent.baseline_mg_dl", l.baseline_mg_dl)?;
        non_negative("latent.baseline_log_sd", l.baseline_log_sd)?;
        positive("latent.mean_reversion_per_minute", l.mean_reversion_per_minute)?;
        non_negative("latent.noise_sd", l.noise_sd)?;
        non_negative("latent.measurement_sd", l.measurement_sd)?;
        positive("latent.floor_mg_dl", l.floor_mg_dl)?;

        let p = &self.population;
        fraction("population.type1_fraction", p.type1_fraction)?;
        fraction("population.type2_fraction", p.type2_fraction)?;
        fraction("population.type1_fraction + type2_fraction", p.type1_fraction + p.type2_fraction)?;
        fraction("population.sepsis_fraction", p.sepsis_fraction)?;
        fraction("population.steroid_fraction", p.steroid_fraction)?;
        fraction("population.absent_diagnosis_fraction", p.absent_diagnosis_fraction)?;
        for v in p.variability {
            non_negative("population.variability", v)?;
        }
        non_negative("population.sepsis_variability", p.sepsis_variability)?;

        let i = &self.insulin;
        positive("insulin.correction_threshold", i.correction_threshold)?;
        positive("insulin.mg_dl_per_unit", i.mg_dl_per_unit)?;
        non_negative("insulin.dose_log_sd", i.dose_log_sd)?;
        non_negative("insulin.effect_per_unit", i.effect_per_unit)?;
        positive("insulin.peak_minutes", i.peak_minutes)?;
        fraction("insulin.basal_fraction", i.basal_fraction)?;
        range("insulin.basal_units", i.basal_units)?;
        non_negative("insulin.basal_effect_per_unit", i.basal_effect_per_unit)?;
        positive("insulin.basal_peak_minutes", i.basal_peak_minutes)?;
        range("insulin.sensitivity", i.sensitivity)?;

        let d = &self.dextrose;
        positive("dextrose.threshold", d.threshold)?;
        positive("dextrose.grams", d.grams)?;
        non_negative("dextrose.effect", d.effect)?;
        positive("dextrose.peak_minutes", d.peak_minutes)?;
        Ok(())
    }
}
