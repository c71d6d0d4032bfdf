//! Synthetic multi-source cohorts with a planted glucose process.
//!
//! Latent glucose is a per-patient baseline plus a mean-reverting deviation
//! plus lagged insulin and dextrose effects. Insulin corrections follow a
//! sliding scale on high readings and dextrose rescues follow low ones, so
//! the interventions are visible in the medication source.

mod cohort;
mod config;
mod generator;
pub mod schema;

pub use cohort::{
    calibrate_prevalence, class_counts, generate_cohort, generate_episodes, locf_hardness_report, Calibration,
    CohortManifest, GeneratedCohort, PREVALENCE_TOLERANCE,
};
pub use config::{DextroseConfig, GeneratorConfig, InsulinConfig, LatentConfig, PopulationConfig};
pub use generator::{
    generate_episode, kernel, ou_path, patient_id, simulate_episode, stay_id, subgroup_tags, total_effect, Diabetes,
    KernelEvent, PatientTraits, SimulatedEpisode,
};
pub use schema::synthetic_schema;
