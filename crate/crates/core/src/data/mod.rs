//! Multi-source irregular time-series records, labelling and splitting.

pub mod episode;
pub mod ingest;
pub mod labels;
pub mod schema;
pub mod split;
pub mod windowing;

pub use episode::{dedup_target_track, Episode, SourceSeries, TargetMeasurement, TimePoint};
pub use ingest::Cohort;
pub use labels::{classify_target, GlycemicClass, NUM_CLASSES};
pub use schema::{CategoricalFeature, CohortSchema, SourceKind, SourceSchema, ABSENT_SOURCE, UNKNOWN};
pub use split::{split_by_patient, PatientSplit, SplitFractions};
pub use windowing::{build_cohort_examples, build_examples, LabeledExample};
