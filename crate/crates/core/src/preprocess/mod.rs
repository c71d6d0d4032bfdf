//! Normalization, imputation, outlier removal, medication expansion,
//! truncation and absent-source placeholders.

pub mod medication;
pub mod normalizer;
pub mod pipeline;
pub mod series;

pub use medication::{expand_medications, FrequencyTable};
pub use normalizer::{fit_normalizer, quantile, Normalizer, NormalizerEntry, NormalizerState};
pub use pipeline::{expand_episode, ModelInput, Preprocessor, SourceInput};
pub use series::{placeholder_missing_source, truncate_series, MAX_SEQ_LEN, PLACEHOLDER_OFFSET};
