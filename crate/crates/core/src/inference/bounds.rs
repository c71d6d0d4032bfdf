use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::data::{CohortSchema, ABSENT_SOURCE};
use crate::preprocess::NormalizerState;

/// Slider limits sit this many training standard deviations from the mean.
pub const DEFAULT_SIGMA_MULTIPLIER: f64 = 3.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct NumericBounds {
    pub feature: String,
    /// Dimension category (e.g. the lab name) the statistics are keyed by.
    pub dimension: Option<String>,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct CategoricalChoices {
    pub feature: String,
    pub categories: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct SourceBounds {
    pub source: String,
    pub numeric: Vec<NumericBounds>,
    pub categorical: Vec<CategoricalChoices>,
    /// Whether records carry a stop offset.
    pub has_stop_offset: bool,
}

/// Input limits for a client form, derived from the fitted normalizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct BoundsDocument {
    pub sigma_multiplier: f64,
    pub min_offset_minutes: f64,
    pub sources: Vec<SourceBounds>,
}

/// `mean ± k·std`, narrowed to the outlier thresholds where they exist so a
/// value inside the bounds is never silently dropped.
pub fn bounds_document(schema: &CohortSchema, state: &NormalizerState, k: f64) -> BoundsDocument {
    let sources = schema
        .sources
        .iter()
        .map(|src| {
            let numeric = state
                .entries
                .iter()
                .filter(|e| e.source_id == src.source_id)
                .map(|e| {
                    let mut min = e.mean - k * e.std;
                    let mut max = e.mean + k * e.std;
                    if let Some(low) = e.low {
                        min = min.max(low);
                    }
                    if let Some(high) = e.high {
                        max = max.min(high);
                    }
                    NumericBounds {
                        feature: e.feature.clone(),
                        dimension: e.dimension.clone(),
                        mean: e.mean,
                        std: e.std,
                        min: min.min(e.mean),
                        max: max.max(e.mean),
                    }
                })
                .collect();
            let categorical = src
                .categorical_features
                .iter()
                .map(|f| CategoricalChoices {
                    feature: f.name.clone(),
                    categories: f.vocabulary.iter().filter(|c| *c != ABSENT_SOURCE).cloned().collect(),
                })
                .collect();
            SourceBounds {
                source: src.source_name.clone(),
                numeric,
                categorical,
                has_stop_offset: src.frequency_feature.is_some(),
            }
        })
        .collect();
    BoundsDocument {
        sigma_multiplier: k,
        min_offset_minutes: 0.0,
        sources,
    }
}
