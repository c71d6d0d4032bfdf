use std::collections::{BTreeMap, BTreeSet};

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::data::{CohortSchema, Episode, SourceKind, SourceSeries, TimePoint, UNKNOWN};
use crate::error::Error;

/// One raw record of a source, keyed by feature name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct RawRecord {
    /// Minutes since admission.
    pub offset_minutes: f64,
    /// Numeric features; omitted or null entries are missing values.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub values: BTreeMap<String, Option<f64>>,
    /// Categorical features; unseen categories map to `unknown`.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub categories: BTreeMap<String, String>,
    /// Medication orders only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop_offset_minutes: Option<f64>,
}

/// Raw per-source records for one prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct PredictRequest {
    /// Prediction time in minutes since admission. Records after it are
    /// ignored. Defaults to the latest record offset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cutoff_minutes: Option<f64>,
    /// Records keyed by source name. A missing or empty source is treated as
    /// absent.
    #[serde(default)]
    pub sources: BTreeMap<String, Vec<RawRecord>>,
}

/// Where a request failed validation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
pub struct FieldError {
    /// Dotted path into the request, e.g. `sources.vitals[2].offset_minutes`.
    pub field: String,
    pub message: String,
}

impl FieldError {
    fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        FieldError {
            field: field.into(),
            message: message.into(),
        }
    }
}

impl std::fmt::Display for FieldError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

fn check_offset(errors: &mut Vec<FieldError>, field: String, v: f64) {
    if !v.is_finite() || v < 0.0 {
        errors.push(FieldError::new(field, format!("must be finite and non-negative, got {v}")));
    }
}

impl PredictRequest {
    /// Converts the request into a raw episode plus the cutoff to predict at,
    /// collecting every problem instead of stopping at the first.
    pub fn to_episode(&self, schema: &CohortSchema) -> Result<(Episode, f64), Vec<FieldError>> {
        let mut errors = Vec::new();
        if let Some(c) = self.cutoff_minutes {
            check_offset(&mut errors, "cutoff_minutes".into(), c);
        }
        for name in self.sources.keys() {
            if schema.by_name(name).is_none() {
                errors.push(FieldError::new(format!("sources.{name}"), "unknown source"));
            }
        }

        let mut series = Vec::with_capacity(schema.n_sources());
        let mut latest = f64::NEG_INFINITY;
        for src in &schema.sources {
            let records = self.sources.get(&src.source_name).map(Vec::as_slice).unwrap_or(&[]);
            let mut points = Vec::with_capacity(records.len());
            for (r, rec) in records.iter().enumerate() {
                let at = |f: &str| format!("sources.{}[{r}].{f}", src.source_name);
                check_offset(&mut errors, at("offset_minutes"), rec.offset_minutes);
                latest = latest.max(rec.offset_minutes);

                let mut numeric = vec![None; src.n_numeric()];
                for (name, v) in &rec.values {
                    match src.numeric_index(name) {
                        None => errors.push(FieldError::new(at(&format!("values.{name}")), "unknown numeric feature")),
                        Some(_) if matches!(v, Some(x) if !x.is_finite()) => {
                            errors.push(FieldError::new(at(&format!("values.{name}")), "must be finite"))
                        }
                        Some(j) => numeric[j] = *v,
                    }
                }

                let mut categorical: Vec<u32> = src.categorical_features.iter().map(|f| f.unknown_id()).collect();
                for (name, v) in &rec.categories {
                    match src.categorical_index(name) {
                        None => errors.push(FieldError::new(
                            at(&format!("categories.{name}")),
                            "unknown categorical feature",
                        )),
                        Some(j) => {
                            let feat = &src.categorical_features[j];
                            // The placeholder category is reserved for the pipeline.
                            categorical[j] = match feat.id_or_unknown(v) {
                                id if id == feat.absent_id() => feat.unknown_id(),
                                id => id,
                            };
                        }
                    }
                }

                if let Some(stop) = rec.stop_offset_minutes {
                    if src.kind != SourceKind::Medication {
                        errors.push(FieldError::new(at("stop_offset_minutes"), "only medication records stop"));
                    } else if !stop.is_finite() || stop < rec.offset_minutes {
                        errors.push(FieldError::new(
                            at("stop_offset_minutes"),
                            format!("must be finite and not before offset_minutes, got {stop}"),
                        ));
                    }
                }

                points.push(TimePoint {
                    offset_minutes: rec.offset_minutes,
                    numeric,
                    categorical,
                    stop_offset_minutes: rec.stop_offset_minutes,
                });
            }
            series.push(SourceSeries::from_points(src.source_id, points));
        }

        if !errors.is_empty() {
            return Err(errors);
        }
        let cutoff = self.cutoff_minutes.unwrap_or(if latest.is_finite() { latest } else { 0.0 });
        let episode = Episode {
            stay_id: "request".into(),
            patient_id: "request".into(),
            subgroup_tags: BTreeSet::new(),
            series,
            target_track: Vec::new(),
        };
        Ok((episode, cutoff))
    }

    /// The records of a raw episode visible at `cutoff`, in request form.
    pub fn from_episode(schema: &CohortSchema, episode: &Episode, cutoff: f64) -> Self {
        let mut sources = BTreeMap::new();
        for (series, src) in episode.series.iter().zip(&schema.sources) {
            let view = series.view_until(cutoff);
            if !view.present {
                continue;
            }
            let records = view
                .time_points
                .iter()
                .map(|p| RawRecord {
                    offset_minutes: p.offset_minutes,
                    values: src
                        .numeric_features
                        .iter()
                        .zip(&p.numeric)
                        .filter(|(_, v)| v.is_some())
                        .map(|(n, v)| (n.clone(), *v))
                        .collect(),
                    categories: src
                        .categorical_features
                        .iter()
                        .zip(&p.categorical)
                        .map(|(f, &id)| (f.name.clone(), f.name_of(id).unwrap_or(UNKNOWN).to_string()))
                        .filter(|(_, v)| v != UNKNOWN)
                        .collect(),
                    stop_offset_minutes: p.stop_offset_minutes,
                })
                .collect();
            sources.insert(src.source_name.clone(), records);
        }
        PredictRequest {
            cutoff_minutes: Some(cutoff),
            sources,
        }
    }
}

/// Fusion weight of one source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct SourceWeight {
    pub source: String,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct PredictResponse {
    /// Class names in probability order.
    pub classes: Vec<String>,
    pub probabilities: Vec<f64>,
    pub predicted_class: String,
    pub predicted_index: usize,
    /// Per-source fusion weights in schema order; they sum to 1.
    pub fusion_weights: Vec<SourceWeight>,
    /// sha256 of the checkpoint file.
    pub model_hash: String,
    pub config_hash: String,
}

/// Body of a 400 response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct ValidationErrors {
    pub errors: Vec<FieldError>,
}

impl From<Vec<FieldError>> for Error {
    fn from(errors: Vec<FieldError>) -> Self {
        Error::InvalidRequest(errors)
    }
}
