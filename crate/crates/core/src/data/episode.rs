use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::schema::{CohortSchema, SourceSchema};
use crate::error::{Error, Result};

/// Raw features observed by one source at one timestamp.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimePoint {
    /// Minutes since admission.
    pub offset_minutes: f64,
    /// Aligned with the source's numeric features; `None` marks a missing value.
    pub numeric: Vec<Option<f64>>,
    /// Category ids aligned with the source's categorical features.
    pub categorical: Vec<u32>,
    /// Medication records only: when the order stops.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop_offset_minutes: Option<f64>,
}

impl TimePoint {
    pub fn new(offset_minutes: f64, numeric: Vec<Option<f64>>, categorical: Vec<u32>) -> Self {
        TimePoint {
            offset_minutes,
            numeric,
            categorical,
            stop_offset_minutes: None,
        }
    }

    pub fn validate(&self, schema: &SourceSchema) -> Result<()> {
        let field = |f: &str| format!("{}.{f}", schema.source_name);
        if !self.offset_minutes.is_finite() || self.offset_minutes < 0.0 {
            return Err(Error::schema(
                field("offset_minutes"),
                format!("must be finite and non-negative, got {}", self.offset_minutes),
            ));
        }
        if self.numeric.len() != schema.n_numeric() {
            return Err(Error::schema(
                field("numeric"),
                format!("expected {} values, got {}", schema.n_numeric(), self.numeric.len()),
            ));
        }
        if self.categorical.len() != schema.n_categorical() {
            return Err(Error::schema(
                field("categorical"),
                format!("expected {} values, got {}", schema.n_categorical(), self.categorical.len()),
            ));
        }
        for (name, v) in schema.numeric_features.iter().zip(&self.numeric) {
            if matches!(v, Some(x) if !x.is_finite()) {
                return Err(Error::schema(field(name), "non-finite value"));
            }
        }
        for (feat, &id) in schema.categorical_features.iter().zip(&self.categorical) {
            if id as usize >= feat.vocabulary.len() {
                return Err(Error::schema(
                    field(&feat.name),
                    format!("category id {id} outside vocabulary of {}", feat.vocabulary.len()),
                ));
            }
        }
        Ok(())
    }
}

/// All time points one source produced for an episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceSeries {
    pub source_id: usize,
    pub present: bool,
    pub time_points: Vec<TimePoint>,
}

impl SourceSeries {
    pub fn absent(source_id: usize) -> Self {
        SourceSeries {
            source_id,
            present: false,
            time_points: Vec::new(),
        }
    }

    /// Builds a series from unordered points; the sort is stable so records
    /// sharing an offset keep their input order.
    pub fn from_points(source_id: usize, mut time_points: Vec<TimePoint>) -> Self {
        time_points.sort_by(|a, b| a.offset_minutes.total_cmp(&b.offset_minutes));
        SourceSeries {
            source_id,
            present: !time_points.is_empty(),
            time_points,
        }
    }

    pub fn len(&self) -> usize {
        self.time_points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.time_points.is_empty()
    }

    /// Points with `offset <= cutoff`. A source with no such points is absent
    /// from the view.
    pub fn view_until(&self, cutoff: f64) -> SourceSeries {
        let end = self
            .time_points
            .partition_point(|p| p.offset_minutes <= cutoff);
        let time_points = self.time_points[..end].to_vec();
        SourceSeries {
            source_id: self.source_id,
            present: !time_points.is_empty(),
            time_points,
        }
    }

    pub fn validate(&self, schema: &SourceSchema) -> Result<()> {
        if self.source_id != schema.source_id {
            return Err(Error::schema(
                format!("{}.source_id", schema.source_name),
                format!("series carries id {}", self.source_id),
            ));
        }
        if !self.present && !self.time_points.is_empty() {
            return Err(Error::schema(
                format!("{}.present", schema.source_name),
                "absent source has time points",
            ));
        }
        for w in self.time_points.windows(2) {
            if w[1].offset_minutes < w[0].offset_minutes {
                return Err(Error::schema(
                    format!("{}.time_points", schema.source_name),
                    "offsets must be nondecreasing",
                ));
            }
        }
        self.time_points.iter().try_for_each(|p| p.validate(schema))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetMeasurement {
    pub offset_minutes: f64,
    /// mg/dL
    pub value: f64,
}

/// One (pre-consolidated) patient stay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub stay_id: String,
    pub patient_id: String,
    pub subgroup_tags: BTreeSet<String>,
    /// Exactly one series per schema source, ordered by source id.
    pub series: Vec<SourceSeries>,
    /// Strictly increasing in offset.
    pub target_track: Vec<TargetMeasurement>,
}

impl Episode {
    pub fn validate(&self, schema: &CohortSchema) -> Result<()> {
        if self.series.len() != schema.n_sources() {
            return Err(Error::schema(
                format!("episode[{}].series", self.stay_id),
                format!("expected {} sources, got {}", schema.n_sources(), self.series.len()),
            ));
        }
        for (series, src) in self.series.iter().zip(&schema.sources) {
            series.validate(src)?;
        }
        for w in self.target_track.windows(2) {
            if w[1].offset_minutes <= w[0].offset_minutes {
                return Err(Error::schema(
                    format!("episode[{}].target_track", self.stay_id),
                    "offsets must be strictly increasing",
                ));
            }
        }
        for m in &self.target_track {
            if !m.value.is_finite() || m.value <= 0.0 || !m.offset_minutes.is_finite() {
                return Err(Error::schema(
                    format!("episode[{}].target_track", self.stay_id),
                    format!("invalid measurement {m:?}"),
                ));
            }
        }
        Ok(())
    }

    /// Every source restricted to `offset <= cutoff`.
    pub fn view_until(&self, cutoff: f64) -> Vec<SourceSeries> {
        self.series.iter().map(|s| s.view_until(cutoff)).collect()
    }
}

/// Orders raw `(offset, value)` target readings and resolves identical
/// offsets by keeping the last-written reading.
pub fn dedup_target_track(raw: &[(f64, f64)]) -> Vec<TargetMeasurement> {
    let mut indexed: Vec<(usize, f64, f64)> = raw
        .iter()
        .enumerate()
        .map(|(i, &(t, v))| (i, t, v))
        .collect();
    indexed.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    let mut out: Vec<TargetMeasurement> = Vec::with_capacity(indexed.len());
    for (_, t, v) in indexed {
        match out.last_mut() {
            Some(last) if last.offset_minutes == t => last.value = v,
            _ => out.push(TargetMeasurement {
                offset_minutes: t,
                value: v,
            }),
        }
    }
    out
}
