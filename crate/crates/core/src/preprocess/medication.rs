use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{SourceSchema, SourceSeries, TimePoint};
use crate::error::{Error, Result};

/// Maps frequency categories to repetition intervals in minutes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyTable {
    pub interval_minutes: BTreeMap<String, f64>,
}

impl Default for FrequencyTable {
    fn default() -> Self {
        let pairs = [
            ("q1h", 60.0),
            ("q2h", 120.0),
            ("q4h", 240.0),
            ("q6h", 360.0),
            ("q8h", 480.0),
            ("q12h", 720.0),
            ("daily", 1440.0),
            ("every 120 min", 120.0),
        ];
        FrequencyTable {
            interval_minutes: pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
        }
    }
}

impl FrequencyTable {
    pub fn interval(&self, category: &str) -> Option<f64> {
        self.interval_minutes
            .get(category)
            .copied()
            .filter(|v| v.is_finite() && *v > 0.0)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path, e))
    }
}

/// Repeats every administration at its frequency interval from the start
/// offset through the last repetition not after its stop offset. Records
/// with no stop offset, an unknown frequency, or a stop before the start
/// are kept once. Non-medication sources pass through unchanged.
pub fn expand_medications(source: &SourceSchema, series: &SourceSeries, table: &FrequencyTable) -> SourceSeries {
    let Some(freq_idx) = source.frequency_index() else {
        return series.clone();
    };
    let freq_feature = &source.categorical_features[freq_idx];
    let mut out: Vec<TimePoint> = Vec::with_capacity(series.len());
    for p in &series.time_points {
        let start = p.offset_minutes;
        let interval = freq_feature
            .name_of(p.categorical[freq_idx])
            .and_then(|name| table.interval(name));
        match (interval, p.stop_offset_minutes) {
            (Some(step), Some(stop)) if stop >= start => {
                let repeats = ((stop - start) / step + 1e-9).floor() as usize;
                for k in 0..=repeats {
                    out.push(TimePoint {
                        offset_minutes: start + k as f64 * step,
                        ..p.clone()
                    });
                }
            }
            _ => out.push(p.clone()),
        }
    }
    SourceSeries::from_points(series.source_id, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{CategoricalFeature, SourceKind};

    fn meds() -> SourceSchema {
        SourceSchema {
            source_id: 1,
            source_name: "meds".into(),
            kind: SourceKind::Medication,
            numeric_features: vec!["dose".into()],
            categorical_features: vec![
                CategoricalFeature::new("drug", &["insulin"]),
                CategoricalFeature::new("frequency", &["every 120 min", "prn"]),
            ],
            embed_width: 4,
            dimension_feature: None,
            frequency_feature: Some("frequency".into()),
        }
    }

    fn record(start: f64, stop: Option<f64>, freq: &str) -> SourceSeries {
        let s = meds();
        let freq_id = s.categorical_features[1].id_of(freq).unwrap();
        let mut p = TimePoint::new(start, vec![Some(2.0)], vec![2, freq_id]);
        p.stop_offset_minutes = stop;
        SourceSeries::from_points(1, vec![p])
    }

    fn offsets(s: &SourceSeries) -> Vec<f64> {
        s.time_points.iter().map(|p| p.offset_minutes).collect()
    }

    #[test]
    fn arithmetic_progression_through_stop() {
        let out = expand_medications(&meds(), &record(0.0, Some(360.0), "every 120 min"), &FrequencyTable::default());
        let oracle: Vec<f64> = (0..)
            .map(|k| k as f64 * 120.0)
            .take_while(|t| *t <= 360.0)
            .collect();
        assert_eq!(offsets(&out), oracle);
        assert_eq!(oracle, vec![0.0, 120.0, 240.0, 360.0]);
    }

    #[test]
    fn stop_equal_to_start_gives_single_record() {
        let out = expand_medications(&meds(), &record(50.0, Some(50.0), "every 120 min"), &FrequencyTable::default());
        assert_eq!(offsets(&out), vec![50.0]);
    }

    #[test]
    fn stop_before_start_is_not_expanded() {
        let input = record(50.0, Some(10.0), "every 120 min");
        assert_eq!(expand_medications(&meds(), &input, &FrequencyTable::default()), input);
    }

    #[test]
    fn unknown_frequency_passes_through() {
        let input = record(0.0, Some(1000.0), "prn");
        let out = expand_medications(&meds(), &input, &FrequencyTable::default());
        assert_eq!(out, input);
    }

    #[test]
    fn output_stays_ordered() {
        let s = meds();
        let mut a = TimePoint::new(0.0, vec![Some(1.0)], vec![2, 2]);
        a.stop_offset_minutes = Some(500.0);
        let b = TimePoint::new(130.0, vec![Some(1.0)], vec![2, 3]);
        let out = expand_medications(&s, &SourceSeries::from_points(1, vec![a, b]), &FrequencyTable::default());
        assert_eq!(offsets(&out), vec![0.0, 120.0, 130.0, 240.0, 360.0, 480.0]);
    }
}
