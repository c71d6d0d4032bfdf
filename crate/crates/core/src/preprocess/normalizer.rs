use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{CohortSchema, Episode, SourceKind, SourceSchema, SourceSeries, TimePoint};
use crate::error::{Error, Result};

/// Lower and upper quantiles used to drop lab outliers.
pub const OUTLIER_QUANTILES: (f64, f64) = (0.0005, 0.9995);

/// Statistics for one (source, numeric feature, dimension value) key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizerEntry {
    pub source_id: usize,
    pub feature: String,
    /// Category of the source's dimension feature, when it has one.
    pub dimension: Option<String>,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub count: usize,
    /// Fewer than two observations or zero variance.
    pub degenerate: bool,
    /// Outlier thresholds; only set for lab sources.
    pub low: Option<f64>,
    pub high: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizerState {
    pub fitted_on: String,
    pub outlier_quantiles: (f64, f64),
    pub entries: Vec<NormalizerEntry>,
}

impl NormalizerState {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path, e))
    }
}

/// Type-7 (linear interpolation) sample quantile. Reorders `values`.
pub fn quantile(values: &mut [f64], p: f64) -> f64 {
    assert!(!values.is_empty(), "quantile of an empty sample");
    let n = values.len();
    let h = (n - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let (_, &mut lo_val, upper) = values.select_nth_unstable_by(lo, f64::total_cmp);
    if lo + 1 >= n {
        return lo_val;
    }
    let hi_val = upper.iter().copied().fold(f64::INFINITY, f64::min);
    lo_val + (h - lo as f64) * (hi_val - lo_val)
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

type Key = (usize, usize, Option<u32>);

fn key_of(source: &SourceSchema, feature: usize, p: &TimePoint) -> Key {
    let dim = source.dimension_index().map(|d| p.categorical[d]);
    (source.source_id, feature, dim)
}

/// Fits per-key z-score statistics and lab outlier thresholds. Thresholds are
/// computed on the raw values; mean and deviation on the values that survive
/// them.
pub fn fit_normalizer<'a>(
    schema: &CohortSchema,
    episodes: impl IntoIterator<Item = &'a Episode>,
    fitted_on: &str,
) -> NormalizerState {
    let mut samples: BTreeMap<Key, Vec<f64>> = BTreeMap::new();
    for e in episodes {
        for (series, source) in e.series.iter().zip(&schema.sources) {
            for p in &series.time_points {
                for (j, v) in p.numeric.iter().enumerate() {
                    if let Some(x) = v {
                        samples.entry(key_of(source, j, p)).or_default().push(*x);
                    }
                }
            }
        }
    }

    let (q_lo, q_hi) = OUTLIER_QUANTILES;
    let entries = samples
        .into_iter()
        .map(|((source_id, j, dim), mut values)| {
            let source = schema.source(source_id).expect("key from schema");
            let (low, high) = if source.kind == SourceKind::Lab {
                let lo = quantile(&mut values, q_lo);
                let hi = quantile(&mut values, q_hi);
                values.retain(|v| (lo..=hi).contains(v));
                (Some(lo), Some(hi))
            } else {
                (None, None)
            };
            let (mean, std) = mean_std(&values);
            let degenerate = values.len() < 2 || std == 0.0;
            let dimension = dim.map(|id| {
                let d = source.dimension_index().expect("dimension key");
                source.categorical_features[d]
                    .name_of(id)
                    .unwrap_or_default()
                    .to_string()
            });
            NormalizerEntry {
                source_id,
                feature: source.numeric_features[j].clone(),
                dimension,
                mean,
                std: if values.len() < 2 { 0.0 } else { std },
                count: values.len(),
                degenerate,
                low,
                high,
            }
        })
        .collect();

    NormalizerState {
        fitted_on: fitted_on.to_string(),
        outlier_quantiles: OUTLIER_QUANTILES,
        entries,
    }
}

/// A fitted state indexed against a schema.
#[derive(Debug, Clone)]
pub struct Normalizer {
    state: NormalizerState,
    index: HashMap<Key, usize>,
}

impl Normalizer {
    pub fn new(state: NormalizerState, schema: &CohortSchema) -> Result<Self> {
        let mut index = HashMap::new();
        for (i, e) in state.entries.iter().enumerate() {
            let source = schema.source(e.source_id).ok_or_else(|| {
                Error::schema("normalizer.entries", format!("unknown source id {}", e.source_id))
            })?;
            let j = source.numeric_index(&e.feature).ok_or_else(|| {
                Error::schema(
                    "normalizer.entries",
                    format!("unknown feature `{}` in {}", e.feature, source.source_name),
                )
            })?;
            let dim = match (&e.dimension, source.dimension_index()) {
                (Some(name), Some(d)) => Some(
                    source.categorical_features[d]
                        .id_of(name)
                        .ok_or_else(|| Error::schema("normalizer.entries", format!("unknown dimension `{name}`")))?,
                ),
                (None, None) => None,
                _ => {
                    return Err(Error::schema(
                        "normalizer.entries",
                        format!("dimension mismatch for {}.{}", source.source_name, e.feature),
                    ))
                }
            };
            index.insert((e.source_id, j, dim), i);
        }
        Ok(Normalizer { state, index })
    }

    pub fn state(&self) -> &NormalizerState {
        &self.state
    }

    pub fn entry(&self, source: &SourceSchema, feature: usize, p: &TimePoint) -> Option<&NormalizerEntry> {
        self.index
            .get(&key_of(source, feature, p))
            .map(|&i| &self.state.entries[i])
    }

    /// z-score of one value; zero-deviation and unseen keys map to 0.
    pub fn normalize_value(&self, source: &SourceSchema, feature: usize, p: &TimePoint) -> f64 {
        let Some(x) = p.numeric[feature] else {
            return 0.0;
        };
        match self.entry(source, feature, p) {
            Some(e) if e.std > 0.0 => (x - e.mean) / e.std,
            _ => 0.0,
        }
    }

    pub fn denormalize_value(&self, source: &SourceSchema, feature: usize, p: &TimePoint, z: f64) -> Option<f64> {
        self.entry(source, feature, p)
            .filter(|e| e.std > 0.0)
            .map(|e| z * e.std + e.mean)
    }

    pub fn is_outlier(&self, source: &SourceSchema, p: &TimePoint) -> bool {
        if source.kind != SourceKind::Lab {
            return false;
        }
        p.numeric.iter().enumerate().any(|(j, v)| match (v, self.entry(source, j, p)) {
            (Some(x), Some(e)) => matches!((e.low, e.high), (Some(lo), Some(hi)) if *x < lo || *x > hi),
            _ => false,
        })
    }

    /// Drops lab records outside the fitted quantile thresholds.
    pub fn remove_outliers(&self, source: &SourceSchema, series: &SourceSeries) -> SourceSeries {
        if source.kind != SourceKind::Lab {
            return series.clone();
        }
        let time_points: Vec<TimePoint> = series
            .time_points
            .iter()
            .filter(|p| !self.is_outlier(source, p))
            .cloned()
            .collect();
        SourceSeries {
            source_id: series.source_id,
            present: !time_points.is_empty(),
            time_points,
        }
    }

    /// Returns the record with every numeric value z-scored and present.
    pub fn normalize_point(&self, source: &SourceSchema, p: &TimePoint) -> TimePoint {
        let numeric = (0..p.numeric.len())
            .map(|j| Some(self.normalize_value(source, j, p)))
            .collect();
        TimePoint {
            numeric,
            ..p.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{CategoricalFeature, SourceSeries};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeSet;

    fn schema() -> CohortSchema {
        CohortSchema::new(vec![
            SourceSchema {
                source_id: 1,
                source_name: "vitals".into(),
                kind: SourceKind::General,
                numeric_features: vec!["hr".into()],
                categorical_features: vec![],
                embed_width: 4,
                dimension_feature: None,
                frequency_feature: None,
            },
            SourceSchema {
                source_id: 2,
                source_name: "lab".into(),
                kind: SourceKind::Lab,
                numeric_features: vec!["result".into()],
                categorical_features: vec![CategoricalFeature::new("name", &["a", "b"])],
                embed_width: 4,
                dimension_feature: Some("name".into()),
                frequency_feature: None,
            },
        ])
        .unwrap()
    }

    fn episode(hr: &[f64], labs: &[(u32, f64)]) -> Episode {
        Episode {
            stay_id: "s".into(),
            patient_id: "p".into(),
            subgroup_tags: BTreeSet::new(),
            series: vec![
                SourceSeries::from_points(
                    1,
                    hr.iter()
                        .enumerate()
                        .map(|(i, &v)| TimePoint::new(i as f64, vec![Some(v)], vec![]))
                        .collect(),
                ),
                SourceSeries::from_points(
                    2,
                    labs.iter()
                        .enumerate()
                        .map(|(i, &(d, v))| TimePoint::new(i as f64, vec![Some(v)], vec![d]))
                        .collect(),
                ),
            ],
            target_track: vec![],
        }
    }

    /// Full-sort type-7 quantile, independent of the selection path.
    fn sorted_quantile(values: &[f64], p: f64) -> f64 {
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let h = (v.len() - 1) as f64 * p;
        let lo = h.floor() as usize;
        let hi = (lo + 1).min(v.len() - 1);
        v[lo] + (h - lo as f64) * (v[hi] - v[lo])
    }

    #[test]
    fn population_std_of_one_two_three() {
        let s = schema();
        let st = fit_normalizer(&s, [&episode(&[1.0, 2.0, 3.0], &[])], "train");
        let e = &st.entries[0];
        assert_eq!(e.mean, 2.0);
        assert!((e.std - 0.816_496_580_927_726).abs() < 1e-12);
        assert!(!e.degenerate);
    }

    #[test]
    fn constant_feature_is_flagged() {
        let s = schema();
        let st = fit_normalizer(&s, [&episode(&[5.0, 5.0, 5.0], &[])], "train");
        assert_eq!((st.entries[0].mean, st.entries[0].std), (5.0, 0.0));
        assert!(st.entries[0].degenerate);
        let n = Normalizer::new(st, &s).unwrap();
        let p = TimePoint::new(0.0, vec![Some(7.0)], vec![]);
        assert_eq!(n.normalize_value(&s.sources[0], 0, &p), 0.0);
    }

    #[test]
    fn single_observation_is_flagged() {
        let s = schema();
        let st = fit_normalizer(&s, [&episode(&[4.0], &[])], "train");
        assert!(st.entries[0].degenerate);
        assert_eq!(st.entries[0].std, 0.0);
    }

    #[test]
    fn quantiles_match_sort_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let values: Vec<f64> = (0..10_000)
            .map(|_| {
                let u: f64 = rng.random();
                -(1.0 - u).ln() * 3.0
            })
            .collect();
        for p in [0.0005, 0.9995, 0.5, 0.0, 1.0] {
            let mut v = values.clone();
            assert_eq!(quantile(&mut v, p), sorted_quantile(&values, p), "p = {p}");
        }
    }

    #[test]
    fn lab_stats_are_per_dimension_and_outliers_drop() {
        let s = schema();
        let mut labs: Vec<(u32, f64)> = (0..4000).map(|i| (2, 100.0 + (i % 50) as f64)).collect();
        labs.extend((0..4000).map(|i| (3, 4.0 + (i % 10) as f64 * 0.1)));
        labs.push((2, 1.0e6));
        let ep = episode(&[], &labs);
        let st = fit_normalizer(&s, [&ep], "train");
        assert_eq!(st.entries.len(), 2);
        let a = st.entries.iter().find(|e| e.dimension.as_deref() == Some("a")).unwrap();
        assert!(a.high.unwrap() < 1.0e6);
        assert!(a.mean < 200.0, "outlier leaked into mean: {}", a.mean);
        let n = Normalizer::new(st, &s).unwrap();
        let cleaned = n.remove_outliers(&s.sources[1], &ep.series[1]);
        assert_eq!(cleaned.len(), ep.series[1].len() - 1);
        assert!(cleaned.time_points.iter().all(|p| p.numeric[0] != Some(1.0e6)));
        // the vitals source is never filtered
        let v = episode(&[1.0, 1.0e9], &[]);
        assert_eq!(n.remove_outliers(&s.sources[0], &v.series[0]).len(), 2);
    }

    #[test]
    fn missing_and_mean_map_to_zero() {
        let s = schema();
        let st = fit_normalizer(&s, [&episode(&[1.0, 2.0, 3.0], &[])], "train");
        let n = Normalizer::new(st, &s).unwrap();
        let at_mean = TimePoint::new(0.0, vec![Some(2.0)], vec![]);
        let missing = TimePoint::new(0.0, vec![None], vec![]);
        assert_eq!(n.normalize_value(&s.sources[0], 0, &at_mean), 0.0);
        assert_eq!(n.normalize_value(&s.sources[0], 0, &missing), 0.0);
    }

    #[test]
    fn state_json_roundtrip() {
        let s = schema();
        let st = fit_normalizer(&s, [&episode(&[1.0, 2.0, 3.0], &[(2, 1.0), (2, 3.0)])], "train");
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("norm.json");
        st.save(&path).unwrap();
        assert_eq!(NormalizerState::load(&path).unwrap(), st);
    }

    #[test]
    fn refitting_on_output_is_standard() {
        let s = schema();
        let raw = [3.0, 9.0, 4.0, 11.0, 2.5];
        let st = fit_normalizer(&s, [&episode(&raw, &[])], "train");
        let n = Normalizer::new(st, &s).unwrap();
        let ep = episode(&raw, &[]);
        let z: Vec<f64> = ep.series[0]
            .time_points
            .iter()
            .map(|p| n.normalize_value(&s.sources[0], 0, p))
            .collect();
        let refit = fit_normalizer(&s, [&episode(&z, &[])], "train");
        assert!(refit.entries[0].mean.abs() < 1e-12);
        assert!((refit.entries[0].std - 1.0).abs() < 1e-12);
        // a second pass with the original state is not the identity
        let twice: Vec<f64> = z
            .iter()
            .map(|&v| n.normalize_value(&s.sources[0], 0, &TimePoint::new(0.0, vec![Some(v)], vec![])))
            .collect();
        assert!(twice.iter().zip(&z).any(|(a, b)| (a - b).abs() > 1e-6));
    }

    proptest! {
        #[test]
        fn normalize_roundtrip(values in proptest::collection::vec(-1e3f64..1e3, 2..40), probe in -1e4f64..1e4) {
            let s = schema();
            let st = fit_normalizer(&s, [&episode(&values, &[])], "train");
            prop_assume!(st.entries[0].std > 0.0);
            let n = Normalizer::new(st, &s).unwrap();
            let p = TimePoint::new(0.0, vec![Some(probe)], vec![]);
            let z = n.normalize_value(&s.sources[0], 0, &p);
            let back = n.denormalize_value(&s.sources[0], 0, &p, z).unwrap();
            prop_assert!((back - probe).abs() <= 1e-9 * probe.abs().max(1.0));
        }
    }
}
