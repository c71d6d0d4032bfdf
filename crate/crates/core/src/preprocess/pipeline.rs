use serde::{Deserialize, Serialize};

use super::medication::{expand_medications, FrequencyTable};
use super::normalizer::{fit_normalizer, Normalizer, NormalizerState};
use super::series::{placeholder_missing_source, truncate_series, MAX_SEQ_LEN};
use crate::data::{CohortSchema, Episode, SourceSeries};
use crate::error::Result;

/// Normalized, dense view of one source as consumed by the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceInput {
    pub source_id: usize,
    /// Whether the source had real data (false for a placeholder).
    pub present: bool,
    pub offsets: Vec<f64>,
    /// Row-major `T x n_m` z-scores; missing values are 0.
    pub numeric: Vec<f64>,
    /// Row-major `T x c_m` category ids.
    pub categorical: Vec<u32>,
}

impl SourceInput {
    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }
}

/// One example's input: exactly one entry per schema source, in order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelInput {
    pub sources: Vec<SourceInput>,
}

impl ModelInput {
    pub fn max_offset(&self) -> f64 {
        self.sources
            .iter()
            .filter(|s| s.present)
            .flat_map(|s| s.offsets.iter().copied())
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Applies the full per-example pipeline with a fitted normalizer.
#[derive(Debug, Clone)]
pub struct Preprocessor {
    pub schema: CohortSchema,
    pub normalizer: Normalizer,
    pub frequencies: FrequencyTable,
    pub max_seq_len: usize,
}

/// Medication expansion for every source of an episode.
pub fn expand_episode(schema: &CohortSchema, episode: &Episode, frequencies: &FrequencyTable) -> Episode {
    let series = episode
        .series
        .iter()
        .zip(&schema.sources)
        .map(|(s, src)| expand_medications(src, s, frequencies))
        .collect();
    Episode {
        series,
        ..episode.clone()
    }
}

impl Preprocessor {
    pub fn new(schema: CohortSchema, state: NormalizerState, frequencies: FrequencyTable) -> Result<Self> {
        let normalizer = Normalizer::new(state, &schema)?;
        Ok(Preprocessor {
            schema,
            normalizer,
            frequencies,
            max_seq_len: MAX_SEQ_LEN,
        })
    }

    /// Expands the training episodes and fits the normalizer on them.
    pub fn fit<'a>(
        schema: CohortSchema,
        train_episodes: impl IntoIterator<Item = &'a Episode>,
        frequencies: FrequencyTable,
    ) -> Result<Self> {
        let expanded: Vec<Episode> = train_episodes
            .into_iter()
            .map(|e| expand_episode(&schema, e, &frequencies))
            .collect();
        let state = fit_normalizer(&schema, &expanded, "train");
        Self::new(schema, state, frequencies)
    }

    pub fn expand(&self, episode: &Episode) -> Episode {
        expand_episode(&self.schema, episode, &self.frequencies)
    }

    /// cutoff view, outlier removal, truncation, placeholder, z-scoring.
    pub fn source_input(&self, source_index: usize, expanded: &SourceSeries, cutoff: f64) -> SourceInput {
        let schema = &self.schema.sources[source_index];
        let view = expanded.view_until(cutoff);
        let cleaned = self.normalizer.remove_outliers(schema, &view);
        let truncated = truncate_series(&cleaned, self.max_seq_len);
        let filled = placeholder_missing_source(schema, &truncated);
        let n = schema.n_numeric();
        let c = schema.n_categorical();
        let t = filled.len();
        let mut out = SourceInput {
            source_id: schema.source_id,
            present: filled.present,
            offsets: Vec::with_capacity(t),
            numeric: Vec::with_capacity(t * n),
            categorical: Vec::with_capacity(t * c),
        };
        for p in &filled.time_points {
            out.offsets.push(p.offset_minutes);
            out.numeric
                .extend((0..n).map(|j| self.normalizer.normalize_value(schema, j, p)));
            out.categorical.extend_from_slice(&p.categorical);
        }
        out
    }

    /// Input for the example of `expanded` (already medication-expanded)
    /// whose current target measurement is at `cutoff`.
    pub fn example_input(&self, expanded: &Episode, cutoff: f64) -> ModelInput {
        ModelInput {
            sources: expanded
                .series
                .iter()
                .enumerate()
                .map(|(m, s)| self.source_input(m, s, cutoff))
                .collect(),
        }
    }
}
