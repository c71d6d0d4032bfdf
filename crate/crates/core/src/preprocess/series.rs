use crate::data::{SourceSchema, SourceSeries, TimePoint};

pub const MAX_SEQ_LEN: usize = 512;
/// Timestamp given to the placeholder point of an absent source.
pub const PLACEHOLDER_OFFSET: f64 = 0.0;

/// Keeps the `max_len` most recent time points.
pub fn truncate_series(series: &SourceSeries, max_len: usize) -> SourceSeries {
    let n = series.len();
    if n <= max_len {
        return series.clone();
    }
    SourceSeries {
        source_id: series.source_id,
        present: series.present,
        time_points: series.time_points[n - max_len..].to_vec(),
    }
}

/// A source without data becomes one point whose categoricals are all
/// `absent-source` and whose numerics are all missing.
pub fn placeholder_missing_source(schema: &SourceSchema, series: &SourceSeries) -> SourceSeries {
    if series.present && !series.is_empty() {
        return series.clone();
    }
    let point = TimePoint::new(
        PLACEHOLDER_OFFSET,
        vec![None; schema.n_numeric()],
        schema
            .categorical_features
            .iter()
            .map(|c| c.absent_id())
            .collect(),
    );
    SourceSeries {
        source_id: series.source_id,
        present: false,
        time_points: vec![point],
    }
}
