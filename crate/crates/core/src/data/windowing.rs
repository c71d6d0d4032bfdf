use serde::{Deserialize, Serialize};

use super::episode::Episode;
use super::labels::{classify_target, GlycemicClass, NUM_CLASSES};

/// Shortest admissible gap to the next target measurement, minutes.
pub const MIN_HORIZON_MINUTES: f64 = 5.0;
/// Longest admissible gap to the next target measurement, minutes.
pub const MAX_HORIZON_MINUTES: f64 = 600.0;
/// Target measurements required up to and including the current one.
pub const MIN_HISTORY: usize = 5;

/// An episode prefix ending at a target measurement, labelled with the class
/// of the following measurement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledExample {
    /// Index of the episode in its cohort.
    pub episode_index: usize,
    pub stay_id: String,
    /// Offset of the current target measurement; inputs never extend past it.
    pub cutoff_offset: f64,
    pub current_value: f64,
    pub label: GlycemicClass,
    pub horizon_minutes: f64,
    pub next_target_value: f64,
}

impl LabeledExample {
    pub fn one_hot(&self) -> [f64; NUM_CLASSES] {
        self.label.one_hot()
    }

    pub fn current_class(&self) -> GlycemicClass {
        classify_target(self.current_value).expect("validated target track")
    }
}

/// One example per target measurement that has at least four earlier
/// measurements (five including itself) and a successor 5 to 600 minutes later.
pub fn build_examples(episode: &Episode, episode_index: usize) -> Vec<LabeledExample> {
    let track = &episode.target_track;
    let mut out = Vec::new();
    if track.len() < MIN_HISTORY + 1 {
        return out;
    }
    for k in (MIN_HISTORY - 1)..(track.len() - 1) {
        let current = track[k];
        let next = track[k + 1];
        let gap = next.offset_minutes - current.offset_minutes;
        if !(MIN_HORIZON_MINUTES..=MAX_HORIZON_MINUTES).contains(&gap) {
            continue;
        }
        let Ok(label) = classify_target(next.value) else {
            continue;
        };
        out.push(LabeledExample {
            episode_index,
            stay_id: episode.stay_id.clone(),
            cutoff_offset: current.offset_minutes,
            current_value: current.value,
            label,
            horizon_minutes: gap,
            next_target_value: next.value,
        });
    }
    out
}

/// Examples of every episode in `episodes`, tagged with their positions.
pub fn build_cohort_examples<'a>(
    episodes: impl IntoIterator<Item = (usize, &'a Episode)>,
) -> Vec<LabeledExample> {
    episodes
        .into_iter()
        .flat_map(|(i, e)| build_examples(e, i))
        .collect()
}
