use crate::data::{build_examples, Cohort, Episode, LabeledExample};
use crate::eval::ScoredExample;
use crate::model::Mitst;
use crate::preprocess::{ModelInput, Preprocessor};
use crate::error::Result;

/// Labelled examples whose inputs are built on demand.
pub trait Dataset {
    fn len(&self) -> usize;
    fn label(&self, i: usize) -> usize;
    fn input(&self, i: usize) -> ModelInput;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn labels(&self) -> Vec<usize> {
        (0..self.len()).map(|i| self.label(i)).collect()
    }
}

/// Precomputed inputs, mainly for tests and small tasks.
#[derive(Debug, Clone, Default)]
pub struct InMemoryDataset {
    pub inputs: Vec<ModelInput>,
    pub labels: Vec<usize>,
}

impl Dataset for InMemoryDataset {
    fn len(&self) -> usize {
        self.inputs.len()
    }

    fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    fn input(&self, i: usize) -> ModelInput {
        self.inputs[i].clone()
    }
}

/// Another dataset with every label passed through `map`, for derived
/// tasks such as one class against the rest.
pub struct Relabeled<'a> {
    pub inner: &'a dyn Dataset,
    pub map: fn(usize) -> usize,
}

impl Dataset for Relabeled<'_> {
    fn len(&self) -> usize {
        self.inner.len()
    }

    fn label(&self, i: usize) -> usize {
        (self.map)(self.inner.label(i))
    }

    fn input(&self, i: usize) -> ModelInput {
        self.inner.input(i)
    }
}

/// Examples of a subset of a cohort's episodes, preprocessed lazily with a
/// fitted [`Preprocessor`].
#[derive(Debug, Clone)]
pub struct CohortDataset {
    pub preprocessor: Preprocessor,
    /// Medication-expanded episodes, in the order of `episode_indices`.
    pub episodes: Vec<Episode>,
    pub episode_indices: Vec<usize>,
    pub examples: Vec<LabeledExample>,
    /// Position in `episodes` for each example.
    positions: Vec<usize>,
}

impl CohortDataset {
    pub fn new(preprocessor: Preprocessor, cohort: &Cohort, episode_indices: &[usize]) -> Self {
        let mut episodes = Vec::with_capacity(episode_indices.len());
        let mut examples = Vec::new();
        let mut positions = Vec::new();
        for (pos, &i) in episode_indices.iter().enumerate() {
            let raw = &cohort.episodes[i];
            let ex = build_examples(raw, i);
            positions.extend(std::iter::repeat_n(pos, ex.len()));
            examples.extend(ex);
            episodes.push(preprocessor.expand(raw));
        }
        CohortDataset {
            preprocessor,
            episodes,
            episode_indices: episode_indices.to_vec(),
            examples,
            positions,
        }
    }

    pub fn episode_of(&self, i: usize) -> &Episode {
        &self.episodes[self.positions[i]]
    }

    /// Pairs model probabilities with the example metadata.
    pub fn scored(&self, probabilities: Vec<Vec<f64>>) -> Vec<ScoredExample> {
        assert_eq!(probabilities.len(), self.examples.len(), "one score vector per example");
        probabilities
            .into_iter()
            .zip(&self.examples)
            .enumerate()
            .map(|(i, (scores, e))| ScoredExample {
                scores,
                true_class: e.label.index(),
                horizon_minutes: e.horizon_minutes,
                next_target_value: e.next_target_value,
                current_value: e.current_value,
                subgroup_tags: self.episode_of(i).subgroup_tags.iter().cloned().collect(),
            })
            .collect()
    }

    /// Indices of examples whose input holds a time point past the cutoff.
    /// Empty for a correct pipeline.
    pub fn leaking_examples(&self) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| self.input(i).max_offset() > self.examples[i].cutoff_offset)
            .collect()
    }

    /// Scores every example with `model` in evaluation mode.
    pub fn score(&self, model: &Mitst) -> Result<Vec<ScoredExample>> {
        let probs = predict_probabilities(model, self)?;
        Ok(self.scored(probs))
    }
}

impl Dataset for CohortDataset {
    fn len(&self) -> usize {
        self.examples.len()
    }

    fn label(&self, i: usize) -> usize {
        self.examples[i].label.index()
    }

    fn input(&self, i: usize) -> ModelInput {
        self.preprocessor
            .example_input(self.episode_of(i), self.examples[i].cutoff_offset)
    }
}

/// Evaluation-mode class probabilities for every example.
pub fn predict_probabilities(model: &Mitst, data: &dyn Dataset) -> Result<Vec<Vec<f64>>> {
    (0..data.len())
        .map(|i| model.predict(&data.input(i)).map(|p| p.probabilities))
        .collect()
}
