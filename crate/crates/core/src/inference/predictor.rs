use std::path::Path;

use crate::data::{CohortSchema, Episode, GlycemicClass, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::model::{checkpoint, Mitst, Prediction};
use crate::preprocess::{FrequencyTable, NormalizerState, Preprocessor};

use super::request::{PredictRequest, PredictResponse, SourceWeight};

/// File names inside a model bundle directory.
pub const MODEL_FILE: &str = "model.ckpt";
pub const SCHEMA_FILE: &str = "schema.json";
pub const NORMALIZER_FILE: &str = "normalizer.json";
pub const FREQUENCIES_FILE: &str = "frequencies.json";
pub const TEMPLATES_FILE: &str = "templates.json";
pub const BOUNDS_FILE: &str = "bounds.json";

/// Writes everything [`Predictor::load`] reads and returns the checkpoint
/// hash. Creates `dir` if needed.
pub fn save_bundle(dir: &Path, model: &Mitst, preprocessor: &Preprocessor) -> Result<String> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    preprocessor.schema.save(&dir.join(SCHEMA_FILE))?;
    preprocessor.normalizer.state().save(&dir.join(NORMALIZER_FILE))?;
    preprocessor.frequencies.save(&dir.join(FREQUENCIES_FILE))?;
    checkpoint::save(model, &dir.join(MODEL_FILE))
}

/// A loaded model with the exact preprocessing it was trained with. Shared
/// read-only by the CLI and the service so both produce identical numbers.
#[derive(Debug, Clone)]
pub struct Predictor {
    model: Mitst,
    preprocessor: Preprocessor,
    model_hash: String,
    config_hash: String,
}

impl Predictor {
    pub fn new(model: Mitst, preprocessor: Preprocessor, model_hash: String) -> Result<Self> {
        let cfg = model.config();
        let schema = &preprocessor.schema;
        if cfg.sources.len() != schema.n_sources() {
            return Err(Error::Shape {
                context: "predictor".into(),
                detail: format!("model has {} sources, schema {}", cfg.sources.len(), schema.n_sources()),
            });
        }
        for (spec, src) in cfg.sources.iter().zip(&schema.sources) {
            let vocab: Vec<usize> = src.categorical_features.iter().map(|f| f.vocabulary.len()).collect();
            if spec.n_numeric != src.n_numeric() || spec.vocab_sizes != vocab {
                return Err(Error::Shape {
                    context: format!("predictor source `{}`", src.source_name),
                    detail: "model and schema feature inventories differ".into(),
                });
            }
        }
        if cfg.n_classes != NUM_CLASSES {
            return Err(Error::Shape {
                context: "predictor".into(),
                detail: format!("expected a {NUM_CLASSES}-class head, got {}", cfg.n_classes),
            });
        }
        let config_hash = cfg.hash();
        Ok(Predictor {
            model,
            preprocessor,
            model_hash,
            config_hash,
        })
    }

    /// Loads `model.ckpt`, `schema.json`, `normalizer.json` and
    /// `frequencies.json` from a bundle directory.
    pub fn load(dir: &Path) -> Result<Self> {
        let ckpt = dir.join(MODEL_FILE);
        let model = checkpoint::load(&ckpt)?;
        let model_hash = checkpoint::file_hash(&ckpt)?;
        let schema = CohortSchema::load(&dir.join(SCHEMA_FILE))?;
        let state = NormalizerState::load(&dir.join(NORMALIZER_FILE))?;
        let frequencies = FrequencyTable::load(&dir.join(FREQUENCIES_FILE))?;
        Self::new(model, Preprocessor::new(schema, state, frequencies)?, model_hash)
    }

    pub fn model(&self) -> &Mitst {
        &self.model
    }

    pub fn preprocessor(&self) -> &Preprocessor {
        &self.preprocessor
    }

    pub fn schema(&self) -> &CohortSchema {
        &self.preprocessor.schema
    }

    pub fn model_hash(&self) -> &str {
        &self.model_hash
    }

    pub fn config_hash(&self) -> &str {
        &self.config_hash
    }

    /// Prediction for a raw (unexpanded) episode at `cutoff`.
    pub fn predict_episode(&self, raw: &Episode, cutoff: f64) -> Result<PredictResponse> {
        let expanded = self.preprocessor.expand(raw);
        let input = self.preprocessor.example_input(&expanded, cutoff);
        Ok(self.response(self.model.predict(&input)?))
    }

    pub fn predict(&self, request: &PredictRequest) -> Result<PredictResponse> {
        let (episode, cutoff) = request.to_episode(self.schema())?;
        self.predict_episode(&episode, cutoff)
    }

    fn response(&self, p: Prediction) -> PredictResponse {
        let idx = p.argmax();
        PredictResponse {
            classes: GlycemicClass::ALL.iter().map(|c| c.name().to_string()).collect(),
            predicted_class: GlycemicClass::ALL[idx].name().to_string(),
            predicted_index: idx,
            probabilities: p.probabilities,
            fusion_weights: self
                .schema()
                .sources
                .iter()
                .zip(p.alpha)
                .map(|(s, weight)| SourceWeight {
                    source: s.source_name.clone(),
                    weight,
                })
                .collect(),
            model_hash: self.model_hash.clone(),
            config_hash: self.config_hash.clone(),
        }
    }
}
