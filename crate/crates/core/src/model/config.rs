use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::CohortSchema;
use crate::error::{Error, Result};

/// Feature inventory of one source as seen by the network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceSpec {
    pub name: String,
    pub n_numeric: usize,
    /// Vocabulary size of each categorical feature, reserved ids included.
    pub vocab_sizes: Vec<usize>,
    /// Token width d'_m of this source.
    pub embed_width: usize,
}

impl SourceSpec {
    pub fn n_features(&self) -> usize {
        self.n_numeric + self.vocab_sizes.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub depth: usize,
    pub heads: usize,
    pub head_dim: usize,
    pub joint_dim: usize,
    pub mult: usize,
    pub fusion_dim: usize,
    pub dropout: f64,
    pub n_classes: usize,
    pub max_seq_len: usize,
    pub time_period_min: f64,
    pub time_period_max: f64,
    pub init_seed: u64,
    pub sources: Vec<SourceSpec>,
}

impl ModelConfig {
    /// Default hyperparameters for the given cohort schema.
    pub fn for_schema(schema: &CohortSchema) -> Self {
        ModelConfig {
            depth: 4,
            heads: 8,
            head_dim: 8,
            joint_dim: 32,
            mult: 2,
            fusion_dim: 32,
            dropout: 0.1,
            n_classes: 3,
            max_seq_len: 512,
            time_period_min: 2.0,
            time_period_max: 100_000.0,
            init_seed: 0,
            sources: schema
                .sources
                .iter()
                .map(|s| SourceSpec {
                    name: s.source_name.clone(),
                    n_numeric: s.n_numeric(),
                    vocab_sizes: s.categorical_features.iter().map(|c| c.vocabulary.len()).collect(),
                    embed_width: s.embed_width,
                })
                .collect(),
        }
    }

    pub fn attention_width(&self) -> usize {
        self.heads * self.head_dim
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("heads", self.heads),
            ("head_dim", self.head_dim),
            ("joint_dim", self.joint_dim),
            ("mult", self.mult),
            ("fusion_dim", self.fusion_dim),
            ("n_classes", self.n_classes),
            ("max_seq_len", self.max_seq_len),
        ];
        for (field, v) in positive {
            if v == 0 {
                return Err(Error::schema(field, "must be positive"));
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::schema("dropout", "must lie in [0, 1)"));
        }
        if !(self.time_period_min > 0.0 && self.time_period_max >= self.time_period_min) {
            return Err(Error::schema("time_period_min", "need 0 < min <= max"));
        }
        if self.sources.is_empty() {
            return Err(Error::schema("sources", "at least one source is required"));
        }
        for (i, s) in self.sources.iter().enumerate() {
            if s.embed_width == 0 || s.embed_width % 2 != 0 {
                return Err(Error::schema(format!("sources[{i}].embed_width"), "must be positive and even"));
            }
            if s.vocab_sizes.iter().any(|&v| v == 0) {
                return Err(Error::schema(format!("sources[{i}].vocab_sizes"), "empty vocabulary"));
            }
        }
        Ok(())
    }

    /// Hex sha256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(json))
    }
}
