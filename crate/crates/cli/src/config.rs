//! Run configuration: one TOML or JSON document whose sections mirror the
//! library configs, plus `--set section.field=value` overrides.

use std::path::Path;

use anyhow::{anyhow, Context};
use mitst_core::data::{CohortSchema, SplitFractions};
use mitst_core::eval::{DEFAULT_BOOTSTRAP, DEFAULT_PERMUTATIONS};
use mitst_core::model::ModelConfig;
use mitst_core::synth::{synthetic_schema, GeneratorConfig};
use mitst_core::train::TrainConfig;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::UsageError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Drives generation, splitting, initialisation, sampling and resampling.
    pub seed: u64,
    pub generator: GeneratorConfig,
    pub split: SplitFractions,
    pub model: ModelSettings,
    pub train: TrainConfig,
    pub eval: EvalSettings,
    pub finetune: FinetuneSettings,
    pub serve: ServeSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            generator: GeneratorConfig::default(),
            split: SplitFractions::default(),
            model: ModelSettings::default(),
            train: TrainConfig::default(),
            eval: EvalSettings::default(),
            finetune: FinetuneSettings::default(),
            serve: ServeSettings::default(),
        }
    }
}

/// Architecture hyperparameters; the per-source inventory comes from the
/// cohort schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSettings {
    pub depth: usize,
    pub heads: usize,
    pub head_dim: usize,
    pub joint_dim: usize,
    pub mult: usize,
    pub fusion_dim: usize,
    pub dropout: f64,
    pub max_seq_len: usize,
    pub time_period_min: f64,
    pub time_period_max: f64,
}

impl Default for ModelSettings {
    fn default() -> Self {
        let c = ModelConfig::for_schema(&synthetic_schema());
        ModelSettings {
            depth: c.depth,
            heads: c.heads,
            head_dim: c.head_dim,
            joint_dim: c.joint_dim,
            mult: c.mult,
            fusion_dim: c.fusion_dim,
            dropout: c.dropout,
            max_seq_len: c.max_seq_len,
            time_period_min: c.time_period_min,
            time_period_max: c.time_period_max,
        }
    }
}

impl ModelSettings {
    pub fn model_config(&self, schema: &CohortSchema, seed: u64) -> ModelConfig {
        ModelConfig {
            depth: self.depth,
            heads: self.heads,
            head_dim: self.head_dim,
            joint_dim: self.joint_dim,
            mult: self.mult,
            fusion_dim: self.fusion_dim,
            dropout: self.dropout,
            max_seq_len: self.max_seq_len,
            time_period_min: self.time_period_min,
            time_period_max: self.time_period_max,
            init_seed: seed,
            ..ModelConfig::for_schema(schema)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSettings {
    pub bootstrap_resamples: usize,
    pub permutations: usize,
    pub confidence_intervals: bool,
    /// Flagged fractions for the hypoglycemia risk curves.
    pub hypo_fractions: Vec<f64>,
    /// Flagged fractions for the hyperglycemia risk curves.
    pub hyper_fractions: Vec<f64>,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings {
            bootstrap_resamples: DEFAULT_BOOTSTRAP,
            permutations: DEFAULT_PERMUTATIONS,
            confidence_intervals: true,
            hypo_fractions: steps(0.01, 10),
            hyper_fractions: steps(0.03, 10),
        }
    }
}

fn steps(step: f64, n: usize) -> Vec<f64> {
    (1..=n).map(|k| (k as f64 * step * 1e6).round() / 1e6).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinetuneTask {
    HyperVsRest,
    HypoVsRest,
    /// The original three classes on a fresh cohort.
    Glycemic,
}

impl FinetuneTask {
    pub fn n_classes(self) -> usize {
        match self {
            FinetuneTask::Glycemic => 3,
            _ => 2,
        }
    }

    pub fn relabel(self) -> fn(usize) -> usize {
        match self {
            FinetuneTask::HyperVsRest => |c| usize::from(c == 2),
            FinetuneTask::HypoVsRest => |c| usize::from(c == 0),
            FinetuneTask::Glycemic => |c| c,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FinetuneSettings {
    pub task: FinetuneTask,
    /// Patients in the second cohort, generated with seed + 1.
    pub n_patients: usize,
    /// Groups held fixed; when absent, every per-source group.
    pub freeze: Option<Vec<String>>,
    pub epochs: usize,
    pub learning_rate: f64,
}

impl Default for FinetuneSettings {
    fn default() -> Self {
        FinetuneSettings {
            task: FinetuneTask::HyperVsRest,
            n_patients: 300,
            freeze: None,
            epochs: 10,
            learning_rate: TrainConfig::default().learning_rate,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServeSettings {
    pub host: String,
    pub port: u16,
}

impl Default for ServeSettings {
    fn default() -> Self {
        ServeSettings {
            host: "127.0.0.1".into(),
            port: 8080,
        }
    }
}

/// Seed fields inside sections would silently disagree with `seed`.
const SECTION_SEEDS: [&str; 2] = ["generator.seed", "train.seed"];

impl RunConfig {
    /// Reads `path` (TOML unless the extension is `.json`), applies the
    /// overrides and an optional seed, and validates the result.
    pub fn load(path: Option<&Path>, overrides: &[String], seed: Option<u64>) -> anyhow::Result<Self> {
        let doc = match path {
            Some(p) => read_document(p)?,
            None => Value::Object(Default::default()),
        };
        for key in SECTION_SEEDS {
            if lookup(&doc, key).is_some() {
                return Err(UsageError::new(format!("`{key}` is not configurable; set the top-level `seed`")).into());
            }
        }
        // Overrides address the full document, so start from the defaults.
        let mut full = serde_json::to_value(RunConfig::default())?;
        merge(&mut full, doc.clone());
        for o in overrides {
            apply_override(&mut full, o)?;
        }
        if let Some(s) = seed {
            full["seed"] = s.into();
        }
        let mut cfg: RunConfig = serde_path_to_error::deserialize(full)
            .map_err(|e| UsageError::new(format!("config field `{}`: {}", e.path(), e.inner())))?;
        // Library sections ignore unknown keys; catch typos here.
        if let Some(key) = unknown_key(&doc, &serde_json::to_value(&cfg)?, "") {
            return Err(UsageError::new(format!("config field `{key}`: unknown key")).into());
        }
        cfg.generator.seed = cfg.seed;
        cfg.train.seed = cfg.seed;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        let usage = |section: &str, e: mitst_core::Error| UsageError::new(format!("config section `{section}`: {e}"));
        self.generator.validate().map_err(|e| usage("generator", e))?;
        self.split.validate().map_err(|e| usage("split", e))?;
        self.train.validate().map_err(|e| usage("train", e))?;
        self.model
            .model_config(&synthetic_schema(), self.seed)
            .validate()
            .map_err(|e| usage("model", e))?;
        if self.finetune.epochs == 0 || !(self.finetune.learning_rate > 0.0) {
            return Err(UsageError::new("config section `finetune`: epochs and learning_rate must be positive").into());
        }
        Ok(())
    }

    /// Hex sha256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }

    /// The resolved config without the section seeds or unset options,
    /// loadable as a file.
    pub fn display_document(&self) -> Value {
        let mut doc = serde_json::to_value(self).expect("config serializes");
        drop_nulls(&mut doc);
        for key in SECTION_SEEDS {
            let (section, field) = key.split_once('.').expect("dotted");
            if let Some(o) = doc.get_mut(section).and_then(Value::as_object_mut) {
                o.remove(field);
            }
        }
        doc
    }

    pub fn finetune_train(&self, freeze: Vec<String>) -> TrainConfig {
        TrainConfig {
            epochs: self.finetune.epochs,
            learning_rate: self.finetune.learning_rate,
            freeze,
            ..self.train.clone()
        }
    }
}

fn read_document(path: &Path) -> anyhow::Result<Value> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| UsageError::new(format!("cannot read config {}: {e}", path.display())))?;
    let parsed = if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str::<Value>(&text).map_err(|e| anyhow!(e.to_string()))
    } else {
        toml::from_str::<Value>(&text).map_err(|e| anyhow!(e.to_string()))
    };
    let doc = parsed.map_err(|e| UsageError::new(format!("config {}: {e}", path.display())))?;
    if !doc.is_object() {
        return Err(UsageError::new(format!("config {}: expected a table at the top level", path.display())).into());
    }
    Ok(doc)
}

fn lookup<'a>(doc: &'a Value, dotted: &str) -> Option<&'a Value> {
    dotted.split('.').try_fold(doc, |v, k| v.get(k))
}

fn drop_nulls(v: &mut Value) {
    if let Value::Object(o) = v {
        o.retain(|_, x| !x.is_null());
        o.values_mut().for_each(drop_nulls);
    }
}

/// First key path in `doc` that `known` lacks.
fn unknown_key(doc: &Value, known: &Value, prefix: &str) -> Option<String> {
    let (Value::Object(d), Value::Object(k)) = (doc, known) else {
        return None;
    };
    d.iter().find_map(|(key, v)| {
        let path = if prefix.is_empty() { key.clone() } else { format!("{prefix}.{key}") };
        match k.get(key) {
            None => Some(path),
            Some(kv) => unknown_key(v, kv, &path),
        }
    })
}

/// Deep-merges objects; anything else in `patch` replaces `base`. Unknown
/// keys are kept so deserialization can reject them by path.
fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// `section.field=value`. The value is read as JSON when it parses (numbers,
/// booleans, arrays) and as a string otherwise. Only existing keys can be set.
fn apply_override(doc: &mut Value, text: &str) -> anyhow::Result<()> {
    let (key, raw) = text
        .split_once('=')
        .ok_or_else(|| UsageError::new(format!("override `{text}` is not key=value")))?;
    let key = key.trim();
    if SECTION_SEEDS.contains(&key) {
        return Err(UsageError::new(format!("`{key}` is not configurable; use --seed")).into());
    }
    let mut slot = &mut *doc;
    for part in key.split('.') {
        slot = slot
            .as_object_mut()
            .and_then(|o| o.get_mut(part))
            .ok_or_else(|| UsageError::new(format!("override `{key}`: unknown config key")))?;
    }
    *slot = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    Ok(())
}

/// Reads a JSON artifact written by an earlier command.
pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}
