use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Reserved category for a missing categorical value.
pub const UNKNOWN: &str = "unknown";
/// Reserved category used by placeholder time points of an absent source.
pub const ABSENT_SOURCE: &str = "absent-source";

/// How the preprocessing pipeline treats a source.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    #[default]
    General,
    /// Quantile outlier removal applies to its numeric values.
    Lab,
    /// Records carry a frequency category and a stop offset and are repeated.
    Medication,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoricalFeature {
    pub name: String,
    /// Category names; the reserved `unknown` and `absent-source` entries are
    /// always present exactly once.
    pub vocabulary: Vec<String>,
}

impl CategoricalFeature {
    /// Builds a feature whose vocabulary starts with the two reserved
    /// categories followed by `categories` (duplicates and reserved names
    /// are skipped).
    pub fn new<S: AsRef<str>>(name: impl Into<String>, categories: &[S]) -> Self {
        let mut vocabulary = vec![UNKNOWN.to_string(), ABSENT_SOURCE.to_string()];
        for c in categories {
            let c = c.as_ref();
            if !vocabulary.iter().any(|v| v == c) {
                vocabulary.push(c.to_string());
            }
        }
        CategoricalFeature {
            name: name.into(),
            vocabulary,
        }
    }

    pub fn id_of(&self, category: &str) -> Option<u32> {
        self.vocabulary
            .iter()
            .position(|v| v == category)
            .map(|p| p as u32)
    }

    /// Category id, falling back to `unknown` for unseen or empty values.
    pub fn id_or_unknown(&self, category: &str) -> u32 {
        if category.is_empty() {
            return self.unknown_id();
        }
        self.id_of(category).unwrap_or_else(|| self.unknown_id())
    }

    pub fn unknown_id(&self) -> u32 {
        self.id_of(UNKNOWN).expect("validated vocabulary")
    }

    pub fn absent_id(&self) -> u32 {
        self.id_of(ABSENT_SOURCE).expect("validated vocabulary")
    }

    pub fn name_of(&self, id: u32) -> Option<&str> {
        self.vocabulary.get(id as usize).map(String::as_str)
    }
}

/// Feature inventory of one data source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceSchema {
    /// 1-based index, contiguous across the cohort schema.
    pub source_id: usize,
    pub source_name: String,
    #[serde(default)]
    pub kind: SourceKind,
    pub numeric_features: Vec<String>,
    pub categorical_features: Vec<CategoricalFeature>,
    /// Embedding width d'_m used by this source's transformers.
    pub embed_width: usize,
    /// Categorical feature whose value keys per-dimension normalization
    /// (e.g. the lab name for lab results).
    #[serde(default)]
    pub dimension_feature: Option<String>,
    /// Categorical feature holding the administration frequency.
    #[serde(default)]
    pub frequency_feature: Option<String>,
}

impl SourceSchema {
    pub fn n_numeric(&self) -> usize {
        self.numeric_features.len()
    }

    pub fn n_categorical(&self) -> usize {
        self.categorical_features.len()
    }

    /// d_m = n_m + c_m.
    pub fn n_features(&self) -> usize {
        self.n_numeric() + self.n_categorical()
    }

    pub fn categorical_index(&self, name: &str) -> Option<usize> {
        self.categorical_features.iter().position(|f| f.name == name)
    }

    pub fn numeric_index(&self, name: &str) -> Option<usize> {
        self.numeric_features.iter().position(|f| f == name)
    }

    pub fn dimension_index(&self) -> Option<usize> {
        self.dimension_feature
            .as_deref()
            .and_then(|n| self.categorical_index(n))
    }

    pub fn frequency_index(&self) -> Option<usize> {
        self.frequency_feature
            .as_deref()
            .and_then(|n| self.categorical_index(n))
    }

    pub fn validate(&self) -> Result<()> {
        let ctx = |f: &str| format!("sources[{}].{f}", self.source_name);
        if self.source_name.is_empty() {
            return Err(Error::schema(ctx("source_name"), "empty name"));
        }
        if self.n_features() == 0 {
            return Err(Error::schema(ctx("features"), "source has no features"));
        }
        if self.embed_width == 0 || self.embed_width % 2 != 0 {
            return Err(Error::schema(
                ctx("embed_width"),
                format!("must be a positive even number, got {}", self.embed_width),
            ));
        }
        let mut names = HashSet::new();
        for n in self
            .numeric_features
            .iter()
            .chain(self.categorical_features.iter().map(|c| &c.name))
        {
            if !names.insert(n.as_str()) {
                return Err(Error::schema(ctx("features"), format!("duplicate feature `{n}`")));
            }
        }
        for c in &self.categorical_features {
            for reserved in [UNKNOWN, ABSENT_SOURCE] {
                let hits = c.vocabulary.iter().filter(|v| v.as_str() == reserved).count();
                if hits != 1 {
                    return Err(Error::schema(
                        ctx(&c.name),
                        format!("vocabulary must contain `{reserved}` exactly once, found {hits}"),
                    ));
                }
            }
            let distinct: HashSet<_> = c.vocabulary.iter().collect();
            if distinct.len() != c.vocabulary.len() {
                return Err(Error::schema(ctx(&c.name), "vocabulary has duplicate categories"));
            }
        }
        if let Some(d) = &self.dimension_feature {
            if self.categorical_index(d).is_none() {
                return Err(Error::schema(
                    ctx("dimension_feature"),
                    format!("`{d}` is not a categorical feature"),
                ));
            }
        }
        match (&self.frequency_feature, self.kind) {
            (Some(f), SourceKind::Medication) => {
                if self.categorical_index(f).is_none() {
                    return Err(Error::schema(
                        ctx("frequency_feature"),
                        format!("`{f}` is not a categorical feature"),
                    ));
                }
            }
            (Some(_), _) => {
                return Err(Error::schema(
                    ctx("frequency_feature"),
                    "only medication sources carry a frequency",
                ))
            }
            (None, _) => {}
        }
        Ok(())
    }
}

/// The ordered set of sources of a cohort (M = `sources.len()`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortSchema {
    pub sources: Vec<SourceSchema>,
}

impl CohortSchema {
    pub fn new(sources: Vec<SourceSchema>) -> Result<Self> {
        let s = CohortSchema { sources };
        s.validate()?;
        Ok(s)
    }

    pub fn n_sources(&self) -> usize {
        self.sources.len()
    }

    /// Looks up by 1-based source id.
    pub fn source(&self, source_id: usize) -> Option<&SourceSchema> {
        source_id
            .checked_sub(1)
            .and_then(|i| self.sources.get(i))
    }

    pub fn by_name(&self, name: &str) -> Option<&SourceSchema> {
        self.sources.iter().find(|s| s.source_name == name)
    }

    pub fn validate(&self) -> Result<()> {
        if self.sources.is_empty() {
            return Err(Error::schema("sources", "at least one source is required"));
        }
        let mut names = HashSet::new();
        for (i, s) in self.sources.iter().enumerate() {
            if s.source_id != i + 1 {
                return Err(Error::schema(
                    format!("sources[{i}].source_id"),
                    format!("expected {}, found {} (ids must be contiguous from 1)", i + 1, s.source_id),
                ));
            }
            if !names.insert(s.source_name.as_str()) {
                return Err(Error::schema(
                    format!("sources[{i}].source_name"),
                    format!("duplicate source name `{}`", s.source_name),
                ));
            }
            s.validate()?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let schema: CohortSchema = serde_json::from_str(&text)?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lab() -> SourceSchema {
        SourceSchema {
            source_id: 1,
            source_name: "lab".into(),
            kind: SourceKind::Lab,
            numeric_features: vec!["lab_result".into()],
            categorical_features: vec![CategoricalFeature::new("lab_name", &["glucose", "potassium"])],
            embed_width: 32,
            dimension_feature: Some("lab_name".into()),
            frequency_feature: None,
        }
    }

    #[test]
    fn reserved_categories_come_first() {
        let f = CategoricalFeature::new("x", &["a", "unknown", "b"]);
        assert_eq!(f.vocabulary, vec!["unknown", "absent-source", "a", "b"]);
        assert_eq!(f.unknown_id(), 0);
        assert_eq!(f.absent_id(), 1);
        assert_eq!(f.id_or_unknown("zzz"), 0);
        assert_eq!(f.id_or_unknown(""), 0);
        assert_eq!(f.id_or_unknown("b"), 3);
    }

    #[test]
    fn feature_count_is_numeric_plus_categorical() {
        let s = lab();
        assert_eq!(s.n_features(), 2);
        s.validate().unwrap();
        assert_eq!(s.dimension_index(), Some(0));
    }

    #[test]
    fn rejects_missing_reserved_category() {
        let mut s = lab();
        s.categorical_features[0].vocabulary.retain(|v| v != ABSENT_SOURCE);
        assert!(s.validate().is_err());
    }

    #[test]
    fn rejects_non_contiguous_ids() {
        let mut b = lab();
        b.source_id = 3;
        b.source_name = "lab2".into();
        assert!(CohortSchema::new(vec![lab(), b]).is_err());
    }

    #[test]
    fn rejects_duplicate_names() {
        let mut b = lab();
        b.source_id = 2;
        assert!(CohortSchema::new(vec![lab(), b]).is_err());
    }
}
