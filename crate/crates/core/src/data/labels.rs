use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Upper bound (exclusive) of the hypoglycemic range, mg/dL.
pub const HYPO_THRESHOLD: f64 = 70.0;
/// Lower bound (exclusive) of the hyperglycemic range, mg/dL.
pub const HYPER_THRESHOLD: f64 = 180.0;
pub const NUM_CLASSES: usize = 3;

/// Class of a blood-glucose measurement. The discriminant is the class index
/// used for one-hot labels, score vectors and confusion matrices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GlycemicClass {
    Hypo = 0,
    Euglycemia = 1,
    Hyper = 2,
}

impl GlycemicClass {
    pub const ALL: [GlycemicClass; NUM_CLASSES] =
        [GlycemicClass::Hypo, GlycemicClass::Euglycemia, GlycemicClass::Hyper];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Self> {
        Self::ALL.get(index).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            GlycemicClass::Hypo => "hypo",
            GlycemicClass::Euglycemia => "euglycemia",
            GlycemicClass::Hyper => "hyper",
        }
    }

    pub fn one_hot(self) -> [f64; NUM_CLASSES] {
        let mut v = [0.0; NUM_CLASSES];
        v[self.index()] = 1.0;
        v
    }
}

impl std::fmt::Display for GlycemicClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Maps a glucose value to its class. Both thresholds are strict, so 70 and
/// 180 mg/dL are euglycemic.
pub fn classify_target(value: f64) -> Result<GlycemicClass> {
    if !value.is_finite() || value <= 0.0 {
        return Err(Error::InvalidInput(format!(
            "glucose value must be finite and positive, got {value}"
        )));
    }
    Ok(if value < HYPO_THRESHOLD {
        GlycemicClass::Hypo
    } else if value > HYPER_THRESHOLD {
        GlycemicClass::Hyper
    } else {
        GlycemicClass::Euglycemia
    })
}
