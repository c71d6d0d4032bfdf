use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::data::{Episode, GlycemicClass, LabeledExample};
use crate::error::{Error, Result};

use super::predictor::Predictor;
use super::request::{PredictRequest, PredictResponse};

/// Confusion-matrix cell of a template relative to its target class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum ConfusionCell {
    TruePositive,
    FalsePositive,
    FalseNegative,
}

impl ConfusionCell {
    pub const ALL: [ConfusionCell; 3] = [
        ConfusionCell::TruePositive,
        ConfusionCell::FalsePositive,
        ConfusionCell::FalseNegative,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ConfusionCell::TruePositive => "true_positive",
            ConfusionCell::FalsePositive => "false_positive",
            ConfusionCell::FalseNegative => "false_negative",
        }
    }

    /// Cell of an (argmax prediction, truth) pair for `target`, if any.
    pub fn of(target: usize, predicted: usize, truth: usize) -> Option<Self> {
        match (predicted == target, truth == target) {
            (true, true) => Some(ConfusionCell::TruePositive),
            (true, false) => Some(ConfusionCell::FalsePositive),
            (false, true) => Some(ConfusionCell::FalseNegative),
            (false, false) => None,
        }
    }
}

/// Classes that get templates.
pub const TEMPLATE_CLASSES: [GlycemicClass; 2] = [GlycemicClass::Hypo, GlycemicClass::Hyper];

pub fn template_name(class: GlycemicClass, cell: ConfusionCell) -> String {
    format!("{}_{}", class.name(), cell.name())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct Template {
    pub name: String,
    pub target_class: String,
    pub cell: ConfusionCell,
    pub stay_id: String,
    /// Class of the following measurement.
    pub true_class: String,
    pub request: PredictRequest,
    /// Response recorded when the bundle was built.
    pub prediction: PredictResponse,
}

impl Template {
    /// Whether a prediction lands in the template's advertised cell.
    pub fn matches(&self, response: &PredictResponse) -> bool {
        let index = |name: &str| GlycemicClass::ALL.iter().position(|c| c.name() == name);
        match (index(&self.target_class), index(&self.true_class)) {
            (Some(t), Some(y)) => ConfusionCell::of(t, response.predicted_index, y) == Some(self.cell),
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct TemplateBundle {
    pub model_hash: String,
    pub templates: Vec<Template>,
}

impl TemplateBundle {
    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path, e))
    }
}

/// Picks one example per (hypo, hyper) x (TP, FP, FN) cell from scored
/// examples, taking the one with the largest margin in its cell: the highest
/// target probability for positives, the lowest for false negatives. Ties
/// keep the earliest example.
///
/// `episodes` are the raw episodes that `examples[i].episode_index` points
/// into and `probabilities[i]` scores `examples[i]`.
pub fn build_templates(
    predictor: &Predictor,
    episodes: &[Episode],
    examples: &[LabeledExample],
    probabilities: &[Vec<f64>],
) -> Result<TemplateBundle> {
    if examples.len() != probabilities.len() {
        return Err(Error::InvalidInput(format!(
            "{} examples but {} score vectors",
            examples.len(),
            probabilities.len()
        )));
    }
    let argmax = |p: &[f64]| {
        (0..p.len()).fold(0, |best, i| if p[i] > p[best] { i } else { best })
    };
    let mut templates = Vec::with_capacity(6);
    for class in TEMPLATE_CLASSES {
        let t = class.index();
        for cell in ConfusionCell::ALL {
            let mut best: Option<(usize, f64)> = None;
            for (i, (e, p)) in examples.iter().zip(probabilities).enumerate() {
                if ConfusionCell::of(t, argmax(p), e.label.index()) != Some(cell) {
                    continue;
                }
                let key = if cell == ConfusionCell::FalseNegative { -p[t] } else { p[t] };
                if best.is_none_or(|(_, k)| key > k) {
                    best = Some((i, key));
                }
            }
            let name = template_name(class, cell);
            let (i, _) = best.ok_or_else(|| Error::InvalidInput(format!("no example falls in cell `{name}`")))?;
            let e = &examples[i];
            let episode = &episodes[e.episode_index];
            let request = PredictRequest::from_episode(predictor.schema(), episode, e.cutoff_offset);
            let prediction = predictor.predict(&request)?;
            let template = Template {
                name: name.clone(),
                target_class: class.name().into(),
                cell,
                stay_id: e.stay_id.clone(),
                true_class: e.label.name().into(),
                request,
                prediction,
            };
            if !template.matches(&template.prediction) {
                return Err(Error::InvalidInput(format!(
                    "template `{name}` re-predicts outside its cell; the scores do not come from this predictor"
                )));
            }
            templates.push(template);
        }
    }
    Ok(TemplateBundle {
        model_hash: predictor.model_hash().to_string(),
        templates,
    })
}
