//! Prediction from raw per-source records, shared by the CLI and the HTTP
//! service, plus the template and bounds documents a client form needs.

mod bounds;
mod predictor;
mod request;
mod templates;

pub use bounds::{
    bounds_document, BoundsDocument, CategoricalChoices, NumericBounds, SourceBounds, DEFAULT_SIGMA_MULTIPLIER,
};
pub use predictor::{
    save_bundle, Predictor, BOUNDS_FILE, FREQUENCIES_FILE, MODEL_FILE, NORMALIZER_FILE, SCHEMA_FILE, TEMPLATES_FILE,
};
pub use request::{FieldError, PredictRequest, PredictResponse, RawRecord, SourceWeight, ValidationErrors};
pub use templates::{build_templates, template_name, ConfusionCell, Template, TemplateBundle, TEMPLATE_CLASSES};

/// JSON schemas of the request, response and error bodies.
pub fn api_schemas() -> serde_json::Value {
    serde_json::json!({
        "predict_request": schemars::schema_for!(PredictRequest),
        "predict_response": schemars::schema_for!(PredictResponse),
        "validation_errors": schemars::schema_for!(ValidationErrors),
        "template_bundle": schemars::schema_for!(TemplateBundle),
        "bounds": schemars::schema_for!(BoundsDocument),
    })
}
