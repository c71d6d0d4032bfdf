use std::path::PathBuf;

/// Errors raised by the data pipeline, model and training code.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("schema violation at `{field}`: {reason}")]
    Schema { field: String, reason: String },

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error in {}: {source}", path.display())]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("shape mismatch in {context}: {detail}")]
    Shape { context: String, detail: String },

    #[error("checkpoint rejected: {0}")]
    Checkpoint(String),

    #[error("checkpoint config hash mismatch: stored {stored}, computed {computed}")]
    ConfigHashMismatch { stored: String, computed: String },

    #[error("class `{class}` has no training examples")]
    EmptyClass { class: String },

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("unknown parameter group `{0}`")]
    UnknownParamGroup(String),

    #[error("invalid request: {}", join_fields(.0))]
    InvalidRequest(Vec<crate::inference::FieldError>),
}

fn join_fields(errors: &[crate::inference::FieldError]) -> String {
    errors.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

impl Error {
    pub(crate) fn schema(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Schema {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
