//! HTTP front end for a trained model bundle.
//!
//! The loaded model sits behind an `RwLock<Option<Arc<_>>>`: requests clone
//! the `Arc` and release the lock before doing any work, and a reload swaps
//! the pointer, so in-flight requests finish on the model they started with.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use mitst_core::inference::{
    api_schemas, bounds_document, BoundsDocument, FieldError, PredictRequest, Predictor, TemplateBundle,
    ValidationErrors, DEFAULT_SIGMA_MULTIPLIER, TEMPLATES_FILE,
};
use mitst_core::Error;
use serde_json::json;
use tower_http::cors::CorsLayer;

/// Everything served for one checkpoint.
#[derive(Debug)]
pub struct Loaded {
    pub predictor: Predictor,
    pub templates: Option<TemplateBundle>,
    pub bounds: BoundsDocument,
}

impl Loaded {
    /// Loads a bundle directory. The template file is optional.
    pub fn from_dir(dir: &Path) -> mitst_core::Result<Self> {
        let predictor = Predictor::load(dir)?;
        let path = dir.join(TEMPLATES_FILE);
        let templates = if path.exists() {
            Some(TemplateBundle::load(&path)?)
        } else {
            None
        };
        Ok(Self::new(predictor, templates))
    }

    pub fn new(predictor: Predictor, templates: Option<TemplateBundle>) -> Self {
        let bounds = bounds_document(
            predictor.schema(),
            predictor.preprocessor().normalizer.state(),
            DEFAULT_SIGMA_MULTIPLIER,
        );
        Loaded {
            predictor,
            templates,
            bounds,
        }
    }
}

#[derive(Clone, Default)]
pub struct AppState {
    current: Arc<RwLock<Option<Arc<Loaded>>>>,
}

impl AppState {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn with(loaded: Loaded) -> Self {
        let s = Self::default();
        s.swap(loaded);
        s
    }

    pub fn get(&self) -> Option<Arc<Loaded>> {
        self.current.read().expect("state lock").clone()
    }

    /// Replaces the served model; returns the previous one.
    pub fn swap(&self, loaded: Loaded) -> Option<Arc<Loaded>> {
        self.current.write().expect("state lock").replace(Arc::new(loaded))
    }
}

fn error(status: StatusCode, message: impl Into<String>) -> Response {
    (status, Json(json!({ "error": message.into() }))).into_response()
}

fn not_loaded() -> Response {
    error(StatusCode::SERVICE_UNAVAILABLE, "no checkpoint loaded")
}

fn invalid(errors: Vec<FieldError>) -> Response {
    (StatusCode::BAD_REQUEST, Json(ValidationErrors { errors })).into_response()
}

async fn predict(State(state): State<AppState>, body: Bytes) -> Response {
    let Some(loaded) = state.get() else {
        return not_loaded();
    };
    let body_error = |message: String| {
        invalid(vec![FieldError {
            field: "body".into(),
            message,
        }])
    };
    // serde also accepts a struct written as an array; only objects are valid.
    let request: PredictRequest = match serde_json::from_slice::<serde_json::Value>(&body) {
        Ok(v) if v.is_object() => match serde_json::from_value(v) {
            Ok(r) => r,
            Err(e) => return body_error(e.to_string()),
        },
        Ok(_) => return body_error("expected a JSON object".into()),
        Err(e) => return body_error(e.to_string()),
    };
    let outcome = tokio::task::spawn_blocking(move || loaded.predictor.predict(&request)).await;
    match outcome {
        Ok(Ok(response)) => Json(response).into_response(),
        Ok(Err(Error::InvalidRequest(errors))) => invalid(errors),
        Ok(Err(e)) => error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    }
}

async fn templates(State(state): State<AppState>) -> Response {
    match state.get() {
        None => not_loaded(),
        Some(l) => match &l.templates {
            Some(t) => Json(t).into_response(),
            None => error(StatusCode::NOT_FOUND, "this bundle has no templates"),
        },
    }
}

async fn health(State(state): State<AppState>) -> Response {
    match state.get() {
        None => (StatusCode::SERVICE_UNAVAILABLE, Json(json!({ "status": "loading" }))).into_response(),
        Some(l) => Json(json!({
            "status": "ready",
            "model_hash": l.predictor.model_hash(),
            "config_hash": l.predictor.config_hash(),
        }))
        .into_response(),
    }
}

async fn schema(State(state): State<AppState>) -> Response {
    let mut doc = api_schemas();
    doc["cohort_schema"] = match state.get() {
        Some(l) => serde_json::to_value(l.predictor.schema()).unwrap_or_default(),
        None => serde_json::Value::Null,
    };
    Json(doc).into_response()
}

async fn bounds(State(state): State<AppState>) -> Response {
    match state.get() {
        None => not_loaded(),
        Some(l) => Json(&l.bounds).into_response(),
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/predict", post(predict))
        .route("/templates", get(templates))
        .route("/health", get(health))
        .route("/schema", get(schema))
        .route("/bounds", get(bounds))
        .layer(CorsLayer::permissive())
        .with_state(state)
}

/// Binds `addr`, loads the bundle in the background (so `/health` answers
/// 503 until it is ready) and serves until interrupted. On unix, SIGHUP
/// reloads the bundle from the same directory.
pub async fn serve(addr: SocketAddr, bundle: PathBuf) -> anyhow::Result<()> {
    let state = AppState::empty();
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, bundle = %bundle.display(), "listening");

    let loader = state.clone();
    let dir = bundle.clone();
    let loaded = tokio::task::spawn_blocking(move || Loaded::from_dir(&dir));
    tokio::spawn(async move {
        match loaded.await {
            Ok(Ok(l)) => {
                tracing::info!(model_hash = l.predictor.model_hash(), "model loaded");
                loader.swap(l);
            }
            Ok(Err(e)) => tracing::error!("failed to load bundle: {e}"),
            Err(e) => tracing::error!("loader panicked: {e}"),
        }
    });

    #[cfg(unix)]
    {
        let reloader = state.clone();
        tokio::spawn(async move {
            use tokio::signal::unix::{signal, SignalKind};
            let Ok(mut hup) = signal(SignalKind::hangup()) else {
                return;
            };
            while hup.recv().await.is_some() {
                let dir = bundle.clone();
                match tokio::task::spawn_blocking(move || Loaded::from_dir(&dir)).await {
                    Ok(Ok(l)) => {
                        tracing::info!(model_hash = l.predictor.model_hash(), "model reloaded");
                        reloader.swap(l);
                    }
                    Ok(Err(e)) => tracing::error!("reload failed, keeping the current model: {e}"),
                    Err(e) => tracing::error!("reload panicked: {e}"),
                }
            }
        });
    }

    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
