mod common;

use std::collections::BTreeSet;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use mitst_core::inference::{template_name, ConfusionCell, PredictRequest, PredictResponse, TEMPLATE_CLASSES};
use mitst_core::model::checkpoint;
use mitst_serve::{router, AppState, Loaded};
use serde_json::Value;
use tower::ServiceExt;

use common::fixture;

fn loaded_state() -> AppState {
    AppState::with(Loaded::from_dir(fixture().dir.path()).unwrap())
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<String>) -> (StatusCode, Value) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body.map(Body::from).unwrap_or_else(Body::empty))
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

async fn predict(app: &Router, request: &PredictRequest) -> (StatusCode, Value) {
    call(app, "POST", "/predict", Some(serde_json::to_string(request).unwrap())).await
}

fn bits(r: &PredictResponse) -> Vec<u64> {
    r.probabilities
        .iter()
        .chain(r.fusion_weights.iter().map(|w| &w.weight))
        .map(|v| v.to_bits())
        .collect()
}

#[tokio::test]
async fn health_reports_503_until_loaded() {
    let state = AppState::empty();
    let app = router(state.clone());
    let (status, body) = call(&app, "GET", "/health", None).await;
    assert_eq!(status, StatusCode::SERVICE_UNAVAILABLE);
    assert_eq!(body["status"], "loading");

    state.swap(Loaded::from_dir(fixture().dir.path()).unwrap());
    let (status, body) = call(&app, "GET", "/health", None).await;
    assert_eq!(status, StatusCode::OK);
    let file_hash = checkpoint::file_hash(&fixture().dir.path().join("model.ckpt")).unwrap();
    assert_eq!(body["model_hash"], Value::String(file_hash));
}

#[tokio::test]
async fn endpoints_needing_a_model_return_503() {
    let app = router(AppState::empty());
    let request = &fixture().templates.templates[0].request;
    assert_eq!(predict(&app, request).await.0, StatusCode::SERVICE_UNAVAILABLE);
    assert_eq!(call(&app, "GET", "/templates", None).await.0, StatusCode::SERVICE_UNAVAILABLE);
    assert_eq!(call(&app, "GET", "/bounds", None).await.0, StatusCode::SERVICE_UNAVAILABLE);
    // The API schemas do not depend on a model.
    let (status, body) = call(&app, "GET", "/schema", None).await;
    assert_eq!(status, StatusCode::OK);
    assert!(body["predict_request"].is_object());
    assert!(body["cohort_schema"].is_null());
}

#[tokio::test]
async fn six_templates_with_the_expected_names() {
    let app = router(loaded_state());
    let (status, body) = call(&app, "GET", "/templates", None).await;
    assert_eq!(status, StatusCode::OK);
    let names: BTreeSet<String> = body["templates"]
        .as_array()
        .unwrap()
        .iter()
        .map(|t| t["name"].as_str().unwrap().to_string())
        .collect();
    let expected: BTreeSet<String> = TEMPLATE_CLASSES
        .iter()
        .flat_map(|&c| ConfusionCell::ALL.iter().map(move |&cell| template_name(c, cell)))
        .collect();
    assert_eq!(names.len(), 6);
    assert_eq!(names, expected);
}

#[tokio::test]
async fn templates_round_trip_and_land_in_their_cells() {
    let app = router(loaded_state());
    for t in &fixture().templates.templates {
        let (status, body) = predict(&app, &t.request).await;
        assert_eq!(status, StatusCode::OK, "{}: {body}", t.name);
        let resp: PredictResponse = serde_json::from_value(body).unwrap();
        assert_eq!(bits(&resp), bits(&t.prediction), "{}", t.name);
        assert!(t.matches(&resp), "{} predicted {}", t.name, resp.predicted_class);
        // Offline path, same bundle.
        let offline = fixture().predictor.predict(&t.request).unwrap();
        assert_eq!(bits(&offline), bits(&resp));
    }
}

#[tokio::test]
async fn responses_are_normalized_distributions() {
    let app = router(loaded_state());
    for t in &fixture().templates.templates {
        let resp: PredictResponse = serde_json::from_value(predict(&app, &t.request).await.1).unwrap();
        let p: f64 = resp.probabilities.iter().sum();
        let a: f64 = resp.fusion_weights.iter().map(|w| w.weight).sum();
        assert_eq!(resp.probabilities.len(), 3);
        assert!((p - 1.0).abs() <= 1e-6 && (a - 1.0).abs() <= 1e-6);
        assert!(resp.fusion_weights.iter().all(|w| w.weight > 0.0));
        assert_eq!(resp.model_hash, fixture().predictor.model_hash());
    }
}

#[tokio::test]
async fn omitted_source_takes_the_placeholder_path() {
    let app = router(loaded_state());
    let mut request = fixture().templates.templates[0].request.clone();
    request.sources.remove("diagnosis");
    request.sources.remove("medications");
    let (status, body) = predict(&app, &request).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    // Nothing at all still predicts.
    let empty = PredictRequest {
        cutoff_minutes: None,
        sources: Default::default(),
    };
    assert_eq!(predict(&app, &empty).await.0, StatusCode::OK);
}

#[tokio::test]
async fn negative_offset_is_rejected_naming_the_field() {
    let app = router(loaded_state());
    let mut request = fixture().templates.templates[0].request.clone();
    request.sources.get_mut("vitals").unwrap()[0].offset_minutes = -5.0;
    let (status, body) = predict(&app, &request).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let fields: Vec<&str> = body["errors"]
        .as_array()
        .unwrap()
        .iter()
        .map(|e| e["field"].as_str().unwrap())
        .collect();
    assert_eq!(fields, vec!["sources.vitals[0].offset_minutes"]);
}

#[tokio::test]
async fn schema_violations_are_400s() {
    let app = router(loaded_state());
    let base = fixture().templates.templates[0].request.clone();

    let mut unknown_source = base.clone();
    unknown_source.sources.insert("imaging".into(), vec![]);
    let (status, body) = predict(&app, &unknown_source).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["errors"][0]["field"], "sources.imaging");

    let mut unknown_feature = base.clone();
    unknown_feature.sources.get_mut("vitals").unwrap()[0]
        .values
        .insert("pupil_size".into(), Some(3.0));
    let (status, body) = predict(&app, &unknown_feature).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["errors"][0]["field"], "sources.vitals[0].values.pupil_size");

    let mut stop_on_vitals = base.clone();
    stop_on_vitals.sources.get_mut("vitals").unwrap()[0].stop_offset_minutes = Some(1e4);
    assert_eq!(predict(&app, &stop_on_vitals).await.0, StatusCode::BAD_REQUEST);

    for bad in ["{", "[]", r#"{"sources": {}, "extra": 1}"#, r#"{"sources": {"vitals": [{}]}}"#] {
        let (status, body) = call(&app, "POST", "/predict", Some(bad.into())).await;
        assert_eq!(status, StatusCode::BAD_REQUEST, "{bad}");
        assert_eq!(body["errors"][0]["field"], "body");
    }
}

#[tokio::test]
async fn unseen_category_behaves_like_unknown() {
    let app = router(loaded_state());
    let base = fixture().templates.templates[0].request.clone();
    let mut with_new = base.clone();
    let mut without = base.clone();
    with_new.sources.get_mut("static").unwrap()[0]
        .categories
        .insert("admission_type".into(), "transfer-from-mars".into());
    without.sources.get_mut("static").unwrap()[0]
        .categories
        .remove("admission_type");
    let (s1, a) = predict(&app, &with_new).await;
    let (s2, b) = predict(&app, &without).await;
    assert_eq!((s1, s2), (StatusCode::OK, StatusCode::OK));
    assert_eq!(a, b);
}

#[tokio::test]
async fn concurrent_identical_requests_agree() {
    let app = router(loaded_state());
    let request = fixture().templates.templates[3].request.clone();
    let handles: Vec<_> = (0..8)
        .map(|_| {
            let (app, request) = (app.clone(), request.clone());
            tokio::spawn(async move { predict(&app, &request).await })
        })
        .collect();
    let mut bodies = Vec::new();
    for h in handles {
        bodies.push(h.await.unwrap().1);
    }
    assert!(bodies.windows(2).all(|w| w[0] == w[1]));
}

#[tokio::test]
async fn bounds_bracket_the_training_means() {
    let app = router(loaded_state());
    let (status, body) = call(&app, "GET", "/bounds", None).await;
    assert_eq!(status, StatusCode::OK);
    let sources = body["sources"].as_array().unwrap();
    assert_eq!(sources.len(), fixture().cohort.schema.n_sources());
    for s in sources {
        for n in s["numeric"].as_array().unwrap() {
            let (lo, mean, hi) = (n["min"].as_f64().unwrap(), n["mean"].as_f64().unwrap(), n["max"].as_f64().unwrap());
            assert!(lo <= mean && mean <= hi, "{n}");
        }
        for c in s["categorical"].as_array().unwrap() {
            assert!(c["categories"].as_array().unwrap().iter().all(|v| v != "absent-source"));
        }
    }
    let (_, schema) = call(&app, "GET", "/schema", None).await;
    assert_eq!(schema["cohort_schema"]["sources"].as_array().unwrap().len(), sources.len());
}

#[tokio::test]
async fn bundle_without_templates_serves_404_for_them() {
    let app = router(AppState::with(Loaded::new(fixture().predictor.clone(), None)));
    assert_eq!(call(&app, "GET", "/templates", None).await.0, StatusCode::NOT_FOUND);
    assert_eq!(call(&app, "GET", "/health", None).await.0, StatusCode::OK);
}

#[tokio::test]
async fn swap_replaces_the_served_model() {
    let state = loaded_state();
    let app = router(state.clone());
    let before = call(&app, "GET", "/health", None).await.1;

    let mut other = fixture().predictor.model().clone();
    let id = other.params().iter().next().unwrap().0;
    other.params_mut().get_mut(id).as_mut_slice()[0] += 1.0;
    let dir = tempfile::tempdir().unwrap();
    mitst_core::inference::save_bundle(dir.path(), &other, fixture().predictor.preprocessor()).unwrap();
    let previous = state.swap(Loaded::from_dir(dir.path()).unwrap());
    assert!(previous.is_some());

    let after = call(&app, "GET", "/health", None).await.1;
    assert_ne!(before["model_hash"], after["model_hash"]);
    assert_eq!(before["config_hash"], after["config_hash"]);
}
