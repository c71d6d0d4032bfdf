use mitst_core::data::{build_cohort_examples, Cohort, GlycemicClass, SourceKind};
use mitst_core::inference::{
    api_schemas, bounds_document, build_templates, ConfusionCell, PredictRequest, Predictor, RawRecord,
};
use mitst_core::model::{Mitst, ModelConfig};
use mitst_core::preprocess::{FrequencyTable, Preprocessor};
use mitst_core::synth::{generate_cohort, synthetic_schema, GeneratorConfig};
use mitst_core::train::{CohortDataset, Dataset};
use mitst_core::Error;

fn tiny_config(cohort: &Cohort) -> ModelConfig {
    let mut mc = ModelConfig::for_schema(&cohort.schema);
    mc.depth = 1;
    mc.heads = 2;
    mc.head_dim = 4;
    mc.joint_dim = 8;
    mc.fusion_dim = 8;
    mc
}

fn setup(n: usize) -> (Cohort, Predictor) {
    let mut g = GeneratorConfig::default();
    g.n_patients = n;
    let cohort = generate_cohort(&g).unwrap().cohort;
    let pre = Preprocessor::fit(cohort.schema.clone(), &cohort.episodes, FrequencyTable::default()).unwrap();
    let model = Mitst::new(tiny_config(&cohort)).unwrap();
    let predictor = Predictor::new(model, pre, "test".into()).unwrap();
    (cohort, predictor)
}

#[test]
fn request_path_matches_the_training_input_bitwise() {
    let (cohort, predictor) = setup(25);
    let all: Vec<usize> = (0..cohort.episodes.len()).collect();
    let data = CohortDataset::new(predictor.preprocessor().clone(), &cohort, &all);
    assert!(data.len() > 100);
    for i in (0..data.len()).step_by(3) {
        let e = &data.examples[i];
        let offline = predictor.model().predict(&data.input(i)).unwrap();
        let request = PredictRequest::from_episode(predictor.schema(), &cohort.episodes[e.episode_index], e.cutoff_offset);
        // Through JSON text, as the service sees it.
        let text = serde_json::to_string(&request).unwrap();
        let parsed: PredictRequest = serde_json::from_str(&text).unwrap();
        assert_eq!(parsed, request);
        let resp = predictor.predict(&parsed).unwrap();
        let a: Vec<u64> = offline.probabilities.iter().map(|v| v.to_bits()).collect();
        let b: Vec<u64> = resp.probabilities.iter().map(|v| v.to_bits()).collect();
        assert_eq!(a, b, "example {i}");
        let alpha: Vec<f64> = resp.fusion_weights.iter().map(|w| w.weight).collect();
        assert_eq!(alpha, offline.alpha);
        assert_eq!(resp.predicted_index, offline.argmax());
        assert_eq!(resp.predicted_class, GlycemicClass::ALL[offline.argmax()].name());
    }
}

#[test]
fn records_after_the_cutoff_are_ignored() {
    let (cohort, predictor) = setup(3);
    let ep = &cohort.episodes[0];
    let cutoff = ep.target_track[6].offset_minutes;
    let visible = PredictRequest::from_episode(predictor.schema(), ep, cutoff);
    let mut everything = PredictRequest::from_episode(predictor.schema(), ep, f64::INFINITY);
    everything.cutoff_minutes = Some(cutoff);
    assert_ne!(visible, everything);
    assert_eq!(predictor.predict(&visible).unwrap(), predictor.predict(&everything).unwrap());

    // Without an explicit cutoff the latest record sets it.
    let latest = visible
        .sources
        .values()
        .flatten()
        .map(|r| r.offset_minutes)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut implicit = visible.clone();
    implicit.cutoff_minutes = None;
    let (_, c) = implicit.to_episode(predictor.schema()).unwrap();
    assert_eq!(c, latest);
}

#[test]
fn validation_reports_every_problem() {
    let schema = synthetic_schema();
    let mut r = PredictRequest {
        cutoff_minutes: Some(-1.0),
        sources: Default::default(),
    };
    r.sources.insert(
        "vitals".into(),
        vec![RawRecord {
            offset_minutes: f64::NAN,
            values: [("heart_rate".to_string(), Some(f64::INFINITY))].into_iter().collect(),
            categories: Default::default(),
            stop_offset_minutes: None,
        }],
    );
    r.sources.insert(
        "medications".into(),
        vec![RawRecord {
            offset_minutes: 100.0,
            values: Default::default(),
            categories: [("colour".to_string(), "red".to_string())].into_iter().collect(),
            stop_offset_minutes: Some(50.0),
        }],
    );
    let errors = r.to_episode(&schema).unwrap_err();
    let fields: Vec<&str> = errors.iter().map(|e| e.field.as_str()).collect();
    assert_eq!(
        fields,
        vec![
            "cutoff_minutes",
            "sources.vitals[0].offset_minutes",
            "sources.vitals[0].values.heart_rate",
            "sources.medications[0].categories.colour",
            "sources.medications[0].stop_offset_minutes",
        ]
    );
    let err: Error = errors.into();
    assert!(err.to_string().contains("sources.vitals[0].offset_minutes"));
}

#[test]
fn reserved_placeholder_category_is_treated_as_unknown() {
    let schema = synthetic_schema();
    let mut r = PredictRequest {
        cutoff_minutes: None,
        sources: Default::default(),
    };
    let record = |cat: &str| RawRecord {
        offset_minutes: 10.0,
        values: Default::default(),
        categories: [("diagnosis".to_string(), cat.to_string())].into_iter().collect(),
        stop_offset_minutes: None,
    };
    r.sources.insert("diagnosis".into(), vec![record("absent-source"), record("never-seen")]);
    let (ep, _) = r.to_episode(&schema).unwrap();
    let src = schema.by_name("diagnosis").unwrap();
    let unknown = src.categorical_features[0].unknown_id();
    let series = &ep.series[src.source_id - 1];
    assert!(series.present);
    assert!(series.time_points.iter().all(|p| p.categorical == vec![unknown]));
    // Empty lists mean an absent source.
    r.sources.insert("diagnosis".into(), vec![]);
    assert!(!r.to_episode(&schema).unwrap().0.series[src.source_id - 1].present);
}

#[test]
fn bounds_respect_outlier_thresholds() {
    let (cohort, predictor) = setup(40);
    let state = predictor.preprocessor().normalizer.state();
    let doc = bounds_document(&cohort.schema, state, 3.0);
    assert_eq!(doc.sources.len(), cohort.schema.n_sources());
    let n_entries: usize = doc.sources.iter().map(|s| s.numeric.len()).sum();
    assert_eq!(n_entries, state.entries.len());
    for (s, src) in doc.sources.iter().zip(&cohort.schema.sources) {
        assert_eq!(s.has_stop_offset, src.kind == SourceKind::Medication);
        for b in &s.numeric {
            let e = state
                .entries
                .iter()
                .find(|e| e.source_id == src.source_id && e.feature == b.feature && e.dimension == b.dimension)
                .unwrap();
            assert!(b.min >= e.low.unwrap_or(f64::NEG_INFINITY) || b.min == e.mean);
            assert!(b.max <= e.high.unwrap_or(f64::INFINITY) || b.max == e.mean);
            assert!(b.min <= b.mean && b.mean <= b.max);
            if src.kind != SourceKind::Lab {
                assert_eq!((b.min, b.max), (e.mean - 3.0 * e.std, e.mean + 3.0 * e.std));
            }
        }
    }
    let flat = bounds_document(&cohort.schema, state, 0.0);
    assert!(flat.sources.iter().flat_map(|s| &s.numeric).all(|b| b.min == b.mean && b.max == b.mean));
}

#[test]
fn confusion_cells() {
    use ConfusionCell::*;
    assert_eq!(ConfusionCell::of(0, 0, 0), Some(TruePositive));
    assert_eq!(ConfusionCell::of(0, 0, 2), Some(FalsePositive));
    assert_eq!(ConfusionCell::of(0, 1, 0), Some(FalseNegative));
    assert_eq!(ConfusionCell::of(0, 1, 2), None);
}

#[test]
fn templates_need_every_cell_and_matching_scores() {
    let (cohort, predictor) = setup(20);
    let examples = build_cohort_examples(cohort.episodes.iter().enumerate());
    let err = build_templates(&predictor, &cohort.episodes, &examples, &[]).unwrap_err();
    assert!(err.to_string().contains("score vectors"));
    // Scores that always favour euglycemia leave the positive cells empty.
    let flat = vec![vec![0.1, 0.8, 0.1]; examples.len()];
    let err = build_templates(&predictor, &cohort.episodes, &examples, &flat).unwrap_err();
    assert!(err.to_string().contains("hypo_true_positive"), "{err}");
}

#[test]
fn predictor_rejects_a_mismatched_model() {
    let (cohort, predictor) = setup(5);
    let mut mc = tiny_config(&cohort);
    mc.n_classes = 2;
    let two_class = Mitst::new(mc).unwrap();
    assert!(Predictor::new(two_class, predictor.preprocessor().clone(), "x".into()).is_err());
    let mut mc = tiny_config(&cohort);
    mc.sources.pop();
    let fewer = Mitst::new(mc).unwrap();
    assert!(Predictor::new(fewer, predictor.preprocessor().clone(), "x".into()).is_err());
}

#[test]
fn bundle_round_trip() {
    let (_, predictor) = setup(10);
    let dir = tempfile::tempdir().unwrap();
    let hash = mitst_core::inference::save_bundle(dir.path(), predictor.model(), predictor.preprocessor()).unwrap();
    let loaded = Predictor::load(dir.path()).unwrap();
    assert_eq!(loaded.model_hash(), hash);
    assert_eq!(loaded.config_hash(), predictor.config_hash());
    assert!(Predictor::load(&dir.path().join("missing")).is_err());
}

#[test]
fn api_schemas_are_published() {
    let doc = api_schemas();
    for key in ["predict_request", "predict_response", "validation_errors", "template_bundle", "bounds"] {
        assert!(doc[key].is_object(), "{key}");
    }
    assert!(doc["predict_request"]["properties"]["sources"].is_object());
}
