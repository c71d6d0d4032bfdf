use std::sync::OnceLock;

use mitst_core::data::{build_cohort_examples, split_by_patient, Cohort, SplitFractions};
use mitst_core::inference::{build_templates, save_bundle, Predictor, TemplateBundle, TEMPLATES_FILE};
use mitst_core::model::{Mitst, ModelConfig};
use mitst_core::preprocess::{FrequencyTable, Preprocessor};
use mitst_core::synth::{generate_cohort, GeneratorConfig};
use mitst_core::train::{predict_probabilities, train, CohortDataset, TrainConfig};

pub struct Fixture {
    pub dir: tempfile::TempDir,
    pub cohort: Cohort,
    pub predictor: Predictor,
    pub templates: TemplateBundle,
}

/// A small trained model bundle, built once per test binary.
pub fn fixture() -> &'static Fixture {
    static FIXTURE: OnceLock<Fixture> = OnceLock::new();
    FIXTURE.get_or_init(build)
}

fn build() -> Fixture {
    let mut g = GeneratorConfig::default();
    g.n_patients = 150;
    let cohort = generate_cohort(&g).unwrap().cohort;
    let split = split_by_patient(&cohort.episodes, SplitFractions::default(), 0).unwrap();
    let pre = Preprocessor::fit(
        cohort.schema.clone(),
        split.train.iter().map(|&i| &cohort.episodes[i]),
        FrequencyTable::default(),
    )
    .unwrap();
    let tr = CohortDataset::new(pre.clone(), &cohort, &split.train);
    let va = CohortDataset::new(pre.clone(), &cohort, &split.val);

    let mut mc = ModelConfig::for_schema(&cohort.schema);
    mc.depth = 1;
    mc.heads = 2;
    mc.head_dim = 4;
    mc.joint_dim = 8;
    mc.fusion_dim = 8;
    let mut model = Mitst::new(mc).unwrap();
    let cfg = TrainConfig {
        epochs: 12,
        patience: 12,
        learning_rate: 2e-3,
        ..TrainConfig::default()
    };
    train(&mut model, &tr, &va, &cfg, &mut |_| {}).unwrap();

    let dir = tempfile::tempdir().unwrap();
    save_bundle(dir.path(), &model, &pre).unwrap();
    let predictor = Predictor::load(dir.path()).unwrap();

    // Every episode is a candidate so each confusion cell has members.
    let all: Vec<usize> = (0..cohort.episodes.len()).collect();
    let data = CohortDataset::new(pre, &cohort, &all);
    let probs = predict_probabilities(predictor.model(), &data).unwrap();
    let examples = build_cohort_examples(cohort.episodes.iter().enumerate());
    assert_eq!(examples, data.examples);
    let templates = build_templates(&predictor, &cohort.episodes, &examples, &probs).unwrap();
    templates.save(&dir.path().join(TEMPLATES_FILE)).unwrap();
    Fixture {
        dir,
        cohort,
        predictor,
        templates,
    }
}
