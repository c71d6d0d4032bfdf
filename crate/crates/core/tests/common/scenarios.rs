//! Small end-to-end training setups shared by the training tests and the
//! acceptance run.

use mitst_core::data::{split_by_patient, Cohort, SplitFractions};
use mitst_core::model::{Mitst, ModelConfig};
use mitst_core::preprocess::{FrequencyTable, Preprocessor};
use mitst_core::synth::{generate_cohort, GeneratorConfig};
use mitst_core::train::{default_fine_tune_freeze, fine_tune, train, CohortDataset, Relabeled, TrainConfig};

/// Training-set class counts (hypo, euglycemia, hyper) of the original study.
pub const PAPER_TRAIN_COUNTS: [usize; 3] = [47_089, 1_927_672, 590_740];

pub fn paper_labels() -> Vec<usize> {
    PAPER_TRAIN_COUNTS
        .iter()
        .enumerate()
        .flat_map(|(c, &n)| std::iter::repeat_n(c, n))
        .collect()
}

pub struct SmallTask {
    pub cohort: Cohort,
    pub train: CohortDataset,
    pub val: CohortDataset,
}

pub fn small_task(n_patients: usize, seed: u64) -> SmallTask {
    small_task_split(n_patients, seed, SplitFractions::default())
}

/// Like [`small_task`] with a chosen split; a wide validation share keeps
/// every class present in tiny cohorts.
pub fn small_task_split(n_patients: usize, seed: u64, fractions: SplitFractions) -> SmallTask {
    let mut g = GeneratorConfig::default();
    g.n_patients = n_patients;
    g.seed = seed;
    let cohort = generate_cohort(&g).unwrap().cohort;
    let split = split_by_patient(&cohort.episodes, fractions, seed).unwrap();
    let pre = Preprocessor::fit(
        cohort.schema.clone(),
        split.train.iter().map(|&i| &cohort.episodes[i]),
        FrequencyTable::default(),
    )
    .unwrap();
    let train = CohortDataset::new(pre.clone(), &cohort, &split.train);
    let val = CohortDataset::new(pre, &cohort, &split.val);
    SmallTask { cohort, train, val }
}

pub fn small_model(task: &SmallTask, seed: u64) -> Mitst {
    let mut mc = ModelConfig::for_schema(&task.cohort.schema);
    mc.depth = 1;
    mc.heads = 2;
    mc.head_dim = 4;
    mc.joint_dim = 8;
    mc.fusion_dim = 8;
    mc.init_seed = seed;
    Mitst::new(mc).unwrap()
}

/// Hyperglycemia against everything else.
pub fn hyper_vs_rest(label: usize) -> usize {
    usize::from(label == 2)
}

pub struct FineTuneRun {
    pub pretrained: Mitst,
    pub tuned: Mitst,
    pub freeze: Vec<String>,
}

/// Pretrains on the 3-class task of one cohort, then fine-tunes a fresh
/// 2-class head on a second cohort's hyper-vs-rest task with the default
/// freeze list.
pub fn fine_tune_run() -> FineTuneRun {
    let first = small_task(120, 0);
    let mut pretrained = small_model(&first, 0);
    let cfg = TrainConfig {
        epochs: 3,
        learning_rate: 2e-3,
        ..TrainConfig::default()
    };
    train(&mut pretrained, &first.train, &first.val, &cfg, &mut |_| {}).unwrap();

    let second = small_task(120, 1);
    let tr = Relabeled {
        inner: &second.train,
        map: hyper_vs_rest,
    };
    let va = Relabeled {
        inner: &second.val,
        map: hyper_vs_rest,
    };
    let freeze = default_fine_tune_freeze(&pretrained);
    let cfg = TrainConfig {
        freeze: freeze.clone(),
        seed: 7,
        ..cfg
    };
    let (tuned, _) = fine_tune(&pretrained, 2, &tr, &va, &cfg, &mut |_| {}).unwrap();
    FineTuneRun {
        pretrained,
        tuned,
        freeze,
    }
}
