mod common;

use std::collections::HashSet;

use common::scenarios::{
    fine_tune_run, paper_labels, small_model, small_task, small_task_split, SmallTask, PAPER_TRAIN_COUNTS,
};
use mitst_core::data::SplitFractions;
use mitst_core::model::{checkpoint, GROUP_FUSION, GROUP_HEAD, GROUP_SOURCE_TRANSFORMER};
use mitst_core::train::{
    batch_gradients, coverage, default_fine_tune_freeze, fine_tune, predict_probabilities, train, trainable_mask,
    undersample_epoch, validation_metrics, write_history_csv, Dataset, EarlyStopping, TrainConfig,
};
use mitst_core::Error;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// A tiny task whose validation split holds every class.
fn wide_val_task(n: usize, seed: u64) -> SmallTask {
    let task = small_task_split(
        n,
        seed,
        SplitFractions {
            train: 0.6,
            val: 0.4,
            test: 0.0,
        },
    );
    let labels = task.val.labels();
    assert!((0..3).all(|c| labels.contains(&c)), "validation split lacks a class");
    task
}

#[test]
fn monotone_degrading_score_stops_after_exactly_patience_epochs() {
    let mut s = EarlyStopping::new(5);
    let mut stopped_at = None;
    for epoch in 0..50 {
        let (_, stop) = s.observe(epoch, 1.0 - epoch as f64 * 0.01);
        if stop {
            stopped_at = Some(epoch);
            break;
        }
    }
    assert_eq!(stopped_at, Some(5));
    assert_eq!(s.best_epoch, Some(0));
}

#[test]
fn training_is_reproducible_and_restores_the_best_epoch() {
    let task = wide_val_task(60, 3);
    let cfg = TrainConfig {
        epochs: 4,
        patience: 2,
        learning_rate: 2e-3,
        ..TrainConfig::default()
    };
    let run = || {
        let mut m = small_model(&task, 0);
        let out = train(&mut m, &task.train, &task.val, &cfg, &mut |_| {}).unwrap();
        (checkpoint::to_bytes(&m), out)
    };
    let (a, out_a) = run();
    let (b, out_b) = run();
    assert_eq!(a, b);
    assert_eq!(out_a, out_b);

    // The returned model scores exactly the best recorded validation score.
    let model = checkpoint::from_bytes(&a).unwrap();
    let probs = predict_probabilities(&model, &task.val).unwrap();
    let (auroc, auprc) = validation_metrics(&probs, &task.val.labels(), 3);
    assert_eq!(auroc.unwrap() + auprc.unwrap(), out_a.best_score);
    assert_eq!(out_a.history[out_a.best_epoch].val_score, out_a.best_score);
    let last = out_a.history.last().unwrap();
    assert!(last.stopped || out_a.history.len() == cfg.epochs);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("history.csv");
    write_history_csv(&path, &out_a.history).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("epoch,train_loss,val_auroc,val_auprc,stopped\n"));
    assert_eq!(text.lines().count(), out_a.history.len() + 1);
}

#[test]
fn training_beats_an_untrained_model() {
    let task = wide_val_task(300, 5);
    let mut model = small_model(&task, 0);
    let labels = task.val.labels();
    let before = validation_metrics(&predict_probabilities(&model, &task.val).unwrap(), &labels, 3)
        .0
        .unwrap();
    let cfg = TrainConfig {
        epochs: 20,
        patience: 20,
        learning_rate: 2e-3,
        ..TrainConfig::default()
    };
    let out = train(&mut model, &task.train, &task.val, &cfg, &mut |_| {}).unwrap();
    let aurocs: Vec<f64> = out.history.iter().map(|r| r.val_macro_auroc.unwrap()).collect();
    assert!((before - 0.5).abs() < 0.15, "untrained auroc {before}");
    let best = aurocs.iter().copied().fold(f64::MIN, f64::max);
    assert!(best > 0.75 && best > before + 0.1, "before {before}, history {aurocs:?}");
}

#[test]
fn fine_tuning_touches_only_unfrozen_groups() {
    let run = fine_tune_run();
    let pre = run.pretrained.params();
    let tuned = run.tuned.params();
    let mut changed_groups = HashSet::new();
    for (_, t) in tuned.iter() {
        if t.group == GROUP_HEAD {
            continue;
        }
        let id = pre.id(&t.name).unwrap();
        let before: Vec<u64> = pre.get(id).as_slice().iter().map(|v| v.to_bits()).collect();
        let after: Vec<u64> = t.value.as_slice().iter().map(|v| v.to_bits()).collect();
        if run.freeze.contains(&t.group) {
            assert_eq!(before, after, "{} moved", t.name);
        } else if before != after {
            changed_groups.insert(t.group.clone());
        }
    }
    let expected: HashSet<String> = [GROUP_FUSION, GROUP_SOURCE_TRANSFORMER].iter().map(|s| s.to_string()).collect();
    assert_eq!(changed_groups, expected);
    assert_eq!(run.tuned.config().n_classes, 2);
}

#[test]
fn unfrozen_gradients_are_nonzero_and_frozen_ones_absent() {
    let task = small_task(40, 2);
    let model = small_model(&task, 1);
    let freeze = default_fine_tune_freeze(&model);
    let mask = trainable_mask(model.params(), &freeze).unwrap();
    let batch: Vec<usize> = (0..16).collect();
    let (_, grads) = batch_gradients(&model, &task.train, &batch, &mask, ChaCha8Rng::seed_from_u64(0)).unwrap();
    let mut norm_by_group = std::collections::HashMap::<String, f64>::new();
    for (id, g) in &grads {
        let t = model.params().tensor(*id);
        assert!(mask[id.0], "gradient for frozen {}", t.name);
        *norm_by_group.entry(t.group.clone()).or_default() += g.as_slice().iter().map(|v| v * v).sum::<f64>();
    }
    for group in [GROUP_FUSION, GROUP_SOURCE_TRANSFORMER, GROUP_HEAD] {
        assert!(norm_by_group.get(group).copied().unwrap_or(0.0) > 0.0, "{group}");
    }
}

#[test]
fn freezing_everything_leaves_parameters_unchanged() {
    let task = wide_val_task(40, 4);
    let mut model = small_model(&task, 0);
    let before = checkpoint::to_bytes(&model);
    let cfg = TrainConfig {
        epochs: 2,
        freeze: model.params().groups(),
        ..TrainConfig::default()
    };
    let out = train(&mut model, &task.train, &task.val, &cfg, &mut |_| {}).unwrap();
    assert_eq!(checkpoint::to_bytes(&model), before);
    // Same parameters, same validation score every epoch.
    assert!(out.history.windows(2).all(|w| w[0].val_score == w[1].val_score));
}

#[test]
fn unknown_freeze_group_is_rejected() {
    let task = small_task(20, 0);
    let model = small_model(&task, 0);
    let cfg = TrainConfig {
        freeze: vec!["no_such_group".into()],
        ..TrainConfig::default()
    };
    let err = fine_tune(&model, 2, &task.train, &task.val, &cfg, &mut |_| {}).unwrap_err();
    assert!(matches!(err, Error::UnknownParamGroup(g) if g == "no_such_group"));
}

#[test]
fn invalid_config_is_rejected() {
    for cfg in [
        TrainConfig {
            patience: 0,
            ..TrainConfig::default()
        },
        TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        },
        TrainConfig {
            learning_rate: -1.0,
            ..TrainConfig::default()
        },
    ] {
        assert!(cfg.validate().is_err());
    }
}

#[test]
fn evaluation_sets_are_never_resampled() {
    let task = small_task(40, 1);
    let model = small_model(&task, 0);
    assert_eq!(predict_probabilities(&model, &task.val).unwrap().len(), task.val.examples.len());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn undersampling_balances_without_replacement(
        counts in prop::collection::vec(1usize..60, 3),
        seed in any::<u64>(),
        epoch in 0usize..100,
    ) {
        let labels: Vec<usize> = counts.iter().enumerate().flat_map(|(c, &n)| std::iter::repeat_n(c, n)).collect();
        let drawn = undersample_epoch(&labels, 3, seed, epoch).unwrap();
        let k = *counts.iter().min().unwrap();
        prop_assert_eq!(drawn.len(), 3 * k);
        let unique: HashSet<usize> = drawn.iter().copied().collect();
        prop_assert_eq!(unique.len(), drawn.len());
        for c in 0..3 {
            prop_assert_eq!(drawn.iter().filter(|&&i| labels[i] == c).count(), k);
        }
        prop_assert_eq!(&drawn, &undersample_epoch(&labels, 3, seed, epoch).unwrap());
    }
}

#[test]
fn epochs_draw_fresh_subsets() {
    let labels: Vec<usize> = (0..300).map(|i| usize::from(i >= 10)).collect();
    let a = undersample_epoch(&labels, 2, 0, 0).unwrap();
    let b = undersample_epoch(&labels, 2, 0, 1).unwrap();
    assert_ne!(a, b);
}

#[test]
fn missing_class_is_an_error() {
    let err = undersample_epoch(&[1, 1, 2], 3, 0, 0).unwrap_err();
    assert!(matches!(err, Error::EmptyClass { class } if class == "hypo"));
}

/// Probability that a given majority example is drawn at least once is
/// 1 - (1 - k/n)^epochs. The simulation must agree with it.
#[test]
fn coverage_matches_its_closed_form() {
    let labels: Vec<usize> = [(0usize, 40usize), (1, 1000), (2, 300)]
        .iter()
        .flat_map(|&(c, n)| std::iter::repeat_n(c, n))
        .collect();
    let sim = coverage(&labels, 3, 1, 9, 50).unwrap();
    let closed = 1.0 - (1.0 - 40.0 / 1000.0f64).powi(50);
    assert!((sim - closed).abs() < 0.04, "{sim} vs {closed}");
}

#[test]
fn coverage_with_the_original_class_counts() {
    let [hypo, eugly, _] = PAPER_TRAIN_COUNTS;
    let sim = coverage(&paper_labels(), 3, 1, 0, 50).unwrap();
    let closed = 1.0 - (1.0 - hypo as f64 / eugly as f64).powi(50);
    // About 71%: the counts and 50 epochs cannot reach 90% coverage.
    assert!((sim - closed).abs() < 0.005, "{sim} vs {closed}");
}
