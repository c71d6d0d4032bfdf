use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use mitst_core::data::{split_by_patient, Cohort, GlycemicClass, PatientSplit, NUM_CLASSES};
use mitst_core::eval::{
    evaluate as evaluate_report, fp_severity_curve, locf_report, relative_risk_curve, subgroup_report, subgroup_tags,
    time_bucket_report, EvalOptions, MetricsReport, ScoredExample,
};
use mitst_core::inference::{
    bounds_document, build_templates, save_bundle, PredictRequest, PredictResponse, Predictor, BOUNDS_FILE,
    DEFAULT_SIGMA_MULTIPLIER, FREQUENCIES_FILE, MODEL_FILE, NORMALIZER_FILE, SCHEMA_FILE, TEMPLATES_FILE,
};
use mitst_core::model::{checkpoint, Mitst, GROUP_HEAD};
use mitst_core::preprocess::{FrequencyTable, NormalizerState, Preprocessor};
use mitst_core::synth::{class_counts, generate_cohort};
use mitst_core::train::{
    default_fine_tune_freeze, fine_tune, predict_probabilities, train as train_model, validation_metrics,
    write_history_csv, CohortDataset, Dataset, EpochRecord, Relabeled,
};
use mitst_core::Error;
use serde::Serialize;

use crate::config::{read_json, RunConfig};
use crate::manifest::{files_in, record};
use crate::UsageError;

const COHORT_DIR: &str = "cohort";
const PREPROCESS_DIR: &str = "preprocess";
const MODEL_DIR: &str = "model";
const EVAL_DIR: &str = "eval";
const FINETUNE_DIR: &str = "finetune";
const PREDICT_DIR: &str = "predict";

const GENERATION_FILE: &str = "generation.json";
const SPLIT_FILE: &str = "split.json";
const SUMMARY_FILE: &str = "summary.json";
const HISTORY_FILE: &str = "history.csv";
const OUTCOME_FILE: &str = "outcome.json";

/// Fails with a usage error naming `path` when an upstream command has not
/// produced it.
fn require(path: &Path, producer: &str) -> anyhow::Result<()> {
    if !path.exists() {
        bail!(UsageError::new(format!(
            "missing upstream artifact {} (run `mitst {producer}` first)",
            path.display()
        )));
    }
    Ok(())
}

fn create_dir(dir: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> anyhow::Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n").with_context(|| format!("writing {}", path.display()))
}

fn write_csv<R: IntoIterator<Item = Vec<String>>>(path: &Path, header: &[&str], rows: R) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    w.write_record(header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn log_epoch(r: &EpochRecord) {
    eprintln!(
        "epoch {:>3}  loss {:.4}  val auroc {}  val auprc {}{}",
        r.epoch,
        r.train_loss,
        r.val_macro_auroc.map_or("n/a".into(), |v| format!("{v:.4}")),
        r.val_macro_auprc.map_or("n/a".into(), |v| format!("{v:.4}")),
        if r.improved { "  *" } else { "" }
    );
}

pub fn generate(cfg: &RunConfig, out: &Path) -> anyhow::Result<()> {
    let generated = generate_cohort(&cfg.generator)?;
    let dir = out.join(COHORT_DIR);
    create_dir(&dir)?;
    generated.cohort.write_dir(&dir)?;
    write_json(&dir.join(GENERATION_FILE), &generated.manifest)?;
    let m = &generated.manifest;
    if !m.prevalence_within_tolerance {
        tracing::warn!(achieved = ?m.achieved_prevalence, target = ?m.target_prevalence, "prevalence off target");
    }
    eprintln!(
        "generated {} patients, {} examples, prevalence {:?}",
        m.n_patients, m.n_examples, m.achieved_prevalence
    );
    record(out, "generate", cfg, &files_in(&dir)?)
}

fn load_cohort(out: &Path) -> anyhow::Result<Cohort> {
    let dir = out.join(COHORT_DIR);
    require(&dir.join(mitst_core::data::ingest::SCHEMA_FILE), "generate")?;
    Ok(Cohort::read_dir(&dir)?)
}

#[derive(Serialize)]
struct SplitSummary {
    episodes: usize,
    examples: usize,
    class_counts: [usize; NUM_CLASSES],
    /// Examples whose input reaches past their cutoff; always zero.
    leaking_examples: usize,
}

pub fn preprocess(cfg: &RunConfig, out: &Path) -> anyhow::Result<()> {
    let cohort = load_cohort(out)?;
    let split = split_by_patient(&cohort.episodes, cfg.split, cfg.seed)?;
    let pre = Preprocessor::fit(
        cohort.schema.clone(),
        split.train.iter().map(|&i| &cohort.episodes[i]),
        FrequencyTable::default(),
    )?;
    let dir = out.join(PREPROCESS_DIR);
    create_dir(&dir)?;
    write_json(&dir.join(SPLIT_FILE), &split)?;
    pre.schema.save(&dir.join(SCHEMA_FILE))?;
    pre.normalizer.state().save(&dir.join(NORMALIZER_FILE))?;
    pre.frequencies.save(&dir.join(FREQUENCIES_FILE))?;

    let mut summary = BTreeMap::new();
    for (name, idx) in [("train", &split.train), ("val", &split.val), ("test", &split.test)] {
        let data = CohortDataset::new(pre.clone(), &cohort, idx);
        let leaking = data.leaking_examples();
        if !leaking.is_empty() {
            bail!("{} {name} examples see past their cutoff", leaking.len());
        }
        summary.insert(
            name,
            SplitSummary {
                episodes: idx.len(),
                examples: data.len(),
                class_counts: class_counts(&data.examples),
                leaking_examples: 0,
            },
        );
    }
    write_json(&dir.join(SUMMARY_FILE), &summary)?;
    eprintln!(
        "split {} / {} / {} episodes",
        split.train.len(),
        split.val.len(),
        split.test.len()
    );
    record(out, "preprocess", cfg, &files_in(&dir)?)
}

fn load_preprocessed(out: &Path) -> anyhow::Result<(Cohort, PatientSplit, Preprocessor)> {
    let cohort = load_cohort(out)?;
    let dir = out.join(PREPROCESS_DIR);
    for f in [SPLIT_FILE, SCHEMA_FILE, NORMALIZER_FILE, FREQUENCIES_FILE] {
        require(&dir.join(f), "preprocess")?;
    }
    let split: PatientSplit = read_json(&dir.join(SPLIT_FILE))?;
    let pre = Preprocessor::new(
        mitst_core::data::CohortSchema::load(&dir.join(SCHEMA_FILE))?,
        NormalizerState::load(&dir.join(NORMALIZER_FILE))?,
        FrequencyTable::load(&dir.join(FREQUENCIES_FILE))?,
    )?;
    Ok((cohort, split, pre))
}

pub fn train(cfg: &RunConfig, out: &Path) -> anyhow::Result<()> {
    let (cohort, split, pre) = load_preprocessed(out)?;
    let train_data = CohortDataset::new(pre.clone(), &cohort, &split.train);
    let val_data = CohortDataset::new(pre.clone(), &cohort, &split.val);
    let mut model = Mitst::new(cfg.model.model_config(&cohort.schema, cfg.seed))?;
    eprintln!(
        "training on {} examples, validating on {}",
        train_data.len(),
        val_data.len()
    );
    let outcome = train_model(&mut model, &train_data, &val_data, &cfg.train, &mut log_epoch)?;

    let dir = out.join(MODEL_DIR);
    create_dir(&dir)?;
    // A stale template file would belong to another model.
    let templates_path = dir.join(TEMPLATES_FILE);
    if templates_path.exists() {
        std::fs::remove_file(&templates_path)?;
    }
    let hash = save_bundle(&dir, &model, &pre)?;
    write_history_csv(&dir.join(HISTORY_FILE), &outcome.history)?;
    write_json(&dir.join(OUTCOME_FILE), &outcome)?;
    let predictor = Predictor::new(model, pre, hash)?;
    write_json(
        &dir.join(BOUNDS_FILE),
        &bounds_document(predictor.schema(), predictor.preprocessor().normalizer.state(), DEFAULT_SIGMA_MULTIPLIER),
    )?;

    let test_data = CohortDataset::new(predictor.preprocessor().clone(), &cohort, &split.test);
    let probs = predict_probabilities(predictor.model(), &test_data)?;
    match build_templates(&predictor, &cohort.episodes, &test_data.examples, &probs) {
        Ok(t) => t.save(&templates_path)?,
        Err(e) => tracing::warn!("no template bundle written: {e}"),
    }
    eprintln!(
        "best epoch {} with validation score {:.4}; bundle in {}",
        outcome.best_epoch,
        outcome.best_score,
        dir.display()
    );
    record(out, "train", cfg, &files_in(&dir)?)
}

fn load_bundle(out: &Path, bundle: Option<&Path>) -> anyhow::Result<(PathBuf, Predictor)> {
    let dir = bundle.map(Path::to_path_buf).unwrap_or_else(|| out.join(MODEL_DIR));
    let ckpt = dir.join(MODEL_FILE);
    if !ckpt.exists() {
        bail!(UsageError::new(format!("missing checkpoint {}", ckpt.display())));
    }
    for f in [SCHEMA_FILE, NORMALIZER_FILE, FREQUENCIES_FILE] {
        require(&dir.join(f), "train")?;
    }
    let predictor = Predictor::load(&dir)?;
    Ok((dir, predictor))
}

fn eval_options(cfg: &RunConfig, cutpoints: Option<Vec<f64>>) -> EvalOptions {
    EvalOptions {
        bootstrap_resamples: cfg.eval.bootstrap_resamples,
        permutations: cfg.eval.permutations,
        seed: cfg.seed,
        cutpoints,
        confidence_intervals: cfg.eval.confidence_intervals,
    }
}

#[derive(Serialize)]
struct CutpointRecord {
    /// `validation` when every class had a threshold there, else `test`.
    selected_on: &'static str,
    cutpoints: Vec<Option<f64>>,
}

pub fn evaluate(cfg: &RunConfig, out: &Path) -> anyhow::Result<()> {
    let (_, predictor) = load_bundle(out, None)?;
    let (cohort, split, _) = load_preprocessed(out)?;
    let pre = predictor.preprocessor().clone();
    let model = predictor.model();
    let val = CohortDataset::new(pre.clone(), &cohort, &split.val).score(model)?;
    let test_data = CohortDataset::new(pre, &cohort, &split.test);
    let test = test_data.score(model)?;
    if test.is_empty() {
        bail!(UsageError::new("the test split has no examples; adjust `split`"));
    }

    let no_ci = EvalOptions {
        confidence_intervals: false,
        ..eval_options(cfg, None)
    };
    let val_report = evaluate_report(&val, NUM_CLASSES, &no_ci)?;
    let val_cuts: Vec<Option<f64>> = val_report.classes.iter().map(|c| c.cutpoint).collect();
    let chosen: Option<Vec<f64>> = val_cuts.iter().copied().collect();
    if chosen.is_none() {
        tracing::warn!("validation split lacks a class; selecting cutpoints on the test split");
    }
    let cut_record = CutpointRecord {
        selected_on: if chosen.is_some() { "validation" } else { "test" },
        cutpoints: val_cuts,
    };
    let report = evaluate_report(&test, NUM_CLASSES, &eval_options(cfg, chosen))?;

    let dir = out.join(EVAL_DIR);
    create_dir(&dir)?;
    report.write_json(&dir.join("metrics.json"))?;
    report.write_csv(&dir.join("metrics.csv"))?;
    val_report.write_json(&dir.join("validation_metrics.json"))?;
    write_json(&dir.join("cutpoints.json"), &cut_record)?;

    let pairs: Vec<(f64, usize)> = test.iter().map(|e| (e.current_value, e.true_class)).collect();
    let locf = locf_report(&pairs)?;
    write_json(&dir.join("locf.json"), &locf)?;

    let buckets = time_bucket_report(&test, NUM_CLASSES)?;
    write_json(&dir.join("time_buckets.json"), &buckets)?;
    let mut header = vec!["bucket", "start_minutes", "end_minutes", "n_examples"];
    let names: Vec<String> = GlycemicClass::ALL
        .iter()
        .flat_map(|c| [format!("auroc_{}", c.name()), format!("auprc_{}", c.name())])
        .collect();
    header.extend(names.iter().map(String::as_str));
    write_csv(
        &dir.join("time_buckets.csv"),
        &header,
        buckets.iter().map(|b| {
            let mut row = vec![
                b.bucket.to_string(),
                b.start_minutes.to_string(),
                b.end_minutes.to_string(),
                b.n_examples.to_string(),
            ];
            for c in 0..NUM_CLASSES {
                row.push(opt(b.auroc[c]));
                row.push(opt(b.auprc[c]));
            }
            row
        }),
    )?;

    let mut subgroups: BTreeMap<String, MetricsReport> = BTreeMap::new();
    for tag in subgroup_tags(&test) {
        subgroups.insert(tag.clone(), subgroup_report(&test, &tag, NUM_CLASSES, &no_ci)?);
    }
    write_json(&dir.join("subgroups.json"), &subgroups)?;

    write_risk_curves(&dir, &test, GlycemicClass::Hypo, &cfg.eval.hypo_fractions)?;
    write_risk_curves(&dir, &test, GlycemicClass::Hyper, &cfg.eval.hyper_fractions)?;

    write_csv(
        &dir.join("predictions.csv"),
        &["stay_id", "cutoff_offset", "true_class", "p_hypo", "p_euglycemia", "p_hyper", "predicted_class"],
        test_data.examples.iter().zip(&test).map(|(e, s)| {
            vec![
                e.stay_id.clone(),
                e.cutoff_offset.to_string(),
                GlycemicClass::ALL[s.true_class].name().to_string(),
                s.scores[0].to_string(),
                s.scores[1].to_string(),
                s.scores[2].to_string(),
                GlycemicClass::ALL[s.predicted_class()].name().to_string(),
            ]
        }),
    )?;

    let summary = summary_markdown(&report, locf.balanced_accuracy, &predictor);
    std::fs::write(dir.join("summary.md"), &summary)?;
    eprint!("{summary}");
    record(out, "evaluate", cfg, &files_in(&dir)?)
}

fn write_risk_curves(dir: &Path, test: &[ScoredExample], class: GlycemicClass, fractions: &[f64]) -> anyhow::Result<()> {
    let name = class.name();
    let severity = fp_severity_curve(test, class, fractions)
        .map_err(|e| UsageError::new(format!("config section `eval`: {e}")))?;
    write_csv(
        &dir.join(format!("fp_severity_{name}.csv")),
        &["x", "y"],
        severity.iter().map(|p| vec![p.fraction.to_string(), opt(p.mean_next_value)]),
    )?;
    let risk = relative_risk_curve(test, class, fractions)?;
    write_csv(
        &dir.join(format!("relative_risk_{name}.csv")),
        &["x", "y"],
        risk.iter().map(|p| vec![p.fraction.to_string(), opt(p.relative_risk.as_f64())]),
    )?;
    write_json(&dir.join(format!("risk_{name}.json")), &(severity, risk))
}

fn summary_markdown(report: &MetricsReport, locf_ba: Option<f64>, predictor: &Predictor) -> String {
    let f = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.4}"));
    let mut s = String::from("# Test split\n\n");
    s += &format!("model `{}`\n\n", predictor.model_hash());
    s += "| class | prevalence | AUROC | AUPRC | sensitivity | specificity |\n|---|---|---|---|---|---|\n";
    for c in &report.classes {
        s += &format!(
            "| {} | {:.4} | {} | {} | {} | {} |\n",
            c.class,
            c.prevalence,
            f(c.auroc),
            f(c.auprc),
            f(c.sensitivity),
            f(c.specificity)
        );
    }
    s += &format!(
        "| macro | | {} | {} | {} | {} |\n\n",
        f(report.macro_avg.auroc),
        f(report.macro_avg.auprc),
        f(report.macro_avg.sensitivity),
        f(report.macro_avg.specificity)
    );
    s += &format!(
        "{} examples. Balanced accuracy {}, carry-forward baseline {}.\n",
        report.n_examples,
        f(report.balanced_accuracy),
        f(locf_ba)
    );
    s
}

/// A request file holds one request object or an array of them; the output
/// mirrors that shape.
pub fn predict(cfg: &RunConfig, out: &Path, request: &Path, bundle: Option<&Path>) -> anyhow::Result<()> {
    let (_, predictor) = load_bundle(out, bundle)?;
    let text = std::fs::read_to_string(request)
        .map_err(|e| UsageError::new(format!("cannot read request {}: {e}", request.display())))?;
    let doc: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| UsageError::new(format!("request {}: {e}", request.display())))?;
    let (items, single) = match doc {
        serde_json::Value::Array(a) => (a, false),
        v => (vec![v], true),
    };
    let mut responses: Vec<PredictResponse> = Vec::with_capacity(items.len());
    for (i, item) in items.into_iter().enumerate() {
        let where_ = if single { String::new() } else { format!("[{i}]") };
        if !item.is_object() {
            bail!(UsageError::new(format!("request{where_}: expected a JSON object")));
        }
        let req: PredictRequest = serde_path_to_error::deserialize(item)
            .map_err(|e| UsageError::new(format!("request{where_}.{}: {}", e.path(), e.inner())))?;
        match predictor.predict(&req) {
            Ok(r) => responses.push(r),
            Err(Error::InvalidRequest(errors)) => {
                let fields: Vec<String> = errors.iter().map(|e| format!("request{where_}.{e}")).collect();
                bail!(UsageError::new(fields.join("; ")));
            }
            Err(e) => return Err(e.into()),
        }
    }
    let text = if single {
        serde_json::to_string_pretty(&responses[0])?
    } else {
        serde_json::to_string_pretty(&responses)?
    };
    println!("{text}");
    let dir = out.join(PREDICT_DIR);
    create_dir(&dir)?;
    let path = dir.join("responses.json");
    std::fs::write(&path, text + "\n")?;
    record(out, "predict", cfg, &[path])
}

#[derive(Serialize)]
struct GroupCheck {
    frozen: bool,
    unchanged: bool,
}

#[derive(Serialize)]
struct FinetuneReport {
    task: crate::config::FinetuneTask,
    n_classes: usize,
    pretrained_hash: String,
    best_epoch: usize,
    val_macro_auroc: Option<f64>,
    val_macro_auprc: Option<f64>,
    /// Every non-head parameter group of the pretrained model.
    groups: BTreeMap<String, GroupCheck>,
}

pub fn finetune(cfg: &RunConfig, out: &Path) -> anyhow::Result<()> {
    let (_, predictor) = load_bundle(out, None)?;
    let pretrained = predictor.model();

    let mut gen = cfg.generator.clone();
    gen.seed = cfg.seed.wrapping_add(1);
    gen.n_patients = cfg.finetune.n_patients;
    let cohort = generate_cohort(&gen)?.cohort;
    let split = split_by_patient(&cohort.episodes, cfg.split, gen.seed)?;
    // Inputs go through the pretrained preprocessing unchanged.
    let pre = predictor.preprocessor().clone();
    let train_data = CohortDataset::new(pre.clone(), &cohort, &split.train);
    let val_data = CohortDataset::new(pre, &cohort, &split.val);
    let task = cfg.finetune.task;
    let tr = Relabeled {
        inner: &train_data,
        map: task.relabel(),
    };
    let va = Relabeled {
        inner: &val_data,
        map: task.relabel(),
    };
    let freeze = cfg
        .finetune
        .freeze
        .clone()
        .unwrap_or_else(|| default_fine_tune_freeze(pretrained));
    let tcfg = cfg.finetune_train(freeze.clone());
    let (tuned, outcome) = match fine_tune(pretrained, task.n_classes(), &tr, &va, &tcfg, &mut log_epoch) {
        Err(Error::UnknownParamGroup(g)) => {
            bail!(UsageError::new(format!("config field `finetune.freeze`: unknown parameter group `{g}`")))
        }
        other => other?,
    };

    let mut groups = BTreeMap::new();
    for group in pretrained.params().groups() {
        if group == GROUP_HEAD {
            continue;
        }
        let unchanged = pretrained
            .params()
            .iter()
            .filter(|(_, t)| t.group == group)
            .all(|(_, t)| {
                let after = tuned.params().id(&t.name).map(|id| tuned.params().get(id));
                after.is_some_and(|a| {
                    a.as_slice().iter().map(|v| v.to_bits()).eq(t.value.as_slice().iter().map(|v| v.to_bits()))
                })
            });
        let frozen = freeze.contains(&group);
        if frozen && !unchanged {
            bail!("frozen group `{group}` changed during fine-tuning");
        }
        groups.insert(group, GroupCheck { frozen, unchanged });
    }
    let probs = predict_probabilities(&tuned, &va)?;
    let (auroc, auprc) = validation_metrics(&probs, &va.labels(), task.n_classes());

    let dir = out.join(FINETUNE_DIR);
    create_dir(&dir)?;
    checkpoint::save(&tuned, &dir.join(MODEL_FILE))?;
    write_history_csv(&dir.join(HISTORY_FILE), &outcome.history)?;
    write_json(
        &dir.join("report.json"),
        &FinetuneReport {
            task,
            n_classes: task.n_classes(),
            pretrained_hash: predictor.model_hash().to_string(),
            best_epoch: outcome.best_epoch,
            val_macro_auroc: auroc,
            val_macro_auprc: auprc,
            groups,
        },
    )?;
    eprintln!(
        "fine-tuned with {} frozen groups; validation auroc {}",
        freeze.len(),
        opt(auroc)
    );
    record(out, "finetune", cfg, &files_in(&dir)?)
}

pub fn serve(cfg: &RunConfig, out: &Path, bundle: Option<&Path>) -> anyhow::Result<()> {
    let dir = bundle.map(Path::to_path_buf).unwrap_or_else(|| out.join(MODEL_DIR));
    let ckpt = dir.join(MODEL_FILE);
    if !ckpt.exists() {
        bail!(UsageError::new(format!("missing checkpoint {}", ckpt.display())));
    }
    let addr: std::net::SocketAddr = format!("{}:{}", cfg.serve.host, cfg.serve.port)
        .parse()
        .map_err(|e| UsageError::new(format!("config section `serve`: {e}")))?;
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(mitst_serve::serve(addr, dir))
}
