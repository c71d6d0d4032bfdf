use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::{predict_probabilities, Dataset};
use super::optim::{Adam, AdamConfig};
use super::sampling::undersample_epoch;
use crate::error::{Error, Result};
use crate::eval::{auprc, auroc, macro_mean};
use crate::model::{
    its_transformer_group, feature_transformer_group, projection_group, tokenizer_group, Mitst, ParamStore, Session,
};
use crate::tensor::Matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub patience: usize,
    pub seed: u64,
    /// Parameter groups held fixed.
    pub freeze: Vec<String>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        TrainConfig {
            epochs: 50,
            batch_size: 16,
            learning_rate: adam.learning_rate,
            beta1: adam.beta1,
            beta2: adam.beta2,
            epsilon: adam.epsilon,
            patience: 5,
            seed: 0,
            freeze: Vec::new(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patience == 0 {
            return Err(Error::schema("train.patience", "must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::schema("train.batch_size", "must be at least 1"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::schema("train.learning_rate", "must be positive"));
        }
        for (name, b) in [("train.beta1", self.beta1), ("train.beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::schema(name, "must lie in [0, 1)"));
            }
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }
}

/// Tracks the best validation score and counts epochs without improvement.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    pub patience: usize,
    pub best: Option<f64>,
    pub best_epoch: Option<usize>,
    pub bad_epochs: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: None,
            best_epoch: None,
            bad_epochs: 0,
        }
    }

    /// Records an epoch's score; returns `(improved, stop)`. Only a strict
    /// improvement resets the counter and NaN never improves.
    pub fn observe(&mut self, epoch: usize, score: f64) -> (bool, bool) {
        let improved = !score.is_nan() && self.best.is_none_or(|b| score > b);
        if improved {
            self.best = Some(score);
            self.best_epoch = Some(epoch);
            self.bad_epochs = 0;
        } else {
            self.bad_epochs += 1;
        }
        (improved, self.bad_epochs >= self.patience)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_macro_auroc: Option<f64>,
    pub val_macro_auprc: Option<f64>,
    /// Macro AUROC plus macro AUPRC, the early-stopping criterion.
    pub val_score: f64,
    pub improved: bool,
    pub stopped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_score: f64,
}

/// Macro AUROC and AUPRC of `probabilities` against `labels`.
pub fn validation_metrics(probabilities: &[Vec<f64>], labels: &[usize], n_classes: usize) -> (Option<f64>, Option<f64>) {
    let mut aurocs = Vec::with_capacity(n_classes);
    let mut auprcs = Vec::with_capacity(n_classes);
    for c in 0..n_classes {
        let scores: Vec<f64> = probabilities.iter().map(|p| p[c]).collect();
        let truths: Vec<bool> = labels.iter().map(|&l| l == c).collect();
        aurocs.push(auroc(&scores, &truths));
        auprcs.push(auprc(&scores, &truths));
    }
    (macro_mean(&aurocs), macro_mean(&auprcs))
}

/// Mask over the store: `true` for parameters outside every frozen group.
pub fn trainable_mask(store: &ParamStore, freeze: &[String]) -> Result<Vec<bool>> {
    let groups = store.groups();
    if let Some(unknown) = freeze.iter().find(|g| !groups.contains(g)) {
        return Err(Error::UnknownParamGroup(unknown.clone()));
    }
    Ok(store.iter().map(|(_, t)| !freeze.contains(&t.group)).collect())
}

/// Mean cross entropy of one batch and the gradients of every trainable
/// parameter.
pub fn batch_gradients(
    model: &Mitst,
    data: &dyn Dataset,
    batch: &[usize],
    mask: &[bool],
    rng: ChaCha8Rng,
) -> Result<(f64, Vec<(crate::tensor::ParamId, Matrix)>)> {
    let mut s = Session::train(model.params(), mask, model.config().dropout, rng);
    let mut losses = Vec::with_capacity(batch.len());
    for &i in batch {
        let vars = model.forward(&mut s, &data.input(i))?;
        losses.push(s.graph.cross_entropy(vars.logits, data.label(i)));
    }
    let col = s.graph.concat_rows(&losses);
    let weights = s.graph.constant(Matrix::filled(1, losses.len(), 1.0 / losses.len() as f64));
    let mean = s.graph.matmul(weights, col);
    let loss = s.graph.value(mean).get(0, 0);
    if !loss.is_finite() || !mask.iter().any(|&t| t) {
        return Ok((loss, Vec::new()));
    }
    Ok((loss, s.graph.backward(mean).entries))
}

fn snapshot(store: &ParamStore) -> Vec<Matrix> {
    store.iter().map(|(_, t)| t.value.clone()).collect()
}

fn restore(store: &mut ParamStore, values: Vec<Matrix>) {
    for (k, v) in values.into_iter().enumerate() {
        *store.get_mut(crate::tensor::ParamId(k)) = v;
    }
}

/// Epoch loop: undersample, minibatch Adam updates, score the whole
/// validation set, stop after `patience` epochs without a better
/// macro AUROC + AUPRC. Leaves `model` at its best epoch's parameters.
pub fn train(
    model: &mut Mitst,
    train_data: &dyn Dataset,
    val_data: &dyn Dataset,
    config: &TrainConfig,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    config.validate()?;
    let n_classes = model.config().n_classes;
    let mask = trainable_mask(model.params(), &config.freeze)?;
    let labels = train_data.labels();
    let val_labels = val_data.labels();
    let mut adam = Adam::new(config.adam(), model.params().len());
    let mut stopping = EarlyStopping::new(config.patience);
    let mut best = snapshot(model.params());
    let mut history = Vec::new();

    for epoch in 0..config.epochs {
        let order = undersample_epoch(&labels, n_classes, config.seed, epoch)?;
        let mut loss_sum = 0.0;
        let mut n_batches = 0;
        for (b, batch) in order.chunks(config.batch_size).enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_d80f);
            rng.set_stream(((epoch as u64) << 32) | b as u64);
            let (loss, grads) = batch_gradients(model, train_data, batch, &mask, rng)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: b });
            }
            adam.step(model.params_mut(), &grads);
            loss_sum += loss;
            n_batches += 1;
        }
        let probs = predict_probabilities(model, val_data)?;
        let (val_auroc, val_auprc) = validation_metrics(&probs, &val_labels, n_classes);
        let score = match (val_auroc, val_auprc) {
            (Some(a), Some(p)) => a + p,
            _ => f64::NAN,
        };
        let (improved, stop) = stopping.observe(epoch, score);
        if improved {
            best = snapshot(model.params());
        }
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / n_batches.max(1) as f64,
            val_macro_auroc: val_auroc,
            val_macro_auprc: val_auprc,
            val_score: score,
            improved,
            stopped: stop,
        };
        tracing::info!(
            epoch,
            loss = record.train_loss,
            auroc = ?val_auroc,
            auprc = ?val_auprc,
            improved,
            "epoch done"
        );
        on_epoch(&record);
        history.push(record);
        if stop {
            break;
        }
    }
    restore(model.params_mut(), best);
    Ok(TrainOutcome {
        history,
        best_epoch: stopping.best_epoch.unwrap_or(0),
        best_score: stopping.best.unwrap_or(f64::NAN),
    })
}

/// Groups frozen by default when fine-tuning: every per-source tokenizer,
/// feature transformer, timestamp transformer and projection.
pub fn default_fine_tune_freeze(model: &Mitst) -> Vec<String> {
    model
        .config()
        .sources
        .iter()
        .flat_map(|s| {
            [
                tokenizer_group(&s.name),
                feature_transformer_group(&s.name),
                its_transformer_group(&s.name),
                projection_group(&s.name),
            ]
        })
        .collect()
}

/// Replaces the head with a fresh one for `n_classes` and trains with the
/// groups in `config.freeze` held fixed.
pub fn fine_tune(
    pretrained: &Mitst,
    n_classes: usize,
    train_data: &dyn Dataset,
    val_data: &dyn Dataset,
    config: &TrainConfig,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<(Mitst, TrainOutcome)> {
    // Reject bad group names before any work.
    trainable_mask(pretrained.params(), &config.freeze)?;
    let mut model = pretrained.with_fresh_head(n_classes, config.seed)?;
    let outcome = train(&mut model, train_data, val_data, config, on_epoch)?;
    Ok((model, outcome))
}

pub fn write_history_csv(path: &Path, history: &[EpochRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|source| Error::Csv {
        path: path.to_path_buf(),
        source,
    })?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut rows = vec![[
        "epoch".to_string(),
        "train_loss".into(),
        "val_auroc".into(),
        "val_auprc".into(),
        "stopped".into(),
    ]];
    rows.extend(history.iter().map(|r| {
        [
            r.epoch.to_string(),
            r.train_loss.to_string(),
            opt(r.val_macro_auroc),
            opt(r.val_macro_auprc),
            r.stopped.to_string(),
        ]
    }));
    for row in rows {
        w.write_record(&row).map_err(|source| Error::Csv {
            path: path.to_path_buf(),
            source,
        })?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
