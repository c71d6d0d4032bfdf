//! Class-balanced training with early stopping and partial-freeze
//! fine-tuning.

mod dataset;
mod optim;
mod sampling;
mod trainer;

pub use dataset::{predict_probabilities, CohortDataset, Dataset, InMemoryDataset, Relabeled};
pub use optim::{cross_entropy, cross_entropy_grad, Adam, AdamConfig};
pub use sampling::{coverage, epoch_rng, undersample_epoch};
pub use trainer::{
    batch_gradients, default_fine_tune_freeze, fine_tune, train, trainable_mask, validation_metrics, write_history_csv,
    EarlyStopping, EpochRecord, TrainConfig, TrainOutcome,
};
