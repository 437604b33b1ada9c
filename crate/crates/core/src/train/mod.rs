//! Optimisation and evaluation: Adam, the learning-rate schedule, metrics,
//! training history and the epoch loop.

mod adam;
mod config;
mod history;
mod metrics;
mod run;

pub use adam::Adam;
pub use config::{lr_at, TrainConfig};
pub use history::{EpochRecord, TrainHistory};
pub use metrics::{compute_metrics, ClassScores, Metrics};
pub use run::{derive_seed, evaluate, predict_classes, prepare, train, train_from, Example, TrainOutcome};
