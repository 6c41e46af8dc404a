//! Optimisation and evaluation: Adam, the learning-rate schedule, weight EMA
//! and the epoch loop.

mod optim;
mod trainer;

pub use optim::{lr_at, Adam, Ema, Slot, ADAM_EPS, BETA1, BETA2};
pub use trainer::{
    evaluate, evaluate_checkpoint, train, EpochMetrics, Evaluation, OutputDir, TrainConfig,
    TrainState, METRICS_HEADER,
};
