//! Optimizers, the decaying learning-rate schedule, and the staged training
//! method: overfit one example, then a class-balanced subset, then the full
//! split. Runs are deterministic in the configured seed.

mod config;
mod optim;
mod run;
mod runlog;

pub use config::{OptimizerKind, Stage, TrainConfig, WeightSource};
pub use optim::{adam_step, lr_schedule, sgd_step, AdamParams, AdamState, Optimizer, OptimizerState, LR_SCHEDULE};
pub use run::{evaluate, evaluate_model, fit, overfit_single, run_stage, FitOutcome, OverfitOutcome, StageOutcome};
pub use runlog::{EpochRecord, RunLog};
