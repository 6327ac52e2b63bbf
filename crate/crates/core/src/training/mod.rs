//! Tri-stage training, checkpoints and the inference pipeline.

pub mod checkpoint;
pub mod data;
pub mod inference;
pub mod model;
pub mod optim;
pub mod stages;

pub use checkpoint::Checkpoint;
pub use data::{
    build_items, extract_features, norm_stats_for, DataSelector, PairKind, PairedItem, RawUtterance,
};
pub use inference::Recognizer;
pub use model::Model;
pub use optim::{Adam, Schedule, StepOutcome};
pub use stages::{
    batch_gradients, finetune, pretrain, representations, run_stage, run_stage_with,
    stage_objective, train_baseline, train_noisyd, ItemReps, Objective, Stage, StageSummary,
    StepLog,
};
