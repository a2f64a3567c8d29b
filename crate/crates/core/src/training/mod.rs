//! Synthetic captioning task, optimizer and the deterministic training
//! loop.

mod eval;
mod optim;
mod task;
mod trainer;

pub use eval::{cosine, eval_alignment, AlignmentReport};
pub use optim::{sgd_step, sgd_update, MomentumState};
pub use task::{synth_batch, SyntheticBatch, TaskParams, TaskSpec};
pub use trainer::{
    holdout_batches, train, MetricsRecord, MetricsTrace, TrainConfig, TrainOutcome, Variant, HOLDOUT_SIZE,
};

#[cfg(test)]
mod tests;
