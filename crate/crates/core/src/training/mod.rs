//! Adversarial training: batch sampling, the three optimization phases with
//! partition freezing, validation-based stopping and iteration traces.

mod batch;
mod trainer;

pub use crate::model::AdversarialObjective;
pub use batch::{check_batchable, group_by_subject, sample_batch, Batch};
pub use trainer::{train, write_trace_csv, IterationTrace, TrainConfig, TrainOutcome, Trainer};
