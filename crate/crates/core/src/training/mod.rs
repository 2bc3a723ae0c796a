//! Multi-task training of the five system variants.

mod tasks;
mod trainer;

pub use tasks::{build_examples, eval_examples, reverse_examples, sample_task, Dataset, TaskData, TaskKind, TaskSpec, Variant};
pub use trainer::{train, train_reverse, train_step, train_variant, variant_dev, variant_tasks, LogRecord, TrainConfig, TrainOutcome, Trainer, VariantData};
