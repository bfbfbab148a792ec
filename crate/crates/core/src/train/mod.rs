//! Deterministic training: Adam with warmup, length-bucketed batches,
//! periodic validation, checkpoints and checkpoint averaging.

mod adam;
mod batching;
mod checkpoint;
mod run_config;
mod schedule;
mod trainer;

pub use adam::{adam_step, clip_grad_norm, AdamConfig, TrainState};
pub use batching::epoch_batches;
pub use checkpoint::{average_checkpoints, Checkpoint, MAGIC, VERSION};
pub use run_config::{RunConfig, TrainConfig};
pub use schedule::lr_schedule;
pub use trainer::{evaluate_losses, train, DevMetrics, MetricsRecord, StepLosses, TrainOutcome};
