//! Losses, optimizer, checkpoints, and the training loop.

pub mod checkpoint;
pub mod loss;
pub mod optim;
pub mod partition;
pub mod train;

pub use checkpoint::{Checkpoint, CheckpointMeta};
pub use loss::{combined_loss, chair_loss, expert_loss, mu_weights, sample_loss, LossWeights, MuMode};
pub use optim::{Adam, OptimizerConfig};
pub use partition::{partition_dataset, IntentPartition, PartitionMode};
pub use train::{EpochLog, TrainConfig, TrainSet, Trainer};
