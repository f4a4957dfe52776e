//! Adversarial image model: networks, training loop and checkpoints.

mod checkpoint;
mod config;
mod nets;
mod train;

pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::GanConfig;
pub use nets::{
    sample_latent, BnMode, Discriminator, Generator, Parameter, RunningStats, BN_MOMENTUM,
    LEAKY_SLOPE, P_MIN,
};
pub use train::{train, EpochMetrics, StepMetrics};
