//! Small dense networks, Adam, replay memory and the DDPG update.

mod adam;
mod ddpg;
mod mlp;
mod replay;

pub use adam::Adam;
pub use ddpg::{DdpgAgent, DdpgConfig, UpdateStats};
pub use mlp::{Activation, BatchTrace, Gradients, Layer, Mlp, Trace};
pub use replay::{ReplayBuffer, Transition};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NeuroError {
    #[error("shape mismatch: expected {expected} values, got {got}")]
    Shape { expected: usize, got: usize },
    #[error("cannot sample {requested} transitions from a buffer holding {available}")]
    InsufficientSamples { requested: usize, available: usize },
    #[error("training diverged: {0}")]
    Diverged(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("checkpoint parse error: {0}")]
    Checkpoint(#[from] serde_json::Error),
}
