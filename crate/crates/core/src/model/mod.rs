//! Network variants: configuration, parameter manifest, forward pass and checkpoints.

mod checkpoint;
mod config;
mod manifest;
mod network;

pub use checkpoint::{Checkpoint, OptimizerState, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{
    default_ladder, receptive_field, Head, ModelConfig, Tap, BRANCH_TAPS, CONV_DEPTH,
    LADDER_START, LADDER_STEP,
};
pub use manifest::{ParamEntry, ParamManifest, Role};
pub use network::{argmax, Forward, Model};
