//! Branching convolutional network with homogeneous vector capsules (HVCs).
//!
//! The crate is organised bottom-up:
//!
//! - [`tensor`]: channels-last tensors and tape-based reverse-mode autograd.
//! - [`capsule`]: capsule derivation, the HVC product and the branch merge.
//! - [`model`]: configurable network variants, parameter manifests and checkpoints.
//! - [`data`]: IDX loading, margin analysis and label-preserving augmentation.
//! - [`train`]: Adam, learning-rate schedule, weight EMA, the training loop and evaluation.
//! - [`ensemble`]: majority voting, exhaustive subset counting and troublesome-digit reports.
//! - [`config`]: the flat `key = value` run configuration shared with the CLI.

pub mod error;
pub mod capsule;
pub mod config;
pub mod data;
pub mod ensemble;
pub mod model;
pub mod tensor;
pub mod train;

pub use error::{Error, ErrorClass, Result};
pub use tensor::{Element, Graph, Tensor, Var};
