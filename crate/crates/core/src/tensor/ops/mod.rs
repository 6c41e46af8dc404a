//! Forward kernels on plain tensors plus their recording wrappers on [`Graph`](super::Graph).

pub mod conv;
pub mod elementwise;
pub mod linear;
pub mod loss;
pub mod norm;
pub mod reduce;
pub mod shape;

pub use conv::conv2d_valid;
pub use elementwise::{add, mul, relu};
pub use linear::matmul;
pub use loss::softmax_cross_entropy;
pub use norm::{batch_norm, normalize, BatchStats, NormMode, RunningStats};
pub use reduce::reduce_sum;
pub use shape::permute;
