//! Majority-vote ensembles over stored prediction matrices.

mod matrix;
mod subsets;
mod vote;

pub use matrix::{PredictionMatrix, MATRIX_MAGIC, MATRIX_VERSION};
pub use subsets::{
    enumerate_subsets, parse_threshold, sample_subsets, SubsetCountReport, SubsetFamily,
    MAX_EXHAUSTIVE_MODELS,
};
pub use vote::{
    accuracy, ensemble_accuracy, majority_vote, plurality, troublesome_digits, TieBreak,
    TroublesomeReport,
};
