use std::fmt;
use std::str::FromStr;

use super::matrix::PredictionMatrix;
use crate::error::{Error, Result};

/// How an even split between the leading classes is resolved.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub enum TieBreak {
    /// The lowest class index among the tied classes. Independent of model order.
    #[default]
    LowestClass,
    /// The vote of the first model in the ensemble, when it is among the tied classes;
    /// otherwise the lowest tied class.
    FirstModel,
}

impl fmt::Display for TieBreak {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TieBreak::LowestClass => "lowest-class",
            TieBreak::FirstModel => "first-model",
        })
    }
}

impl FromStr for TieBreak {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lowest-class" => Ok(TieBreak::LowestClass),
            "first-model" => Ok(TieBreak::FirstModel),
            other => Err(Error::Config(format!(
                "unknown tie-break `{other}` (lowest-class, first-model)"
            ))),
        }
    }
}

/// Winner among `counts` (one per class); `first` is the first model's vote.
pub fn plurality(counts: &[u32], first: u8, tie: TieBreak) -> u8 {
    let max = counts.iter().copied().max().unwrap_or(0);
    if tie == TieBreak::FirstModel && counts[first as usize] == max {
        return first;
    }
    counts.iter().position(|&c| c == max).unwrap_or(0) as u8
}

/// Per-sample majority vote of the given models, in the given order.
pub fn majority_vote(matrix: &PredictionMatrix, models: &[usize], tie: TieBreak) -> Vec<u8> {
    if models.is_empty() {
        return Vec::new();
    }
    let mut counts = vec![0u32; matrix.classes()];
    (0..matrix.samples())
        .map(|s| {
            counts.fill(0);
            for &j in models {
                counts[matrix.row(j)[s] as usize] += 1;
            }
            plurality(&counts, matrix.row(models[0])[s], tie)
        })
        .collect()
}

pub fn accuracy(preds: &[u8], labels: &[u8]) -> f64 {
    let correct = preds.iter().zip(labels).filter(|(p, l)| p == l).count();
    correct as f64 / labels.len().max(1) as f64
}

/// Accuracy of the majority vote of `models`.
pub fn ensemble_accuracy(matrix: &PredictionMatrix, models: &[usize], tie: TieBreak) -> f64 {
    accuracy(&majority_vote(matrix, models, tie), matrix.labels())
}

/// Per-sample agreement and error summary of all models.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TroublesomeReport {
    pub models: usize,
    pub samples: usize,
    /// Number of models correct on each sample.
    pub correct_counts: Vec<u32>,
    /// Samples on which every model predicts the same class.
    pub agreement: usize,
    /// Samples every model gets wrong, by index.
    pub always_wrong: Vec<usize>,
    /// Samples more than half of the models get wrong, by index.
    pub majority_wrong: Vec<usize>,
}

pub fn troublesome_digits(matrix: &PredictionMatrix) -> TroublesomeReport {
    let k = matrix.models();
    let n = matrix.samples();
    let mut correct_counts = vec![0u32; n];
    let mut agreement = 0;
    for s in 0..n {
        let first = matrix.rows().first().map(|r| r[s]);
        let mut unanimous = true;
        for row in matrix.rows() {
            if row[s] == matrix.labels()[s] {
                correct_counts[s] += 1;
            }
            unanimous &= Some(row[s]) == first;
        }
        agreement += unanimous as usize;
    }
    let always_wrong = (0..n).filter(|&s| k > 0 && correct_counts[s] == 0).collect();
    let majority_wrong = (0..n)
        .filter(|&s| 2 * (correct_counts[s] as usize) < k)
        .collect();
    TroublesomeReport {
        models: k,
        samples: n,
        correct_counts,
        agreement,
        always_wrong,
        majority_wrong,
    }
}

impl fmt::Display for TroublesomeReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "models            {}", self.models)?;
        writeln!(f, "samples           {}", self.samples)?;
        writeln!(f, "full agreement    {}", self.agreement)?;
        let list = |v: &[usize]| v.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(", ");
        writeln!(
            f,
            "always wrong      {} [{}]",
            self.always_wrong.len(),
            list(&self.always_wrong)
        )?;
        write!(
            f,
            "majority wrong    {} [{}]",
            self.majority_wrong.len(),
            list(&self.majority_wrong)
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(labels: Vec<u8>, rows: Vec<Vec<u8>>) -> PredictionMatrix {
        PredictionMatrix::unnamed(10, labels, rows).unwrap()
    }

    #[test]
    fn single_model_is_itself() {
        let x = m(vec![0, 1, 2], vec![vec![3, 1, 4]]);
        assert_eq!(majority_vote(&x, &[0], TieBreak::LowestClass), vec![3, 1, 4]);
    }

    #[test]
    fn plain_majority() {
        let x = m(vec![0], vec![vec![2], vec![2], vec![7]]);
        assert_eq!(majority_vote(&x, &[0, 1, 2], TieBreak::LowestClass), vec![2]);
    }

    #[test]
    fn tie_rules() {
        let x = m(vec![0], vec![vec![7], vec![1], vec![1], vec![7]]);
        let all = [0, 1, 2, 3];
        assert_eq!(majority_vote(&x, &all, TieBreak::LowestClass), vec![1]);
        assert_eq!(majority_vote(&x, &all, TieBreak::FirstModel), vec![7]);
        assert_eq!(majority_vote(&x, &[1, 0, 2, 3], TieBreak::FirstModel), vec![1]);
    }

    #[test]
    fn accuracy_cases() {
        let perfect = m(vec![1, 2, 3], vec![vec![1, 2, 3]; 4]);
        assert_eq!(ensemble_accuracy(&perfect, &[0, 1, 2, 3], TieBreak::LowestClass), 1.0);
        let same = m(vec![1, 2, 3, 4], vec![vec![1, 0, 3, 0]; 3]);
        assert_eq!(ensemble_accuracy(&same, &[0, 1, 2], TieBreak::LowestClass), 0.5);
    }

    #[test]
    fn troublesome_cases() {
        let perfect = m(vec![1, 2, 3], vec![vec![1, 2, 3]; 3]);
        let r = troublesome_digits(&perfect);
        assert_eq!(r.agreement, 3);
        assert!(r.always_wrong.is_empty() && r.majority_wrong.is_empty());

        let one_off = m(vec![1, 2, 3], vec![vec![1, 2, 3], vec![1, 5, 3], vec![1, 2, 3]]);
        let r = troublesome_digits(&one_off);
        assert_eq!(r.agreement, 2);
        assert_eq!(r.correct_counts, vec![3, 2, 3]);

        let hard = m(vec![1, 2], vec![vec![0, 2], vec![0, 3], vec![4, 2]]);
        let r = troublesome_digits(&hard);
        assert_eq!(r.always_wrong, vec![0]);
        assert_eq!(r.majority_wrong, vec![0]);
        assert_eq!(r.agreement, 0);
    }
}
