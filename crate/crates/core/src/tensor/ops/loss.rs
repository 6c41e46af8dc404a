use crate::error::{Error, Result};
use crate::tensor::{Backward, Element, Graph, Tensor, Var};

/// Row-wise max-subtracted softmax and the mean negative log-likelihood of
/// `labels`. Returns `(loss, probs)`.
pub fn softmax_cross_entropy<T: Element>(
    logits: &Tensor<T>,
    labels: &[usize],
) -> Result<(T, Tensor<T>)> {
    let shape = logits.shape();
    if shape.len() != 2 {
        return Err(Error::Shape {
            op: "softmax_cross_entropy",
            msg: format!("logits must be [N, M], got {shape:?}"),
        });
    }
    let (n, m) = (shape[0], shape[1]);
    if labels.len() != n {
        return Err(Error::Dimension {
            op: "softmax_cross_entropy",
            axis: 0,
            expected: n,
            actual: labels.len(),
        });
    }
    if let Some((sample, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= m) {
        return Err(Error::LabelOutOfRange {
            sample,
            label,
            classes: m,
        });
    }
    let mut probs = Vec::with_capacity(n * m);
    let mut total = 0.0f64;
    for (row, &label) in logits.data().chunks_exact(m).zip(labels) {
        let max = row.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
        let shifted: Vec<f64> = row.iter().map(|&v| (v - max).as_f64()).collect();
        let log_z = shifted.iter().map(|s| s.exp()).sum::<f64>().ln();
        total += log_z - shifted[label];
        probs.extend(shifted.iter().map(|s| T::of_f64((s - log_z).exp())));
    }
    Ok((
        T::of_f64(total / n as f64),
        Tensor::new(vec![n, m], probs)?,
    ))
}

struct SoftmaxCeBackward<T> {
    probs: Vec<T>,
    labels: Vec<usize>,
    classes: usize,
}

impl<T: Element> Backward<T> for SoftmaxCeBackward<T> {
    fn name(&self) -> &'static str {
        "softmax_cross_entropy"
    }

    fn backward(
        &self,
        _inputs: &[&Tensor<T>],
        _output: &Tensor<T>,
        grad_out: &[T],
        grads: &mut [Option<Vec<T>>],
    ) {
        let Some(dx) = grads[0].as_mut() else { return };
        let m = self.classes;
        let scale = grad_out[0] / T::of_f64(self.labels.len() as f64);
        for ((d, p), &label) in dx
            .chunks_exact_mut(m)
            .zip(self.probs.chunks_exact(m))
            .zip(&self.labels)
        {
            for c in 0..m {
                let target = if c == label { T::one() } else { T::zero() };
                d[c] = d[c] + (p[c] - target) * scale;
            }
        }
    }
}

impl<T: Element> Graph<T> {
    /// Records the scalar loss; the probabilities are returned by value.
    pub fn softmax_cross_entropy(
        &mut self,
        logits: Var,
        labels: &[usize],
    ) -> Result<(Var, Tensor<T>)> {
        let (loss, probs) = softmax_cross_entropy(self.value(logits), labels)?;
        let classes = probs.shape()[1];
        let op = SoftmaxCeBackward {
            probs: probs.data().to_vec(),
            labels: labels.to_vec(),
            classes,
        };
        let v = self.record(&[logits], Tensor::scalar(loss), Box::new(op));
        Ok((v, probs))
    }
}
