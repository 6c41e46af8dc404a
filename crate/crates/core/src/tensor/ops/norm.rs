//! Batch normalisation over all leading axes, per trailing feature.
//!
//! The input is viewed as `[R, F]` where `F` is the product of the last
//! `feature_dims` extents. Convolution outputs (`N,H,W,C`) use one feature
//! axis; capsule class vectors (`N,m,d`) use two (per class and dimension)
//! or one (per dimension).

use crate::error::{Error, Result};
use crate::tensor::{Backward, Element, Graph, Tensor, Var};

pub const DEFAULT_EPS: f64 = 1e-5;
pub const DEFAULT_MOMENTUM: f64 = 0.99;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormMode {
    Train,
    Eval,
}

/// Exponentially averaged batch statistics used in eval mode.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
    pub momentum: T,
    pub eps: T,
}

impl<T: Element> RunningStats<T> {
    pub fn new(features: usize) -> Self {
        RunningStats {
            mean: vec![T::zero(); features],
            var: vec![T::one(); features],
            momentum: T::of_f64(DEFAULT_MOMENTUM),
            eps: T::of_f64(DEFAULT_EPS),
        }
    }

    pub fn features(&self) -> usize {
        self.mean.len()
    }
}

struct Layout {
    rows: usize,
    features: usize,
}

fn layout(shape: &[usize], feature_dims: usize, params: usize, stats: usize) -> Result<Layout> {
    const OP: &str = "batch_norm";
    if feature_dims == 0 || feature_dims >= shape.len() {
        return Err(Error::Shape {
            op: OP,
            msg: format!("feature_dims {feature_dims} invalid for shape {shape:?}"),
        });
    }
    let split = shape.len() - feature_dims;
    let features: usize = shape[split..].iter().product();
    let rows: usize = shape[..split].iter().product();
    for len in [params, stats] {
        if len != features {
            return Err(Error::Dimension {
                op: OP,
                axis: split,
                expected: features,
                actual: len,
            });
        }
    }
    Ok(Layout { rows, features })
}

/// Batch statistics observed in train mode, to be folded into [`RunningStats`].
#[derive(Clone, Debug)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub rows: usize,
}

impl<T: Element> RunningStats<T> {
    /// `running = momentum * running + (1 - momentum) * batch`, using the
    /// unbiased batch variance.
    pub fn update(&mut self, batch: &BatchStats) {
        let m = self.momentum.as_f64();
        let unbias = batch.rows as f64 / (batch.rows - 1).max(1) as f64;
        for f in 0..self.features() {
            self.mean[f] = T::of_f64(m * self.mean[f].as_f64() + (1.0 - m) * batch.mean[f]);
            self.var[f] =
                T::of_f64(m * self.var[f].as_f64() + (1.0 - m) * batch.var[f] * unbias);
        }
    }
}

/// Output of one normalisation: `y`, the statistics that were applied, and
/// the batch statistics when running in train mode.
pub struct Normalized<T> {
    pub output: Tensor<T>,
    pub mean: Vec<T>,
    pub inv_std: Vec<T>,
    pub batch: Option<BatchStats>,
}

/// Normalises without touching `stats`.
pub fn normalize<T: Element>(
    x: &Tensor<T>,
    gamma: &[T],
    beta: &[T],
    stats: &RunningStats<T>,
    mode: NormMode,
    feature_dims: usize,
) -> Result<Normalized<T>> {
    let Layout { rows, features } = layout(x.shape(), feature_dims, gamma.len(), stats.features())?;
    if beta.len() != features {
        return Err(Error::Dimension {
            op: "batch_norm",
            axis: x.rank() - feature_dims,
            expected: features,
            actual: beta.len(),
        });
    }
    let data = x.data();
    let (mean, inv_std, batch) = match mode {
        NormMode::Train => {
            if x.shape()[0] < 2 {
                return Err(Error::Unsupported(
                    "batch_norm in train mode needs a batch of at least 2".into(),
                ));
            }
            let mut sum = vec![0.0f64; features];
            for row in data.chunks_exact(features) {
                sum.iter_mut().zip(row).for_each(|(s, v)| *s += v.as_f64());
            }
            let mean: Vec<f64> = sum.iter().map(|s| s / rows as f64).collect();
            let mut sq = vec![0.0f64; features];
            for row in data.chunks_exact(features) {
                for ((s, v), m) in sq.iter_mut().zip(row).zip(&mean) {
                    let d = v.as_f64() - m;
                    *s += d * d;
                }
            }
            let var: Vec<f64> = sq.iter().map(|s| s / rows as f64).collect();
            let eps = stats.eps.as_f64();
            (
                mean.iter().map(|&v| T::of_f64(v)).collect::<Vec<T>>(),
                var.iter()
                    .map(|&v| T::of_f64(1.0 / (v + eps).sqrt()))
                    .collect::<Vec<T>>(),
                Some(BatchStats { mean, var, rows }),
            )
        }
        NormMode::Eval => (
            stats.mean.clone(),
            stats
                .var
                .iter()
                .map(|&v| T::one() / (v + stats.eps).sqrt())
                .collect(),
            None,
        ),
    };
    let mut out = Vec::with_capacity(data.len());
    for row in data.chunks_exact(features) {
        for f in 0..features {
            out.push(gamma[f] * (row[f] - mean[f]) * inv_std[f] + beta[f]);
        }
    }
    Ok(Normalized {
        output: Tensor::new(x.shape().to_vec(), out)?,
        mean,
        inv_std,
        batch,
    })
}

/// Normalises `x`; in train mode the running statistics are updated.
/// Returns `(y, mean, inv_std)` for the statistics actually applied.
pub fn batch_norm<T: Element>(
    x: &Tensor<T>,
    gamma: &[T],
    beta: &[T],
    stats: &mut RunningStats<T>,
    mode: NormMode,
    feature_dims: usize,
) -> Result<(Tensor<T>, Vec<T>, Vec<T>)> {
    let n = normalize(x, gamma, beta, stats, mode, feature_dims)?;
    if let Some(b) = &n.batch {
        stats.update(b);
    }
    Ok((n.output, n.mean, n.inv_std))
}

struct BatchNormBackward<T> {
    mode: NormMode,
    features: usize,
    mean: Vec<T>,
    inv_std: Vec<T>,
}

impl<T: Element> Backward<T> for BatchNormBackward<T> {
    fn name(&self) -> &'static str {
        "batch_norm"
    }

    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        _output: &Tensor<T>,
        grad_out: &[T],
        grads: &mut [Option<Vec<T>>],
    ) {
        let f_n = self.features;
        let x = inputs[0].data();
        let gamma = inputs[1].data();
        let rows = x.len() / f_n;

        let mut sum_g = vec![T::zero(); f_n];
        let mut sum_gx = vec![T::zero(); f_n];
        for (row, grow) in x.chunks_exact(f_n).zip(grad_out.chunks_exact(f_n)) {
            for f in 0..f_n {
                let xhat = (row[f] - self.mean[f]) * self.inv_std[f];
                sum_g[f] = sum_g[f] + grow[f];
                sum_gx[f] = sum_gx[f] + grow[f] * xhat;
            }
        }

        if let Some(dx) = grads[0].as_mut() {
            match self.mode {
                NormMode::Train => {
                    let r = T::of_f64(rows as f64);
                    for ((drow, row), grow) in dx
                        .chunks_exact_mut(f_n)
                        .zip(x.chunks_exact(f_n))
                        .zip(grad_out.chunks_exact(f_n))
                    {
                        for f in 0..f_n {
                            let xhat = (row[f] - self.mean[f]) * self.inv_std[f];
                            let g = grow[f] - sum_g[f] / r - xhat * sum_gx[f] / r;
                            drow[f] = drow[f] + gamma[f] * self.inv_std[f] * g;
                        }
                    }
                }
                NormMode::Eval => {
                    for (drow, grow) in dx.chunks_exact_mut(f_n).zip(grad_out.chunks_exact(f_n)) {
                        for f in 0..f_n {
                            drow[f] = drow[f] + gamma[f] * self.inv_std[f] * grow[f];
                        }
                    }
                }
            }
        }
        if let Some(dgamma) = grads[1].as_mut() {
            dgamma.iter_mut().zip(&sum_gx).for_each(|(a, &b)| *a = *a + b);
        }
        if let Some(dbeta) = grads[2].as_mut() {
            dbeta.iter_mut().zip(&sum_g).for_each(|(a, &b)| *a = *a + b);
        }
    }
}

impl<T: Element> Graph<T> {
    /// Records a batch norm and updates `stats` in train mode.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        stats: &mut RunningStats<T>,
        mode: NormMode,
        feature_dims: usize,
    ) -> Result<Var> {
        let (v, batch) = self.batch_norm_deferred(x, gamma, beta, stats, mode, feature_dims)?;
        if let Some(b) = batch {
            stats.update(&b);
        }
        Ok(v)
    }

    /// Records a batch norm, returning the batch statistics (train mode)
    /// instead of applying them to `stats`.
    pub fn batch_norm_deferred(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        stats: &RunningStats<T>,
        mode: NormMode,
        feature_dims: usize,
    ) -> Result<(Var, Option<BatchStats>)> {
        let n = normalize(
            self.value(x),
            self.value(gamma).data(),
            self.value(beta).data(),
            stats,
            mode,
            feature_dims,
        )?;
        let features = n.mean.len();
        let v = self.record(
            &[x, gamma, beta],
            n.output,
            Box::new(BatchNormBackward {
                mode,
                features,
                mean: n.mean,
                inv_std: n.inv_std,
            }),
        );
        Ok((v, n.batch))
    }
}
