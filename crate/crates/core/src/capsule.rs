//! Capsule head: feature maps -> capsules -> HVC class vectors -> branch
//! logits, and the weighted merge of the branch logits.
//!
//! Shapes used throughout: feature maps `[N,H,W,C]`, capsules `[N,n,d]`,
//! HVC weights `[n,m,d]` (one weight vector per capsule/class pair), class
//! vectors `[N,m,d]`, logits `[N,m]`.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::ops::permute;
use crate::tensor::{Backward, Element, Graph, Tensor, Var};

/// How feature maps are cut into capsules.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum CapsuleDerivation {
    /// One capsule per feature map: `n = C`, `d = H*W`, flattened row-major.
    XY,
    /// One capsule per spatial position: `n = H*W`, `d = C`, the channel fiber.
    Z,
}

impl CapsuleDerivation {
    /// `(n, d)` for `H x W x C` feature maps.
    pub fn capsule_shape(self, h: usize, w: usize, c: usize) -> (usize, usize) {
        match self {
            CapsuleDerivation::XY => (c, h * w),
            CapsuleDerivation::Z => (h * w, c),
        }
    }
}

impl fmt::Display for CapsuleDerivation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CapsuleDerivation::XY => "xy",
            CapsuleDerivation::Z => "z",
        })
    }
}

impl FromStr for CapsuleDerivation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "xy" => Ok(CapsuleDerivation::XY),
            "z" => Ok(CapsuleDerivation::Z),
            other => Err(Error::Config(format!("unknown capsule derivation `{other}`"))),
        }
    }
}

/// Axis set for the batch norm applied to HVC class vectors.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub enum CapsuleNorm {
    /// Statistics and affine parameters per (class, dimension) pair: `2*m*d` parameters.
    #[default]
    PerClassDim,
    /// Statistics pooled over classes, parameters per dimension: `2*d` parameters.
    PerDim,
}

impl CapsuleNorm {
    pub fn feature_dims(self) -> usize {
        match self {
            CapsuleNorm::PerClassDim => 2,
            CapsuleNorm::PerDim => 1,
        }
    }

    pub fn features(self, classes: usize, dim: usize) -> usize {
        match self {
            CapsuleNorm::PerClassDim => classes * dim,
            CapsuleNorm::PerDim => dim,
        }
    }
}

impl fmt::Display for CapsuleNorm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CapsuleNorm::PerClassDim => "class-dim",
            CapsuleNorm::PerDim => "dim",
        })
    }
}

impl FromStr for CapsuleNorm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "class-dim" => Ok(CapsuleNorm::PerClassDim),
            "dim" => Ok(CapsuleNorm::PerDim),
            other => Err(Error::Config(format!("unknown capsule norm `{other}`"))),
        }
    }
}

/// Branch-weighting regime for the merge.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum MergeKind {
    /// Weights fixed at 1, invisible to the optimizer.
    NotLearnable,
    /// Learned, initialised uniformly in `[-1, 1]`.
    RandomInit,
    /// Learned, initialised to 1.
    OnesInit,
}

impl MergeKind {
    pub fn learnable(self) -> bool {
        !matches!(self, MergeKind::NotLearnable)
    }
}

impl fmt::Display for MergeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MergeKind::NotLearnable => "not-learnable",
            MergeKind::RandomInit => "random-init",
            MergeKind::OnesInit => "ones-init",
        })
    }
}

impl FromStr for MergeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "not-learnable" => Ok(MergeKind::NotLearnable),
            "random-init" => Ok(MergeKind::RandomInit),
            "ones-init" => Ok(MergeKind::OnesInit),
            other => Err(Error::Config(format!("unknown merge kind `{other}`"))),
        }
    }
}

fn fmap_dims(shape: &[usize]) -> Result<[usize; 4]> {
    shape.try_into().map_err(|_| Error::Shape {
        op: "derive_capsules",
        msg: format!("feature maps must be N,H,W,C; got {shape:?}"),
    })
}

/// Cuts `[N,H,W,C]` feature maps into `[N,n,d]` capsules. Pure permutation.
pub fn derive_capsules<T: Element>(fmaps: &Tensor<T>, mode: CapsuleDerivation) -> Result<Tensor<T>> {
    let [n, h, w, c] = fmap_dims(fmaps.shape())?;
    match mode {
        CapsuleDerivation::Z => fmaps.clone().reshaped(vec![n, h * w, c]),
        CapsuleDerivation::XY => permute(fmaps, &[0, 3, 1, 2])?.reshaped(vec![n, c, h * w]),
    }
}

/// Inverse of [`derive_capsules`] for maps of extent `h x w x c`.
pub fn underive_capsules<T: Element>(
    caps: &Tensor<T>,
    mode: CapsuleDerivation,
    h: usize,
    w: usize,
    c: usize,
) -> Result<Tensor<T>> {
    let n = caps.shape()[0];
    match mode {
        CapsuleDerivation::Z => caps.clone().reshaped(vec![n, h, w, c]),
        CapsuleDerivation::XY => {
            let maps = caps.clone().reshaped(vec![n, c, h, w])?;
            permute(&maps, &[0, 2, 3, 1])
        }
    }
}

fn hvc_dims(caps: &[usize], w: &[usize]) -> Result<(usize, usize, usize, usize)> {
    const OP: &str = "hvc_class_vectors";
    if caps.len() != 3 || w.len() != 3 {
        return Err(Error::Shape {
            op: OP,
            msg: format!("expected caps [N,n,d] and weights [n,m,d], got {caps:?} and {w:?}"),
        });
    }
    if caps[1] != w[0] {
        return Err(Error::Dimension {
            op: OP,
            axis: 1,
            expected: w[0],
            actual: caps[1],
        });
    }
    if caps[2] != w[2] {
        return Err(Error::Dimension {
            op: OP,
            axis: 2,
            expected: w[2],
            actual: caps[2],
        });
    }
    Ok((caps[0], caps[1], w[1], caps[2]))
}

/// `out[b,c,:] = sum_i caps[b,i,:] * w[i,c,:]`: element-wise products of each
/// capsule with its per-class weight vector, summed over capsules.
pub fn hvc_class_vectors<T: Element>(caps: &Tensor<T>, w: &Tensor<T>) -> Result<Tensor<T>> {
    let (batch, n, m, d) = hvc_dims(caps.shape(), w.shape())?;
    let wd = w.data();
    let mut out = vec![T::zero(); batch * m * d];
    out.par_chunks_mut(m * d)
        .zip(caps.data().par_chunks(n * d))
        .for_each(|(o, cb)| {
            for (i, cap) in cb.chunks_exact(d).enumerate() {
                let wi = &wd[i * m * d..(i + 1) * m * d];
                for (oc, wc) in o.chunks_exact_mut(d).zip(wi.chunks_exact(d)) {
                    for k in 0..d {
                        oc[k] = oc[k] + cap[k] * wc[k];
                    }
                }
            }
        });
    Tensor::new(vec![batch, m, d], out)
}

struct HvcBackward {
    n: usize,
    m: usize,
    d: usize,
}

impl<T: Element> Backward<T> for HvcBackward {
    fn name(&self) -> &'static str {
        "hvc_class_vectors"
    }

    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        _output: &Tensor<T>,
        grad_out: &[T],
        grads: &mut [Option<Vec<T>>],
    ) {
        let (n, m, d) = (self.n, self.m, self.d);
        let (caps, w) = (inputs[0].data(), inputs[1].data());
        let (gc, gw) = grads.split_at_mut(1);
        if let Some(dcaps) = gc[0].as_mut() {
            dcaps
                .par_chunks_mut(n * d)
                .zip(grad_out.par_chunks(m * d))
                .for_each(|(dc, g)| {
                    for (i, dci) in dc.chunks_exact_mut(d).enumerate() {
                        let wi = &w[i * m * d..(i + 1) * m * d];
                        for (gcl, wc) in g.chunks_exact(d).zip(wi.chunks_exact(d)) {
                            for k in 0..d {
                                dci[k] = dci[k] + gcl[k] * wc[k];
                            }
                        }
                    }
                });
        }
        if let Some(dw) = gw[0].as_mut() {
            dw.par_chunks_mut(m * d).enumerate().for_each(|(i, dwi)| {
                for (cb, g) in caps.chunks_exact(n * d).zip(grad_out.chunks_exact(m * d)) {
                    let cap = &cb[i * d..(i + 1) * d];
                    for (dwc, gcl) in dwi.chunks_exact_mut(d).zip(g.chunks_exact(d)) {
                        for k in 0..d {
                            dwc[k] = dwc[k] + gcl[k] * cap[k];
                        }
                    }
                }
            });
        }
    }
}

/// Sum of the class-vector components: `[N,m,d] -> [N,m]`.
pub fn branch_logits<T: Element>(class_vectors: &Tensor<T>) -> Result<Tensor<T>> {
    crate::tensor::ops::reduce_sum(class_vectors, &[2])
}

fn merge_check<T: Element>(shapes: &[&[usize]], weights: usize) -> Result<()> {
    if shapes.len() != weights {
        return Err(Error::Config(format!(
            "merge has {weights} branch weights but {} branches",
            shapes.len()
        )));
    }
    if let Some(first) = shapes.first() {
        for s in shapes {
            if s != first {
                return Err(Error::Shape {
                    op: "merge_branches",
                    msg: format!("branch logits disagree: {first:?} vs {s:?}"),
                });
            }
        }
    }
    Ok(())
}

/// `out = sum_b weights[b] * logits[b]`.
pub fn merge_branches<T: Element>(logits: &[&Tensor<T>], weights: &[T]) -> Result<Tensor<T>> {
    let shapes: Vec<&[usize]> = logits.iter().map(|t| t.shape()).collect();
    merge_check::<T>(&shapes, weights.len())?;
    let first = logits.first().ok_or_else(|| Error::Config("merge of zero branches".into()))?;
    let mut out = vec![T::zero(); first.numel()];
    for (t, &w) in logits.iter().zip(weights) {
        out.iter_mut().zip(t.data()).for_each(|(o, &v)| *o = *o + w * v);
    }
    Tensor::new(first.shape().to_vec(), out)
}

struct MergeBackward;

impl<T: Element> Backward<T> for MergeBackward {
    fn name(&self) -> &'static str {
        "merge_branches"
    }

    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        _output: &Tensor<T>,
        grad_out: &[T],
        grads: &mut [Option<Vec<T>>],
    ) {
        let branches = inputs.len() - 1;
        let weights = inputs[branches].data().to_vec();
        let (gl, gw) = grads.split_at_mut(branches);
        for (b, slot) in gl.iter_mut().enumerate() {
            if let Some(dl) = slot.as_mut() {
                dl.iter_mut()
                    .zip(grad_out)
                    .for_each(|(d, &g)| *d = *d + g * weights[b]);
            }
        }
        if let Some(dw) = gw[0].as_mut() {
            for b in 0..branches {
                let s = grad_out
                    .iter()
                    .zip(inputs[b].data())
                    .fold(T::zero(), |acc, (&g, &v)| acc + g * v);
                dw[b] = dw[b] + s;
            }
        }
    }
}

impl<T: Element> Graph<T> {
    pub fn derive_capsules(&mut self, fmaps: Var, mode: CapsuleDerivation) -> Result<Var> {
        let [n, h, w, c] = fmap_dims(self.shape(fmaps))?;
        match mode {
            CapsuleDerivation::Z => self.reshape(fmaps, &[n, h * w, c]),
            CapsuleDerivation::XY => {
                let p = self.permute(fmaps, &[0, 3, 1, 2])?;
                self.reshape(p, &[n, c, h * w])
            }
        }
    }

    pub fn hvc_class_vectors(&mut self, caps: Var, w: Var) -> Result<Var> {
        let (_, n, m, d) = hvc_dims(self.shape(caps), self.shape(w))?;
        let out = hvc_class_vectors(self.value(caps), self.value(w))?;
        Ok(self.record(&[caps, w], out, Box::new(HvcBackward { n, m, d })))
    }

    pub fn branch_logits(&mut self, class_vectors: Var) -> Result<Var> {
        self.reduce_sum(class_vectors, &[2])
    }

    /// `weights` is a rank-1 tensor with one entry per branch.
    pub fn merge_branches(&mut self, logits: &[Var], weights: Var) -> Result<Var> {
        let refs: Vec<&Tensor<T>> = logits.iter().map(|&v| self.value(v)).collect();
        let out = merge_branches(&refs, self.value(weights).data())?;
        let mut inputs = logits.to_vec();
        inputs.push(weights);
        Ok(self.record(&inputs, out, Box::new(MergeBackward)))
    }
}
