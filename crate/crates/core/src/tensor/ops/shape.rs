use crate::error::{Error, Result};
use crate::tensor::{strides, Backward, Element, Graph, Tensor, Var};

/// `src_index[i]` is the input element that lands at output position `i`.
fn permutation_map(shape: &[usize], perm: &[usize]) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut seen = vec![false; shape.len()];
    if perm.len() != shape.len() {
        return Err(Error::Shape {
            op: "permute",
            msg: format!("permutation {perm:?} does not match rank {}", shape.len()),
        });
    }
    for &p in perm {
        if p >= shape.len() || seen[p] {
            return Err(Error::Shape {
                op: "permute",
                msg: format!("{perm:?} is not a permutation of 0..{}", shape.len()),
            });
        }
        seen[p] = true;
    }
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let in_strides = strides(shape);
    let numel: usize = shape.iter().product();
    let mut src = Vec::with_capacity(numel);
    let mut idx = vec![0usize; out_shape.len()];
    for _ in 0..numel {
        src.push(
            idx.iter()
                .zip(perm)
                .map(|(&i, &p)| i * in_strides[p])
                .sum::<usize>(),
        );
        for ax in (0..out_shape.len()).rev() {
            idx[ax] += 1;
            if idx[ax] < out_shape[ax] {
                break;
            }
            idx[ax] = 0;
        }
    }
    Ok((out_shape, src))
}

/// Reorders axes: output axis `i` is input axis `perm[i]`.
pub fn permute<T: Element>(x: &Tensor<T>, perm: &[usize]) -> Result<Tensor<T>> {
    let (shape, src) = permutation_map(x.shape(), perm)?;
    let d = x.data();
    Tensor::new(shape, src.iter().map(|&s| d[s]).collect())
}

struct PermuteBackward {
    src: Vec<usize>,
}

impl<T: Element> Backward<T> for PermuteBackward {
    fn name(&self) -> &'static str {
        "permute"
    }

    fn backward(
        &self,
        _inputs: &[&Tensor<T>],
        _output: &Tensor<T>,
        grad_out: &[T],
        grads: &mut [Option<Vec<T>>],
    ) {
        if let Some(dx) = grads[0].as_mut() {
            for (&s, &g) in self.src.iter().zip(grad_out) {
                dx[s] = dx[s] + g;
            }
        }
    }
}

struct ReshapeBackward;

impl<T: Element> Backward<T> for ReshapeBackward {
    fn name(&self) -> &'static str {
        "reshape"
    }

    fn backward(
        &self,
        _inputs: &[&Tensor<T>],
        _output: &Tensor<T>,
        grad_out: &[T],
        grads: &mut [Option<Vec<T>>],
    ) {
        if let Some(dx) = grads[0].as_mut() {
            dx.iter_mut().zip(grad_out).for_each(|(d, &g)| *d = *d + g);
        }
    }
}

impl<T: Element> Graph<T> {
    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshaped(shape.to_vec())?;
        Ok(self.record(&[x], out, Box::new(ReshapeBackward)))
    }

    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let (shape, src) = permutation_map(self.shape(x), perm)?;
        let d = self.value(x).data();
        let out = Tensor::new(shape, src.iter().map(|&s| d[s]).collect())?;
        Ok(self.record(&[x], out, Box::new(PermuteBackward { src })))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transpose_2d() {
        let x = Tensor::<f64>::new(vec![2, 3], (0..6).map(f64::from).collect()).unwrap();
        let y = permute(&x, &[1, 0]).unwrap();
        assert_eq!(y.shape(), &[3, 2]);
        assert_eq!(y.data(), &[0.0, 3.0, 1.0, 4.0, 2.0, 5.0]);
    }

    #[test]
    fn inverse_permutation_restores_input() {
        let x = Tensor::<f64>::new(vec![2, 3, 4, 5], (0..120).map(f64::from).collect()).unwrap();
        let y = permute(&x, &[0, 3, 1, 2]).unwrap();
        let z = permute(&y, &[0, 2, 3, 1]).unwrap();
        assert_eq!(z, x);
    }

    #[test]
    fn rejects_non_permutations() {
        let x = Tensor::<f32>::zeros([2, 3]);
        assert!(permute(&x, &[0, 0]).is_err());
        assert!(permute(&x, &[0]).is_err());
    }
}
