use crate::error::{Error, Result};
use crate::tensor::{gemm, Backward, Element, Graph, Tensor, Var};

fn dims(x: &[usize], w: &[usize]) -> Result<(usize, usize, usize)> {
    if x.len() != 2 || w.len() != 2 {
        return Err(Error::Shape {
            op: "matmul",
            msg: format!("expected rank-2 operands, got {x:?} and {w:?}"),
        });
    }
    if x[1] != w[0] {
        return Err(Error::Dimension {
            op: "matmul",
            axis: 1,
            expected: w[0],
            actual: x[1],
        });
    }
    Ok((x[0], x[1], w[1]))
}

/// `[N,D] x [D,M] -> [N,M]`.
pub fn matmul<T: Element>(x: &Tensor<T>, w: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, d, m) = dims(x.shape(), w.shape())?;
    let mut out = vec![T::zero(); n * m];
    gemm(false, false, n, d, m, x.data(), w.data(), &mut out, false);
    Tensor::new(vec![n, m], out)
}

struct MatmulBackward {
    n: usize,
    d: usize,
    m: usize,
}

impl<T: Element> Backward<T> for MatmulBackward {
    fn name(&self) -> &'static str {
        "matmul"
    }

    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        _output: &Tensor<T>,
        grad_out: &[T],
        grads: &mut [Option<Vec<T>>],
    ) {
        let (n, d, m) = (self.n, self.d, self.m);
        if let Some(dx) = grads[0].as_mut() {
            gemm(false, true, n, m, d, grad_out, inputs[1].data(), dx, true);
        }
        if let Some(dw) = grads[1].as_mut() {
            gemm(true, false, d, n, m, inputs[0].data(), grad_out, dw, true);
        }
    }
}

impl<T: Element> Graph<T> {
    pub fn matmul(&mut self, x: Var, w: Var) -> Result<Var> {
        let (n, d, m) = dims(self.shape(x), self.shape(w))?;
        let out = matmul(self.value(x), self.value(w))?;
        Ok(self.record(&[x, w], out, Box::new(MatmulBackward { n, d, m })))
    }
}
