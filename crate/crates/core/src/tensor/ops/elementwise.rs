use crate::error::{Error, Result};
use crate::tensor::{Backward, Element, Graph, Tensor, Var};

/// Period of `b` inside `a` under the module's broadcasting rule: `b` is
/// repeated every `period` elements of `a`.
fn broadcast_period(op: &'static str, a: &[usize], b: &[usize]) -> Result<usize> {
    let b_numel: usize = b.iter().product();
    if a == b || b_numel == 1 {
        return Ok(b_numel);
    }
    if b.len() <= a.len() && a[a.len() - b.len()..] == *b {
        return Ok(b_numel);
    }
    let axis = a.len().saturating_sub(b.len());
    Err(Error::Shape {
        op,
        msg: format!("shape {b:?} does not broadcast onto {a:?} (first mismatch near axis {axis})"),
    })
}

fn binary<T: Element>(
    op: &'static str,
    a: &Tensor<T>,
    b: &Tensor<T>,
    f: impl Fn(T, T) -> T,
) -> Result<Tensor<T>> {
    let period = broadcast_period(op, a.shape(), b.shape())?;
    let bd = b.data();
    let data = a
        .data()
        .chunks_exact(period)
        .flat_map(|chunk| chunk.iter().zip(bd).map(|(&x, &y)| f(x, y)))
        .collect();
    Tensor::new(a.shape().to_vec(), data)
}

/// Hadamard product with suffix broadcasting of `b`.
pub fn mul<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    binary("mul", a, b, |x, y| x * y)
}

pub fn add<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    binary("add", a, b, |x, y| x + y)
}

pub fn relu<T: Element>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

struct MulBackward {
    period: usize,
}

impl<T: Element> Backward<T> for MulBackward {
    fn name(&self) -> &'static str {
        "mul"
    }

    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        _output: &Tensor<T>,
        grad_out: &[T],
        grads: &mut [Option<Vec<T>>],
    ) {
        let (a, b) = (inputs[0].data(), inputs[1].data());
        let p = self.period;
        if let Some(da) = grads[0].as_mut() {
            for (d, g) in da.chunks_exact_mut(p).zip(grad_out.chunks_exact(p)) {
                for i in 0..p {
                    d[i] = d[i] + g[i] * b[i];
                }
            }
        }
        if let Some(db) = grads[1].as_mut() {
            for (g, x) in grad_out.chunks_exact(p).zip(a.chunks_exact(p)) {
                for i in 0..p {
                    db[i] = db[i] + g[i] * x[i];
                }
            }
        }
    }
}

struct AddBackward {
    period: usize,
}

impl<T: Element> Backward<T> for AddBackward {
    fn name(&self) -> &'static str {
        "add"
    }

    fn backward(
        &self,
        _inputs: &[&Tensor<T>],
        _output: &Tensor<T>,
        grad_out: &[T],
        grads: &mut [Option<Vec<T>>],
    ) {
        if let Some(da) = grads[0].as_mut() {
            da.iter_mut().zip(grad_out).for_each(|(d, &g)| *d = *d + g);
        }
        if let Some(db) = grads[1].as_mut() {
            for g in grad_out.chunks_exact(self.period) {
                db.iter_mut().zip(g).for_each(|(d, &g)| *d = *d + g);
            }
        }
    }
}

struct ReluBackward;

impl<T: Element> Backward<T> for ReluBackward {
    fn name(&self) -> &'static str {
        "relu"
    }

    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        _output: &Tensor<T>,
        grad_out: &[T],
        grads: &mut [Option<Vec<T>>],
    ) {
        if let Some(dx) = grads[0].as_mut() {
            for ((d, &x), &g) in dx.iter_mut().zip(inputs[0].data()).zip(grad_out) {
                // subgradient at exactly zero is zero
                if x > T::zero() {
                    *d = *d + g;
                }
            }
        }
    }
}

impl<T: Element> Graph<T> {
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let period = broadcast_period("mul", self.shape(a), self.shape(b))?;
        let out = mul(self.value(a), self.value(b))?;
        Ok(self.record(&[a, b], out, Box::new(MulBackward { period })))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let period = broadcast_period("add", self.shape(a), self.shape(b))?;
        let out = add(self.value(a), self.value(b))?;
        Ok(self.record(&[a, b], out, Box::new(AddBackward { period })))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = relu(self.value(x));
        self.record(&[x], out, Box::new(ReluBackward))
    }
}
