use crate::error::{Error, Result};
use crate::tensor::{strides, Backward, Element, Graph, Tensor, Var};

/// For every input element, the flat index of the output element it sums into.
struct ReducePlan {
    out_shape: Vec<usize>,
    target: Vec<usize>,
}

fn plan(shape: &[usize], axes: &[usize]) -> Result<ReducePlan> {
    let mut reduced = vec![false; shape.len()];
    for &a in axes {
        if a >= shape.len() {
            return Err(Error::Shape {
                op: "reduce_sum",
                msg: format!("axis {a} out of range for rank {}", shape.len()),
            });
        }
        if reduced[a] {
            return Err(Error::Shape {
                op: "reduce_sum",
                msg: format!("axis {a} repeated"),
            });
        }
        reduced[a] = true;
    }
    let kept: Vec<usize> = (0..shape.len()).filter(|&i| !reduced[i]).collect();
    let out_shape: Vec<usize> = if kept.is_empty() {
        vec![1]
    } else {
        kept.iter().map(|&i| shape[i]).collect()
    };
    let out_strides = strides(&out_shape);
    // stride of each input axis inside the output (0 for reduced axes)
    let mut axis_stride = vec![0; shape.len()];
    for (k, &i) in kept.iter().enumerate() {
        axis_stride[i] = out_strides[k];
    }
    let numel: usize = shape.iter().product();
    let mut target = Vec::with_capacity(numel);
    let mut idx = vec![0usize; shape.len()];
    let mut flat = 0usize;
    for _ in 0..numel {
        target.push(flat);
        for ax in (0..shape.len()).rev() {
            idx[ax] += 1;
            flat += axis_stride[ax];
            if idx[ax] < shape[ax] {
                break;
            }
            flat -= axis_stride[ax] * shape[ax];
            idx[ax] = 0;
        }
    }
    Ok(ReducePlan { out_shape, target })
}

/// Sums over `axes`, removing them. Reducing every axis yields shape `[1]`.
pub fn reduce_sum<T: Element>(x: &Tensor<T>, axes: &[usize]) -> Result<Tensor<T>> {
    let p = plan(x.shape(), axes)?;
    Ok(apply(&p, x))
}

fn apply<T: Element>(p: &ReducePlan, x: &Tensor<T>) -> Tensor<T> {
    let mut out = vec![T::zero(); p.out_shape.iter().product()];
    for (&t, &v) in p.target.iter().zip(x.data()) {
        out[t] = out[t] + v;
    }
    Tensor::new(p.out_shape.clone(), out).expect("plan shape")
}

struct ReduceBackward {
    target: Vec<usize>,
}

impl<T: Element> Backward<T> for ReduceBackward {
    fn name(&self) -> &'static str {
        "reduce_sum"
    }

    fn backward(
        &self,
        _inputs: &[&Tensor<T>],
        _output: &Tensor<T>,
        grad_out: &[T],
        grads: &mut [Option<Vec<T>>],
    ) {
        if let Some(dx) = grads[0].as_mut() {
            for (d, &t) in dx.iter_mut().zip(&self.target) {
                *d = *d + grad_out[t];
            }
        }
    }
}

impl<T: Element> Graph<T> {
    pub fn reduce_sum(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let p = plan(self.shape(x), axes)?;
        let out = apply(&p, self.value(x));
        Ok(self.record(&[x], out, Box::new(ReduceBackward { target: p.target })))
    }
}
