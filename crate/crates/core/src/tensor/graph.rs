use super::{Element, Tensor};
use crate::error::{Error, Result};

/// Handle to a node recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Reverse-mode rule for one recorded operation.
///
/// `grads[i]` is `Some` exactly when input `i` requires a gradient; it is
/// zero-initialised with the input's element count and the rule accumulates
/// into it.
pub trait Backward<T: Element>: Send {
    fn name(&self) -> &'static str;

    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        output: &Tensor<T>,
        grad_out: &[T],
        grads: &mut [Option<Vec<T>>],
    );
}

struct Node<T: Element> {
    value: Tensor<T>,
    requires_grad: bool,
    grad: Option<Vec<T>>,
    inputs: Vec<Var>,
    op: Option<Box<dyn Backward<T>>>,
}

/// Append-only operation tape. Nodes are stored in creation order, which is
/// a topological order by construction.
pub struct Graph<T: Element> {
    nodes: Vec<Node<T>>,
    consumed: bool,
}

impl<T: Element> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            consumed: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Input that gradients flow into.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    /// Input that gradients never reach.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            grad: None,
            inputs: Vec::new(),
            op: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records `output = op(inputs)`. The backward rule is kept only if some
    /// input requires a gradient.
    pub fn record(
        &mut self,
        inputs: &[Var],
        output: Tensor<T>,
        op: Box<dyn Backward<T>>,
    ) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value: output,
            requires_grad,
            grad: None,
            inputs: if requires_grad { inputs.to_vec() } else { Vec::new() },
            op: if requires_grad { Some(op) } else { None },
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Vec<T>> {
        self.nodes[v.0].grad.take()
    }

    /// Populates gradients of every gradient-requiring leaf with respect to
    /// the scalar `loss`. Intermediate gradients are released as soon as
    /// they have been propagated. A graph can be differentiated only once.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.consumed {
            return Err(Error::GraphConsumed);
        }
        let node = &self.nodes[loss.0];
        if node.value.numel() != 1 {
            return Err(Error::NotScalar(node.value.shape().to_vec()));
        }
        if !node.requires_grad {
            return Err(Error::Detached);
        }
        self.consumed = true;
        self.nodes[loss.0].grad = Some(vec![T::one()]);

        for i in (0..=loss.0).rev() {
            if self.nodes[i].op.is_none() {
                continue;
            }
            let Some(grad_out) = self.nodes[i].grad.take() else {
                continue;
            };
            let mut input_grads: Vec<Option<Vec<T>>> = self.nodes[i]
                .inputs
                .iter()
                .map(|v| {
                    let n = &self.nodes[v.0];
                    n.requires_grad.then(|| vec![T::zero(); n.value.numel()])
                })
                .collect();
            {
                let node = &self.nodes[i];
                let inputs: Vec<&Tensor<T>> =
                    node.inputs.iter().map(|v| &self.nodes[v.0].value).collect();
                let op = node.op.as_ref().expect("checked above");
                op.backward(&inputs, &node.value, &grad_out, &mut input_grads);
            }
            let inputs = self.nodes[i].inputs.clone();
            for (v, g) in inputs.into_iter().zip(input_grads) {
                let Some(g) = g else { continue };
                match &mut self.nodes[v.0].grad {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a = *a + *b),
                    slot @ None => *slot = Some(g),
                }
            }
        }
        Ok(())
    }
}
