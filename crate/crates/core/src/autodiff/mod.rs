//! Reverse-mode differentiation over dense arrays.
//!
//! A [`Tape`] records every primitive operation of a forward pass; each
//! recorded node keeps handles to its parents and a closure computing the
//! vector-Jacobian product. [`Tape::backward`] sweeps the records in reverse,
//! accumulating gradients additively across fan-out.
//!
//! Tapes are built and consumed single-threaded; parameter tensors live
//! outside the tape and are copied onto it as leaves each pass. Independent
//! tapes may run concurrently.

mod attention;
mod graph_ops;
mod ops;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

/// Vector-Jacobian product: given the node's output gradient, output value,
/// and parent values, produce one gradient contribution per parent slot.
type BackwardFn = Box<dyn Fn(&Tensor, &Tensor, &[&Tensor]) -> Vec<Tensor>>;

struct Node {
    value: Tensor,
    grad: Option<Tensor>,
    parents: Vec<Var>,
    backward: Option<BackwardFn>,
}

/// Ordered record of primitive operations; parents always precede children.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    /// Record an input with no parents (parameter copy, constant, data).
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Vec::new(), None)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Gradient of the last backward root w.r.t. `v`. `None` before any
    /// backward pass has run.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, parents: Vec<Var>, backward: Option<BackwardFn>) -> Var {
        debug_assert!(parents.iter().all(|p| p.0 < self.nodes.len()));
        self.nodes.push(Node {
            value,
            grad: None,
            parents,
            backward,
        });
        Var(self.nodes.len() - 1)
    }

    /// Reverse sweep from a scalar root. Every node at or before the root
    /// gets a gradient of its value's shape; unreachable nodes keep zeros.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if !self.nodes[root.0].value.is_scalar() {
            return Err(Error::NonScalarRoot {
                shape: self.nodes[root.0].value.shape().to_vec(),
            });
        }
        let mut touched = vec![false; root.0 + 1];
        for node in self.nodes.iter_mut() {
            node.grad = Some(Tensor::zeros(node.value.shape()));
        }
        self.nodes[root.0].grad = Some(Tensor::scalar(1.0));
        touched[root.0] = true;

        for i in (0..=root.0).rev() {
            if !touched[i] || self.nodes[i].backward.is_none() {
                continue;
            }
            let (parents, contributions) = {
                let node = &self.nodes[i];
                let bw = node.backward.as_ref().unwrap();
                let parent_values: Vec<&Tensor> =
                    node.parents.iter().map(|p| &self.nodes[p.0].value).collect();
                let grads = bw(node.grad.as_ref().unwrap(), &node.value, &parent_values);
                debug_assert_eq!(grads.len(), node.parents.len());
                (node.parents.clone(), grads)
            };
            for (p, c) in parents.iter().zip(contributions) {
                debug_assert!(self.nodes[p.0].value.same_shape(&c));
                self.nodes[p.0].grad.as_mut().unwrap().add_assign(&c);
                touched[p.0] = true;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_leaf_gives_unit_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::from_vec(vec![1.0, 2.0, 3.0]));
        let s = tape.sum(x).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap().as_slice(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn square_at_three_has_gradient_six() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(3.0));
        let y = tape.mul(x, x).unwrap();
        tape.backward(y).unwrap();
        assert_eq!(tape.grad(x).unwrap().item(), 6.0);
    }

    #[test]
    fn non_scalar_root_rejected() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::from_vec(vec![1.0, 2.0]));
        assert!(matches!(
            tape.backward(x),
            Err(Error::NonScalarRoot { .. })
        ));
    }

    #[test]
    fn unreachable_nodes_keep_zero_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(2.0));
        let unused = tape.leaf(Tensor::from_vec(vec![5.0, 5.0]));
        let y = tape.mul(x, x).unwrap();
        tape.backward(y).unwrap();
        assert_eq!(tape.grad(unused).unwrap().as_slice(), &[0.0, 0.0]);
    }

    #[test]
    fn fanout_accumulates_both_paths() {
        // f = sum(x + x) should give the same gradient as g = sum(2x).
        let data = vec![0.3, -1.2, 4.0];
        let mut t1 = Tape::new();
        let x1 = t1.leaf(Tensor::from_vec(data.clone()));
        let d = t1.add(x1, x1).unwrap();
        let s1 = t1.sum(d).unwrap();
        t1.backward(s1).unwrap();

        let mut t2 = Tape::new();
        let x2 = t2.leaf(Tensor::from_vec(data));
        let d2 = t2.scale(x2, 2.0);
        let s2 = t2.sum(d2).unwrap();
        t2.backward(s2).unwrap();

        assert_eq!(
            t1.grad(x1).unwrap().as_slice(),
            t2.grad(x2).unwrap().as_slice()
        );
    }
}
