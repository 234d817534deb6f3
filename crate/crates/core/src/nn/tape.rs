//! Reverse-mode automatic differentiation on a linear tape.
//!
//! Every operation appends a node holding its output value and a closure that
//! maps the output gradient to gradients of its parents. Nodes are appended in
//! evaluation order, so a reverse sweep over ids is a valid topological order.

use std::cell::RefCell;
use std::sync::Arc;

use super::{Real, Tensor};
use crate::error::{Error, Result};

/// Maps the output gradient to one gradient per parent. The mask says which
/// parents actually need one; entries for the rest may be `None`.
pub(crate) type BackwardFn<T> = Box<dyn Fn(&Tensor<T>, &[bool]) -> Vec<Option<Tensor<T>>>>;

struct Node<T: Real> {
    value: Arc<Tensor<T>>,
    parents: Vec<usize>,
    backward: Option<BackwardFn<T>>,
    needs_grad: bool,
}

pub struct Tape<T: Real> {
    nodes: RefCell<Vec<Node<T>>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t, T: Real> {
    pub(crate) tape: &'t Tape<T>,
    pub(crate) id: usize,
}

impl<T: Real> std::fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push_node(&self, node: Node<T>) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(node);
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// A value that never receives a gradient.
    pub fn constant(&self, t: Tensor<T>) -> Var<'_, T> {
        self.constant_shared(Arc::new(t))
    }

    pub fn constant_shared(&self, t: Arc<Tensor<T>>) -> Var<'_, T> {
        self.push_node(Node {
            value: t,
            parents: Vec::new(),
            backward: None,
            needs_grad: false,
        })
    }

    /// A differentiable input.
    pub fn leaf(&self, t: Tensor<T>) -> Var<'_, T> {
        self.leaf_shared(Arc::new(t))
    }

    pub fn leaf_shared(&self, t: Arc<Tensor<T>>) -> Var<'_, T> {
        self.push_node(Node {
            value: t,
            parents: Vec::new(),
            backward: None,
            needs_grad: true,
        })
    }

    pub(crate) fn push_op(
        &self,
        value: Tensor<T>,
        parents: &[Var<'_, T>],
        backward: BackwardFn<T>,
    ) -> Var<'_, T> {
        let needs_grad = {
            let nodes = self.nodes.borrow();
            parents.iter().any(|p| nodes[p.id].needs_grad)
        };
        self.push_node(Node {
            value: Arc::new(value),
            parents: parents.iter().map(|p| p.id).collect(),
            backward: if needs_grad { Some(backward) } else { None },
            needs_grad,
        })
    }

    pub(crate) fn value(&self, id: usize) -> Arc<Tensor<T>> {
        self.nodes.borrow()[id].value.clone()
    }

    pub(crate) fn needs_grad(&self, id: usize) -> bool {
        self.nodes.borrow()[id].needs_grad
    }

    /// Reverse sweep from a scalar `loss`.
    ///
    /// Leaves that do not influence the loss come back with zero gradients.
    pub fn backward(&self, loss: Var<'_, T>) -> Result<Gradients<T>> {
        let nodes = self.nodes.borrow();
        if nodes[loss.id].value.numel() != 1 {
            return Err(Error::InvalidInput(format!(
                "backward needs a scalar loss, got shape {:?}",
                nodes[loss.id].value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.id] = Some(Tensor::ones(nodes[loss.id].value.shape()));
        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            let Some(backward) = node.backward.as_ref() else {
                continue;
            };
            let Some(g) = grads[id].take() else {
                continue;
            };
            let mask: Vec<bool> = node.parents.iter().map(|&p| nodes[p].needs_grad).collect();
            let parent_grads = backward(&g, &mask);
            debug_assert_eq!(parent_grads.len(), node.parents.len());
            for ((&p, pg), need) in node.parents.iter().zip(parent_grads).zip(mask) {
                let Some(pg) = pg else { continue };
                if !need {
                    continue;
                }
                debug_assert_eq!(pg.shape(), nodes[p].value.shape(), "grad shape for node {p}");
                match &mut grads[p] {
                    Some(acc) => acc.add_assign(&pg),
                    slot => *slot = Some(pg),
                }
            }
        }
        // leaves keep their gradient; give untouched ones explicit zeros
        for (id, node) in nodes.iter().enumerate() {
            if node.needs_grad && node.backward.is_none() && grads[id].is_none() {
                grads[id] = Some(Tensor::zeros(node.value.shape()));
            }
        }
        Ok(Gradients { grads })
    }
}

/// Gradients of the leaves of a tape after [`Tape::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var<'_, T>) -> Option<&Tensor<T>> {
        self.grads.get(v.id).and_then(Option::as_ref)
    }
}

impl<'t, T: Real> Var<'t, T> {
    pub fn value(&self) -> Arc<Tensor<T>> {
        self.tape.value(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.needs_grad(self.id)
    }

    /// Scalar value of a one-element variable.
    pub fn item(&self) -> T {
        self.value().item()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gives_ones() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::from_f64(&[3], &[1.0, -2.0, 5.0]).unwrap());
        let l = x.sum();
        let g = tape.backward(l).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn sum_of_squares() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::from_f64(&[2], &[1.0, 2.0]).unwrap());
        let l = x.square().sum();
        let g = tape.backward(l).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn unused_leaf_gets_zero_grad() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::from_f64(&[2], &[1.0, 2.0]).unwrap());
        let y = tape.leaf(Tensor::from_f64(&[3], &[1.0, 2.0, 3.0]).unwrap());
        let g = tape.backward(x.sum()).unwrap();
        assert_eq!(g.get(y).unwrap().data(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::zeros(&[2]));
        assert!(matches!(tape.backward(x), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn shared_subexpression_accumulates() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::from_f64(&[1], &[3.0]).unwrap());
        let y = x.mul(x).unwrap().add(x).unwrap(); // x^2 + x
        let g = tape.backward(y.sum()).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[7.0]);
    }
}
