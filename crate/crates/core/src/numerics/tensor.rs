//! Dense `f32` tensors that record a reverse-mode gradient graph.
//!
//! A [`Tensor`] is a cheap reference-counted handle. Leaf tensors created with
//! [`Tensor::parameter`] accumulate gradients across calls to
//! [`Tensor::backward`] until [`Tensor::zero_grad`] is called.

use std::cell::{Ref, RefCell, RefMut};
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::rc::Rc;

use crate::error::{Error, Result};

/// Maps the gradient of an op's output to one optional gradient per parent.
pub(crate) type BackwardFn = Box<dyn Fn(&[f32]) -> Vec<Option<Vec<f32>>>>;

struct GradNode {
    parents: Vec<Tensor>,
    backward: BackwardFn,
}

struct Inner {
    shape: Vec<usize>,
    data: RefCell<Vec<f32>>,
    grad: RefCell<Option<Vec<f32>>>,
    requires_grad: bool,
    node: Option<GradNode>,
}

#[derive(Clone)]
pub struct Tensor(Rc<Inner>);

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.0.shape)
            .field("requires_grad", &self.0.requires_grad)
            .finish()
    }
}

fn check_len(shape: &[usize], len: usize) -> Result<()> {
    if shape.contains(&0) {
        return Err(Error::contract(format!(
            "tensor dimensions must be positive, got {shape:?}"
        )));
    }
    let numel: usize = shape.iter().product();
    if numel != len {
        return Err(Error::shape("tensor", shape, &[len]));
    }
    Ok(())
}

impl Tensor {
    fn build(shape: Vec<usize>, data: Vec<f32>, requires_grad: bool, node: Option<GradNode>) -> Self {
        Tensor(Rc::new(Inner {
            shape,
            data: RefCell::new(data),
            grad: RefCell::new(None),
            requires_grad,
            node,
        }))
    }

    /// A constant tensor: never receives a gradient.
    pub fn new(shape: &[usize], data: Vec<f32>) -> Result<Self> {
        check_len(shape, data.len())?;
        Ok(Self::build(shape.to_vec(), data, false, None))
    }

    /// A trainable leaf tensor.
    pub fn parameter(shape: &[usize], data: Vec<f32>) -> Result<Self> {
        check_len(shape, data.len())?;
        Ok(Self::build(shape.to_vec(), data, true, None))
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::new(shape, vec![0.0; shape.iter().product()])
    }

    pub fn scalar(value: f32) -> Self {
        Self::build(vec![1], vec![value], false, None)
    }

    /// Output of a differentiable op. The graph is only recorded when some
    /// parent requires a gradient.
    pub(crate) fn from_op(shape: Vec<usize>, data: Vec<f32>, parents: Vec<Tensor>, backward: BackwardFn) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        if parents.iter().any(Tensor::requires_grad) {
            Self::build(shape, data, true, Some(GradNode { parents, backward }))
        } else {
            Self::build(shape, data, false, None)
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn numel(&self) -> usize {
        self.0.shape.iter().product()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.0.node.is_none()
    }

    pub fn data(&self) -> Ref<'_, Vec<f32>> {
        self.0.data.borrow()
    }

    /// Mutable access for in-place parameter updates. The shape cannot change.
    pub fn data_mut(&self) -> RefMut<'_, Vec<f32>> {
        self.0.data.borrow_mut()
    }

    pub fn to_vec(&self) -> Vec<f32> {
        self.data().clone()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f32 {
        self.data()[0]
    }

    pub fn grad(&self) -> Option<Vec<f32>> {
        self.0.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.borrow_mut() = None;
    }

    /// Same storage identity.
    pub fn ptr_eq(&self, other: &Tensor) -> bool {
        Rc::ptr_eq(&self.0, &other.0)
    }

    /// A constant copy that is cut from the graph.
    pub fn detach(&self) -> Tensor {
        Self::build(self.0.shape.clone(), self.to_vec(), false, None)
    }

    fn accumulate_grad(&self, g: &[f32]) {
        let mut slot = self.0.grad.borrow_mut();
        match slot.as_mut() {
            Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
            None => *slot = Some(g.to_vec()),
        }
    }

    /// Reverse-mode sweep from a scalar loss. Every reachable tensor that
    /// requires a gradient has `∂loss/∂tensor` added to its `grad`.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape()
            )));
        }
        if !self.requires_grad() {
            return Ok(());
        }
        let order = self.topological_order();
        let mut pending: HashMap<*const Inner, Vec<f32>> = HashMap::new();
        pending.insert(Rc::as_ptr(&self.0), vec![1.0]);

        for tensor in order.iter().rev() {
            let Some(grad) = pending.remove(&Rc::as_ptr(&tensor.0)) else {
                continue;
            };
            tensor.accumulate_grad(&grad);
            let Some(node) = &tensor.0.node else {
                continue;
            };
            let parent_grads = (node.backward)(&grad);
            debug_assert_eq!(parent_grads.len(), node.parents.len());
            for (parent, g) in node.parents.iter().zip(parent_grads) {
                let Some(g) = g else { continue };
                if !parent.requires_grad() {
                    continue;
                }
                debug_assert_eq!(g.len(), parent.numel());
                match pending.entry(Rc::as_ptr(&parent.0)) {
                    std::collections::hash_map::Entry::Occupied(mut e) => {
                        e.get_mut().iter_mut().zip(&g).for_each(|(a, b)| *a += b);
                    }
                    std::collections::hash_map::Entry::Vacant(e) => {
                        e.insert(g);
                    }
                }
            }
        }
        Ok(())
    }

    /// Post-order over the gradient-requiring subgraph (parents before children).
    fn topological_order(&self) -> Vec<Tensor> {
        let mut order = Vec::new();
        let mut visited: HashSet<*const Inner> = HashSet::new();
        let mut stack: Vec<(Tensor, bool)> = vec![(self.clone(), false)];
        while let Some((tensor, expanded)) = stack.pop() {
            let key = Rc::as_ptr(&tensor.0);
            if expanded {
                order.push(tensor);
                continue;
            }
            if !visited.insert(key) {
                continue;
            }
            stack.push((tensor.clone(), true));
            if let Some(node) = &tensor.0.node {
                for parent in &node.parents {
                    if parent.requires_grad() && !visited.contains(&Rc::as_ptr(&parent.0)) {
                        stack.push((parent.clone(), false));
                    }
                }
            }
        }
        order
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_mismatched_payload() {
        assert!(matches!(Tensor::new(&[2, 3], vec![0.0; 5]), Err(Error::Shape { .. })));
        assert!(Tensor::new(&[0, 3], vec![]).is_err());
    }

    #[test]
    fn constants_do_not_record() {
        let a = Tensor::new(&[2], vec![1.0, 2.0]).unwrap();
        let b = crate::numerics::ops::mul(&a, &a).unwrap();
        assert!(!b.requires_grad());
        assert!(b.is_leaf());
    }

    #[test]
    fn non_scalar_backward_is_contract_error() {
        let a = Tensor::parameter(&[2], vec![1.0, 2.0]).unwrap();
        assert!(matches!(a.backward(), Err(Error::Contract(_))));
    }
}
