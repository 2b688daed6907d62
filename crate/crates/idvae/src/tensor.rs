//! Dense f32 tensors with optional gradient state.
//!
//! A `Tensor` is a cheap handle (`Rc`) to shared storage, so parameter
//! identity is pointer identity. Constants never get a grad buffer;
//! parameters carry one for their whole life and accumulate into it across
//! backward calls until `zero_grad`.

use std::cell::{Ref, RefCell};
use std::rc::Rc;

use crate::error::{Error, Result};

pub(crate) struct Inner {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
    pub grad: Option<Vec<f32>>,
    pub requires_grad: bool,
    /// (graph id, node index) when this value was produced by a recorded op.
    pub node: Option<(u64, usize)>,
}

#[derive(Clone)]
pub struct Tensor(pub(crate) Rc<RefCell<Inner>>);

pub fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    fn build(shape: Vec<usize>, data: Vec<f32>, requires_grad: bool) -> Tensor {
        assert_eq!(
            numel(&shape),
            data.len(),
            "tensor shape {:?} does not match data length {}",
            shape,
            data.len()
        );
        let grad = requires_grad.then(|| vec![0.0; data.len()]);
        Tensor(Rc::new(RefCell::new(Inner { shape, data, grad, requires_grad, node: None })))
    }

    /// Constant tensor: never receives gradients.
    pub fn from_vec(shape: &[usize], data: Vec<f32>) -> Tensor {
        Tensor::build(shape.to_vec(), data, false)
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        Tensor::build(shape.to_vec(), vec![0.0; numel(shape)], false)
    }

    pub fn scalar(v: f32) -> Tensor {
        Tensor::build(vec![], vec![v], false)
    }

    /// Trainable parameter: carries a zeroed grad buffer from birth.
    pub fn param(shape: &[usize], data: Vec<f32>) -> Tensor {
        Tensor::build(shape.to_vec(), data, true)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.0.borrow().shape.clone()
    }

    pub fn numel(&self) -> usize {
        self.0.borrow().data.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.0.borrow().shape.is_empty()
    }

    /// Copy of the raw values.
    pub fn value(&self) -> Vec<f32> {
        self.0.borrow().data.clone()
    }

    /// Scalar value; panics on non-scalars (call sites guarantee shape).
    pub fn item(&self) -> f32 {
        let inner = self.0.borrow();
        assert!(inner.data.len() == 1, "item() on tensor of {} elements", inner.data.len());
        inner.data[0]
    }

    /// Copy of the gradient buffer, if one exists.
    pub fn grad(&self) -> Option<Vec<f32>> {
        self.0.borrow().grad.clone()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.borrow().requires_grad
    }

    /// Toggle gradient accumulation. Used by the trainer to freeze parameter
    /// sets for one phase; the grad buffer is kept so moments stay aligned.
    pub fn set_requires_grad(&self, on: bool) {
        let mut inner = self.0.borrow_mut();
        if on && inner.grad.is_none() {
            let n = inner.data.len();
            inner.grad = Some(vec![0.0; n]);
        }
        inner.requires_grad = on;
    }

    pub fn zero_grad(&self) {
        if let Some(g) = self.0.borrow_mut().grad.as_mut() {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    /// Overwrite values in place (shape must match). Keeps identity and grad.
    pub fn set_value(&self, data: &[f32]) {
        let mut inner = self.0.borrow_mut();
        assert_eq!(inner.data.len(), data.len(), "set_value length mismatch");
        inner.data.copy_from_slice(data);
    }

    /// Value copy with the graph history severed: gradients never flow
    /// through a detached tensor.
    pub fn detach(&self) -> Tensor {
        let inner = self.0.borrow();
        Tensor::from_vec(&inner.shape, inner.data.clone())
    }

    pub fn ptr_eq(&self, other: &Tensor) -> bool {
        Rc::ptr_eq(&self.0, &other.0)
    }

    pub fn all_finite(&self) -> bool {
        self.0.borrow().data.iter().all(|v| v.is_finite())
    }

    pub(crate) fn borrow(&self) -> Ref<'_, Inner> {
        self.0.borrow()
    }

    pub(crate) fn set_node(&self, graph: u64, idx: usize) {
        self.0.borrow_mut().node = Some((graph, idx));
    }

    pub(crate) fn node_in(&self, graph: u64) -> Option<usize> {
        match self.0.borrow().node {
            Some((g, idx)) if g == graph => Some(idx),
            _ => None,
        }
    }

    /// Accumulate into the grad buffer (allocating it if missing).
    pub(crate) fn accumulate_grad(&self, delta: &[f32]) {
        let mut inner = self.0.borrow_mut();
        let n = inner.data.len();
        assert_eq!(n, delta.len(), "grad length mismatch");
        let grad = inner.grad.get_or_insert_with(|| vec![0.0; n]);
        for (g, d) in grad.iter_mut().zip(delta) {
            *g += d;
        }
    }

    pub(crate) fn check_same_shape(&self, other: &Tensor, op: &'static str) -> Result<()> {
        let (a, b) = (self.0.borrow(), other.0.borrow());
        if a.shape != b.shape {
            return Err(Error::Shape { op, lhs: a.shape.clone(), rhs: b.shape.clone() });
        }
        Ok(())
    }
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let inner = self.0.borrow();
        write!(f, "Tensor(shape={:?}, requires_grad={}", inner.shape, inner.requires_grad)?;
        if inner.data.len() <= 8 {
            write!(f, ", data={:?})", inner.data)
        } else {
            write!(f, ", data=[{} values])", inner.data.len())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_has_no_grad() {
        let t = Tensor::from_vec(&[2], vec![1.0, 2.0]);
        assert!(t.grad().is_none());
        assert!(!t.requires_grad());
    }

    #[test]
    fn param_starts_with_zero_grad() {
        let p = Tensor::param(&[3], vec![1.0, 2.0, 3.0]);
        assert_eq!(p.grad().unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn zero_grad_leaves_data_untouched() {
        let p = Tensor::param(&[2], vec![5.0, -1.0]);
        p.accumulate_grad(&[1.0, 2.0]);
        p.zero_grad();
        assert_eq!(p.grad().unwrap(), vec![0.0, 0.0]);
        assert_eq!(p.value(), vec![5.0, -1.0]);
    }

    #[test]
    fn detach_copies_value_only() {
        let p = Tensor::param(&[2], vec![1.0, 2.0]);
        let d = p.detach();
        assert_eq!(d.value(), p.value());
        assert!(!d.requires_grad());
        assert!(!d.ptr_eq(&p));
    }

    #[test]
    #[should_panic]
    fn shape_data_mismatch_panics() {
        let _ = Tensor::from_vec(&[3], vec![1.0]);
    }
}
