//! Dense tensors with reverse-mode automatic differentiation.
//!
//! The element type is generic so the same kernels run in `f32` for training
//! and in `f64` for finite-difference gradient verification.

mod graph;
pub mod ops;

pub use graph::{BwdArgs, Graph, View};

use std::cell::{Ref, RefCell};
use std::fmt::{Debug, Display};
use std::rc::Rc;

use crate::error::{Error, Result};

/// Scalar element type of tensors. Implemented for `f32` and `f64`.
pub trait Element:
    num_traits::Float + Default + Debug + Display + Send + Sync + std::iter::Sum + 'static
{
    fn from_f64(v: f64) -> Self;
    fn to_f64_lossy(self) -> f64;
    fn from_f32(v: f32) -> Self {
        Self::from_f64(v as f64)
    }
}

impl Element for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64_lossy(self) -> f64 {
        self as f64
    }
}

impl Element for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64_lossy(self) -> f64 {
        self
    }
}

pub(crate) struct TensorInner<E> {
    shape: Vec<usize>,
    data: Vec<E>,
    grad: Option<Vec<E>>,
    requires_grad: bool,
}

/// A dense row-major tensor with a shared, interior-mutable buffer.
///
/// Cloning a `Tensor` clones the handle, not the storage; parameters stay
/// live across many graphs while gradients accumulate into them. Handles are
/// confined to one thread; long-lived parameters are exported to plain
/// buffers (see [`crate::registry`]) before crossing threads.
pub struct Tensor<E: Element> {
    inner: Rc<RefCell<TensorInner<E>>>,
}

impl<E: Element> Clone for Tensor<E> {
    fn clone(&self) -> Self {
        Tensor {
            inner: Rc::clone(&self.inner),
        }
    }
}

impl<E: Element> Tensor<E> {
    pub fn new(shape: Vec<usize>, data: Vec<E>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::invalid(
                "Tensor::new",
                format!(
                    "shape {:?} needs {} values, got {}",
                    shape,
                    numel,
                    data.len()
                ),
            ));
        }
        if shape.contains(&0) {
            return Err(Error::invalid(
                "Tensor::new",
                "zero-sized extents are not supported",
            ));
        }
        Ok(Tensor {
            inner: Rc::new(RefCell::new(TensorInner {
                shape,
                data,
                grad: None,
                requires_grad: false,
            })),
        })
    }

    pub fn scalar(value: E) -> Self {
        Tensor::new(vec![], vec![value]).expect("scalar is always valid")
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n: usize = shape.iter().product();
        Tensor::new(shape.to_vec(), vec![E::zero(); n]).expect("zeros shape validated by product")
    }

    pub fn ones(shape: &[usize]) -> Self {
        let n: usize = shape.iter().product();
        Tensor::new(shape.to_vec(), vec![E::one(); n]).expect("ones shape validated by product")
    }

    pub fn from_f64s(shape: Vec<usize>, data: &[f64]) -> Result<Self> {
        Tensor::new(shape, data.iter().map(|&v| E::from_f64(v)).collect())
    }

    /// Marks the tensor as a gradient leaf. Builder-style.
    pub fn requires_grad(self) -> Self {
        self.inner.borrow_mut().requires_grad = true;
        self
    }

    pub fn set_requires_grad(&self, v: bool) {
        self.inner.borrow_mut().requires_grad = v;
    }

    pub fn is_requires_grad(&self) -> bool {
        self.inner.borrow().requires_grad
    }

    pub fn shape(&self) -> Vec<usize> {
        self.inner.borrow().shape.clone()
    }

    pub fn numel(&self) -> usize {
        self.inner.borrow().data.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.numel() == 1 && self.inner.borrow().shape.is_empty()
    }

    /// Borrows the value buffer.
    pub fn data(&self) -> Ref<'_, [E]> {
        Ref::map(self.inner.borrow(), |i| i.data.as_slice())
    }

    /// Copies the value buffer out.
    pub fn to_vec(&self) -> Vec<E> {
        self.inner.borrow().data.clone()
    }

    pub fn item(&self) -> E {
        let inner = self.inner.borrow();
        assert_eq!(inner.data.len(), 1, "item() requires exactly one element");
        inner.data[0]
    }

    /// Copies the gradient buffer out, if one has been populated.
    pub fn grad(&self) -> Option<Vec<E>> {
        self.inner.borrow().grad.clone()
    }

    pub fn zero_grad(&self) {
        self.inner.borrow_mut().grad = None;
    }

    /// Adds `delta` into the gradient buffer, allocating zeros on first use.
    pub fn accumulate_grad(&self, delta: &[E]) {
        let mut inner = self.inner.borrow_mut();
        assert_eq!(
            inner.data.len(),
            delta.len(),
            "gradient length must match tensor length"
        );
        match inner.grad.as_mut() {
            Some(g) => {
                for (gi, di) in g.iter_mut().zip(delta) {
                    *gi = *gi + *di;
                }
            }
            None => inner.grad = Some(delta.to_vec()),
        }
    }

    /// Overwrites the value buffer in place (used by optimizers).
    pub fn set_data(&self, data: &[E]) {
        let mut inner = self.inner.borrow_mut();
        assert_eq!(inner.data.len(), data.len(), "set_data length must match");
        inner.data.copy_from_slice(data);
    }

    /// Applies `f` to the value buffer in place.
    pub fn update_data(&self, f: impl FnOnce(&mut [E])) {
        let mut inner = self.inner.borrow_mut();
        f(&mut inner.data);
    }

    /// Identity comparison: do both handles point at the same storage?
    pub fn same_storage(&self, other: &Tensor<E>) -> bool {
        Rc::ptr_eq(&self.inner, &other.inner)
    }

    pub(crate) fn storage_key(&self) -> usize {
        Rc::as_ptr(&self.inner) as usize
    }

    pub(crate) fn borrow_inner(&self) -> Ref<'_, TensorInner<E>> {
        self.inner.borrow()
    }
}

impl<E: Element> TensorInner<E> {
    pub(crate) fn view(&self) -> View<'_, E> {
        View {
            shape: &self.shape,
            data: &self.data,
        }
    }
}

impl<E: Element> Debug for Tensor<E> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let inner = self.inner.borrow();
        f.debug_struct("Tensor")
            .field("shape", &inner.shape)
            .field("data", &inner.data)
            .field("requires_grad", &inner.requires_grad)
            .finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_rejects_length_mismatch() {
        let err = Tensor::<f32>::new(vec![2, 2], vec![1.0, 2.0]).unwrap_err();
        assert!(err.to_string().contains("shape"));
    }

    #[test]
    fn grads_accumulate_additively() {
        let t = Tensor::<f64>::new(vec![2], vec![1.0, 2.0])
            .unwrap()
            .requires_grad();
        t.accumulate_grad(&[0.5, 1.0]);
        t.accumulate_grad(&[0.5, 1.0]);
        assert_eq!(t.grad().unwrap(), vec![1.0, 2.0]);
        t.zero_grad();
        assert!(t.grad().is_none());
    }

    #[test]
    fn clone_shares_storage() {
        let a = Tensor::<f32>::new(vec![1], vec![3.0]).unwrap();
        let b = a.clone();
        b.set_data(&[7.0]);
        assert_eq!(a.to_vec(), vec![7.0]);
        assert!(a.same_storage(&b));
    }
}
