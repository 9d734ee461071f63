//! Dense `f64` tensors with reverse-mode automatic differentiation.
//!
//! A [`Tensor`] is an immutable, reference-counted buffer in row-major order.
//! Operations that consume tensors requiring gradients record a [`GradFn`]
//! describing how to push an output gradient back to their inputs;
//! [`Tensor::backward`] walks that lineage once in reverse topological order
//! and accumulates into the gradient slots of leaf tensors.
//!
//! Only the operations the enhancement network needs are provided. All
//! kernels are single-threaded and deterministic.

mod autograd;
mod conv;
pub mod fault;
mod gemm;
mod nn;
mod ops;

use std::fmt;
use std::sync::{Arc, Mutex};

pub use autograd::{is_grad_enabled, no_grad, GradFn};
pub use conv::{conv2d, conv_transpose2d, ConvGeometry};
pub use nn::{batch_norm, gelu, BnMode, BnStats, BN_EPS, BN_MOMENTUM};
pub use ops::{
    abs, add, broadcast_axis, clamp, concat, crop, div_scalar, matmul, mean, mul, narrow,
    pad_reflect, reshape, scale, softmax, sub, sum, transpose_last2,
};

/// Shape and contract violations raised by tensor operations.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TensorError {
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: {msg}")]
    Invalid { op: &'static str, msg: String },
}

pub type Result<T> = std::result::Result<T, TensorError>;

pub(crate) fn invalid(op: &'static str, msg: impl Into<String>) -> TensorError {
    TensorError::Invalid {
        op,
        msg: msg.into(),
    }
}

pub(crate) struct Node {
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
    grad: Mutex<Option<Vec<f64>>>,
    grad_fn: Option<Box<dyn GradFn>>,
}

/// Reference-counted n-dimensional array of `f64` values.
///
/// Cloning a tensor is cheap and shares the underlying buffer and gradient
/// slot.
#[derive(Clone)]
pub struct Tensor {
    node: Arc<Node>,
}

impl Tensor {
    fn build(
        shape: Vec<usize>,
        data: Vec<f64>,
        requires_grad: bool,
        grad_fn: Option<Box<dyn GradFn>>,
    ) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor {
            node: Arc::new(Node {
                shape,
                data,
                requires_grad,
                grad: Mutex::new(None),
                grad_fn,
            }),
        }
    }

    /// Constant tensor (no gradient tracking).
    pub fn from_vec(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        check_shape(&shape, data.len())?;
        Ok(Self::build(shape, data, false, None))
    }

    /// Leaf tensor whose gradient is accumulated by [`Tensor::backward`].
    pub fn leaf(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        check_shape(&shape, data.len())?;
        Ok(Self::build(shape, data, true, None))
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Self::build(shape.to_vec(), vec![value; n], false, None)
    }

    pub fn scalar(value: f64) -> Self {
        Self::build(vec![1], vec![value], false, None)
    }

    /// Wraps the result of an operation, recording lineage when any input
    /// participates in differentiation and recording is enabled.
    pub fn from_op<G: GradFn + 'static>(shape: Vec<usize>, data: Vec<f64>, grad_fn: G) -> Self {
        let track = autograd::is_grad_enabled() && grad_fn.inputs().iter().any(|t| t.requires_grad());
        if track {
            Self::build(shape, data, true, Some(Box::new(grad_fn)))
        } else {
            Self::build(shape, data, false, None)
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.node.shape
    }

    pub fn ndim(&self) -> usize {
        self.node.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.node.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.node.data
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.node.data.clone()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.numel(), 1, "item() on a tensor of shape {:?}", self.shape());
        self.node.data[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.node.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.node.grad_fn.is_none()
    }

    /// Name of the operation that produced this tensor, if it has lineage.
    pub fn op_name(&self) -> Option<&'static str> {
        self.node.grad_fn.as_ref().map(|g| g.name())
    }

    /// Accumulated gradient of a leaf tensor.
    pub fn grad(&self) -> Option<Vec<f64>> {
        self.node.grad.lock().unwrap().clone()
    }

    pub fn zero_grad(&self) {
        *self.node.grad.lock().unwrap() = None;
    }

    /// Same values, no lineage.
    pub fn detach(&self) -> Tensor {
        Self::build(self.shape().to_vec(), self.to_vec(), false, None)
    }

    pub(crate) fn ptr_id(&self) -> usize {
        Arc::as_ptr(&self.node) as usize
    }

    pub(crate) fn accumulate_grad(&self, g: &[f64]) {
        let mut slot = self.node.grad.lock().unwrap();
        match slot.as_mut() {
            Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
            None => *slot = Some(g.to_vec()),
        }
    }

    pub(crate) fn grad_fn(&self) -> Option<&dyn GradFn> {
        self.node.grad_fn.as_deref()
    }

    /// Back-propagates from this single-element tensor.
    pub fn backward(&self) -> Result<()> {
        autograd::backward(self)
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let preview: Vec<f64> = self.data().iter().take(8).copied().collect();
        f.debug_struct("Tensor")
            .field("shape", &self.shape())
            .field("requires_grad", &self.requires_grad())
            .field("op", &self.op_name())
            .field("data", &preview)
            .finish()
    }
}

fn check_shape(shape: &[usize], len: usize) -> Result<()> {
    if shape.is_empty() || shape.contains(&0) {
        return Err(invalid("tensor", format!("extents must be positive, got {shape:?}")));
    }
    let n: usize = shape.iter().product();
    if n != len {
        return Err(invalid(
            "tensor",
            format!("shape {shape:?} holds {n} values but {len} were given"),
        ));
    }
    Ok(())
}

/// A named trainable tensor.
#[derive(Clone, Debug)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
}

impl Parameter {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        Ok(Parameter {
            name: name.into(),
            value: Tensor::leaf(shape, data)?,
        })
    }

    /// Replaces the value with fresh data, dropping any accumulated gradient.
    pub fn set_data(&mut self, data: Vec<f64>) {
        let shape = self.value.shape().to_vec();
        self.value = Tensor::build(shape, data, true, None);
    }

    pub fn numel(&self) -> usize {
        self.value.numel()
    }
}
