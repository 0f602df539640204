//! Minimal differentiable evaluation: flat parameter vectors, batched layers
//! and closed-form reverse-mode rules.
//!
//! Every network is a fixed list of [`Op`]s over SSA registers. A forward
//! pass can carry a tangent (a forward-mode directional derivative with
//! respect to the input), and the reverse pass propagates adjoints for both
//! the primal values and the tangents. That one mechanism yields:
//!
//! * input gradients `∇ₓf` (primal adjoint only),
//! * parameter gradients of any row-wise loss (vector-Jacobian products),
//! * gradients of `⟨v, ∇ₓf(x)⟩` with respect to `x` (Hessian-vector products)
//!   and to the parameters, which the identity pretraining and cycle losses
//!   need.
//!
//! All kernels are row-local: a row's result never depends on which other
//! rows share the batch.

mod activation;
mod graph;

use ndarray::{ArrayView, ArrayViewMut, IxDyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use activation::{sigmoid, softplus, softplus_inv, Activation};
pub use graph::{Grads, Graph, GraphBuilder, LayerSpec, Op, Reg, Trace};

/// A named tensor inside a flat parameter vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorSlot {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl TensorSlot {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Ordered list of named tensors that exactly partitions a flat array.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Layout {
    slots: Vec<TensorSlot>,
    len: usize,
}

impl Layout {
    pub fn new() -> Self {
        Self::default()
    }

    /// Append a tensor and return its offset.
    pub fn push(&mut self, name: impl Into<String>, shape: &[usize]) -> usize {
        let offset = self.len;
        let slot = TensorSlot {
            name: name.into(),
            shape: shape.to_vec(),
            offset,
        };
        self.len += slot.numel();
        self.slots.push(slot);
        offset
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn slots(&self) -> &[TensorSlot] {
        &self.slots
    }

    pub fn get(&self, name: &str) -> Option<&TensorSlot> {
        self.slots.iter().find(|s| s.name == name)
    }

    /// Offsets must tile `[0, len)` with no gaps and names must be unique.
    pub fn validate(&self) -> Result<()> {
        let mut next = 0;
        for (i, s) in self.slots.iter().enumerate() {
            if s.offset != next {
                return Err(Error::Contract(format!(
                    "layout slot `{}` starts at {} but {} was expected",
                    s.name, s.offset, next
                )));
            }
            if self.slots[..i].iter().any(|o| o.name == s.name) {
                return Err(Error::Contract(format!("duplicate slot `{}`", s.name)));
            }
            next += s.numel();
        }
        if next != self.len {
            return Err(Error::Contract("layout length mismatch".into()));
        }
        Ok(())
    }
}

/// Flat parameter array plus the layout describing it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    pub values: Vec<f64>,
    pub layout: Layout,
}

impl ParamVector {
    pub fn zeros(layout: Layout) -> Self {
        Self {
            values: vec![0.0; layout.len()],
            layout,
        }
    }

    pub fn from_values(layout: Layout, values: Vec<f64>) -> Result<Self> {
        if values.len() != layout.len() {
            return Err(Error::dim(format!(
                "{} values for a layout of length {}",
                values.len(),
                layout.len()
            )));
        }
        layout.validate()?;
        Ok(Self { values, layout })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn slot(&self, name: &str) -> Result<&TensorSlot> {
        self.layout
            .get(name)
            .ok_or_else(|| Error::Contract(format!("no parameter named `{name}`")))
    }

    pub fn tensor(&self, name: &str) -> Result<ArrayView<'_, f64, IxDyn>> {
        let slot = self.slot(name)?;
        let data = &self.values[slot.offset..slot.offset + slot.numel()];
        ArrayView::from_shape(IxDyn(&slot.shape), data).map_err(|e| Error::dim(e.to_string()))
    }

    pub fn tensor_mut(&mut self, name: &str) -> Result<ArrayViewMut<'_, f64, IxDyn>> {
        let slot = self.slot(name)?.clone();
        let data = &mut self.values[slot.offset..slot.offset + slot.numel()];
        ArrayViewMut::from_shape(IxDyn(&slot.shape), data).map_err(|e| Error::dim(e.to_string()))
    }

    /// Same layout, new values.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        Self::from_values(self.layout.clone(), values)
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Pairwise summation; deterministic for a fixed input order.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 16 {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    pairwise_sum(xs) / xs.len() as f64
}
