//! Minimal differentiable tensor engine: exactly the ops the U-net and its
//! loss need, with analytically coded gradients.

mod adam;
mod conv;
mod graph;
pub mod gradcheck;
mod tensor;

pub use adam::{Adam, AdamHyper, AdamState};
pub use graph::{Graph, NodeId, BCE_CLAMP};
pub use tensor::{Scalar, Tensor};

use crate::error::{Error, Result};

/// A named, trainable tensor with its gradient slot.
#[derive(Clone, Debug)]
pub struct Parameter<E: Scalar> {
    pub name: String,
    pub value: Tensor<E>,
    pub grad: Tensor<E>,
}

impl<E: Scalar> Parameter<E> {
    pub fn new(name: impl Into<String>, value: Tensor<E>) -> Self {
        let grad = Tensor::zeros(value.shape());
        Parameter {
            name: name.into(),
            value,
            grad,
        }
    }
}

/// Copies the gradients recorded in `graph` into `params.grad`, overwriting
/// previous contents. Every parameter slot must have been used in the pass.
pub fn write_param_grads<E: Scalar>(graph: &Graph<E>, params: &mut [Parameter<E>]) -> Result<()> {
    let mut seen = vec![false; params.len()];
    for (slot, grad) in graph.param_grads() {
        let p = params.get_mut(slot).ok_or_else(|| {
            Error::State(format!("gradient for unknown parameter slot {slot}"))
        })?;
        if grad.shape() != p.value.shape() {
            return Err(Error::shape(
                "write_param_grads",
                format!(
                    "gradient shape {:?} does not match parameter {:?} of shape {:?}",
                    grad.shape(),
                    p.name,
                    p.value.shape()
                ),
            ));
        }
        p.grad = grad.clone();
        seen[slot] = true;
    }
    for (slot, seen) in seen.iter().enumerate() {
        if !seen {
            return Err(Error::State(format!(
                "no gradient recorded for parameter slot {slot} ({}); was backward run on a graph containing it?",
                params[slot].name
            )));
        }
    }
    Ok(())
}
