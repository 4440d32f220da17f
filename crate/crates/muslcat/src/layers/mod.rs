//! Neural network building blocks with hand-derived backward passes.
//!
//! Layers own their parameters and a forward cache. Training code calls
//! `forward_train` (which caches what backward needs), then `backward`,
//! which accumulates into each parameter's `grad` and returns the input
//! gradient. Evaluation uses the pure `forward_eval` methods. Activations
//! are (batch, channel, time) except `Dense`, which works on (batch,
//! features).

mod conv;
mod dense;
mod norm;
mod se;

pub use conv::{Conv1d, MaxPool1d};
pub use dense::{Dense, Dropout, Gelu, Relu, Sigmoid};
pub use norm::{BatchNorm1d, LayerNorm};
pub use se::SeBlock;

use crate::tensor::Tensor;

/// A learnable tensor and its accumulated gradient.
#[derive(Debug, Clone)]
pub struct Param {
    pub value: Tensor,
    pub grad: Tensor,
}

impl Param {
    pub fn new(value: Tensor) -> Param {
        let grad = Tensor::zeros(value.shape());
        Param { value, grad }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }

    pub fn numel(&self) -> usize {
        self.value.numel()
    }
}

/// Walk every parameter (and buffer) under a component, depth first, in a
/// fixed declaration order. Names are slash-joined paths; the traversal
/// order is the contract the optimizer and checkpoint format rely on.
pub trait HasParams {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param));

    /// Non-learnable state that still belongs in checkpoints, e.g. batch
    /// norm running statistics.
    fn visit_buffers(&self, _prefix: &str, _f: &mut dyn FnMut(&str, &Tensor)) {}
    fn visit_buffers_mut(&mut self, _prefix: &str, _f: &mut dyn FnMut(&str, &mut Tensor)) {}

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, p| n += p.numel());
        n
    }

    fn zero_grads(&mut self) {
        self.visit_mut("", &mut |_, p| p.zero_grad());
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}/{name}")
    }
}
