//! Minimal dense-tensor engine with reverse-mode automatic differentiation.
//!
//! Only the operations the x-vector family needs are provided: dilated 1-D
//! convolution (full, depthwise, pointwise), affine maps, relu/tanh, batch
//! normalization, softmax cross-entropy, attentive statistics pooling and the
//! handful of shape helpers the attention variants use.

mod graph;
mod optim;
mod param;

pub use graph::{Activation, BatchNormMode, ConvMode, Gradients, Graph, NodeId};
pub use optim::{Adam, AdamConfig};
pub use param::{ParamId, ParamStore, Parameter};

/// Exponential moving average of batch-norm statistics:
/// `running = momentum * running + (1 - momentum) * batch`.
pub fn ema_update(running: &mut [f64], batch: &[f64], momentum: f64) {
    for (r, b) in running.iter_mut().zip(batch) {
        *r = momentum * *r + (1.0 - momentum) * b;
    }
}

#[cfg(test)]
mod tests;
