//! Minimal convolutional network engine: NCHW tensors, a recorded forward
//! graph with reverse-mode gradients, and Adam.

mod conv;
mod graph;
mod optim;
mod tensor;

pub use conv::{conv2d_backward, conv2d_forward, ConvGeom};
pub use graph::{Grads, Graph, NodeId, ParamEntry, ParamId, ParamStore};
pub use optim::{Adam, AdamConfig};
pub use tensor::Tensor;
