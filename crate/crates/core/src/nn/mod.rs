//! Differentiable building blocks: tensors, parameters, the recorded
//! forward/backward graph, Adam and checkpoints.

pub mod checkpoint;
pub(crate) mod kernels;
pub mod layers;
pub mod optim;
pub mod params;
pub mod tape;
mod tensor;

pub use layers::{
    embed_lookup, linear_forward, log_softmax, lstm_step, softmax, softmax_cross_entropy,
    Embedding, Linear, Lstm, LstmState,
};
pub use optim::{adam_step, clip_grad_norm, AdamConfig};
pub use params::{Gradients, ParamId, ParameterSet};
pub use tape::{Tape, Var};
pub use tensor::Tensor;
