//! Differentiable operators, parameters and optimization.

pub mod gradcheck;
mod graph;
mod layers;
mod optim;
mod params;
mod tensor;

pub use graph::{Gradients, Graph, Var, LAYER_NORM_EPS};
pub use layers::{Conv1d, LayerNorm, Linear, MultiHeadAttention};
pub use optim::{cosine_lr, Adam, AdamConfig};
pub use params::{ParamId, ParamStore, Parameter};
pub use tensor::{Shape, Tensor2D};
