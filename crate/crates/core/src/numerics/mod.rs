//! Dense tensors, a reverse-mode tape, and the primitives the model is built from.

mod graph;
pub mod gradcheck;
pub mod kernels;
mod params;
mod tensor;

pub use gradcheck::{grad_check, GradCheckOptions, GradCheckReport};
pub use graph::{Activation, Graph, Var};
pub use kernels::{layer_norm, lstm_step, masked_softmax, LstmWeights, LAYER_NORM_EPS};
pub use params::{glorot_uniform, GradBlock, Gradients, ParamId, ParamStore};
pub use tensor::Tensor;
