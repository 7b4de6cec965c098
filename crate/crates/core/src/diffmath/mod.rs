//! Dense tensors, sparse operators and a reverse-mode tape covering every
//! expression the model needs.

mod gradcheck;
mod params;
mod sparse;
mod tape;
mod tensor;

pub use gradcheck::grad_check;
pub use params::{all_finite, clip_global_norm, global_norm, FlatParams, ParamSet};
pub use sparse::CsrMatrix;
pub use tape::{attention_weights, log_sum_exp, sigmoid, softmax_in_place, Gradients, Tape, Var};
pub use tensor::Tensor;
