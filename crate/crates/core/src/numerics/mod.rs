//! Dense `f64` tensors, reverse-mode differentiation, Adam, and finite-difference checking.

mod functions;
mod gradcheck;
mod optim;
mod param;
mod tape;
mod tensor;

pub use functions::{
    argmax, cosine_similarity, cross_entropy, leaky_relu, leaky_relu_grad, softmax, NORM_FLOOR,
    PROB_FLOOR,
};
pub use gradcheck::{grad_check, relative_error, GradCheckConfig, GradCheckReport, TensorCheck};
pub use optim::{Adam, AdamConfig};
pub use param::{Gradients, Param, ParamId, ParamStore};
pub use tape::{Tape, Var};
pub use tensor::{matmul, Tensor};
