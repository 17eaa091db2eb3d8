//! Dense tensors, a reverse-mode tape and a finite-difference gradient checker.

mod gradcheck;
mod params;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, grad_check_many};
pub use params::{Bound, ParamId, ParamStore};
pub use tape::{bce_term, gelu, sigmoid, Gradients, Tape, Var, BCE_EPS};
pub use tensor::Tensor;
