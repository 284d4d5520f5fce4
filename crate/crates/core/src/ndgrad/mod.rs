//! Dense tensors with reverse-mode automatic differentiation and Adam.

mod adam;
mod check;
mod gemm;
mod ops;
mod tape;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use check::{grad_check, GradCheck, GradReport, InputReport};
pub use ops::{elu, Padding, Reduce};
pub use tape::{Function, Gradients, Tape, Var};
pub use tensor::Tensor;
