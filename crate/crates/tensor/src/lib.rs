//! Minimal deterministic tensor library with reverse-mode automatic
//! differentiation.
//!
//! Graphs are built dynamically as ops are applied; [`Tensor::backward`]
//! sweeps them in reverse creation order. All kernels are single-threaded
//! and bit-reproducible for fixed inputs.

mod dispatch;
mod error;
mod gemm;
pub mod gradcheck;
pub mod init;
mod ops;
pub mod optim;
mod tensor;
pub mod tsr1;

pub use dispatch::{forward_op, forward_op_named, Attrs, OpKind};
pub use error::{Result, TensorError};
pub use gradcheck::grad_check;
pub use ops::{dropout_seed, Dropout, LAYERNORM_EPS};
pub use optim::{Adam, ParamStore, Parameter};
pub use tensor::{is_grad_enabled, no_grad, precision, Precision, PrecisionGuard, Tensor};
