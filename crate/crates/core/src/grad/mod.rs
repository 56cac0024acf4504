//! Reverse-mode differentiation over dense `f64` tensors.
//!
//! The primitive set is deliberately small: matmul, add and multiply (with
//! broadcasting over the point axis only), leaky-relu, tanh, concat along the
//! last axis, max-reduce over points, mean, square, sum, exp and log.
//! Everything else in the crate is a composition of these.

mod check;
mod gemm;
mod tape;
mod tensor;

pub use check::{finite_diff_check, finite_diff_check_coords, FdReport};
pub use tape::{Gradients, Tape, Var, LEAKY_SLOPE};
pub use tensor::Tensor;
