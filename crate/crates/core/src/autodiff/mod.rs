//! Minimal reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! Build a [`Graph`] per forward pass, register parameters as leaves with
//! [`Graph::param`], call [`Graph::backward`] on a scalar loss and read the
//! leaf gradients back with [`Graph::grad`].

mod adam;
mod gradcheck;
mod graph;
pub(crate) mod kernels;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use gradcheck::{
    check_all_ops, check_op, grad_check, relative_error, OpCheck, GRAD_CHECK_EPS, GRAD_CHECK_TOL,
};
pub use graph::{sigmoid, BatchStats, Graph, OpKind, Var, BATCHNORM_EPS};
pub use tensor::Tensor;
