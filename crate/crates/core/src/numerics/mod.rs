//! Dense tensors, counter-based random streams, the layer vocabulary with
//! hand-derived vector-Jacobian products, a finite-difference oracle and ADAM.

mod adam;
mod finite_diff;
mod ops;
mod rng;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamError, AdamState, DEFAULT_LEARNING_RATE};
pub use finite_diff::{finite_diff_grad, OracleError};
pub use ops::{
    affine, affine_vjp, log_sigmoid, log_sum_exp, logit, sigmoid, softplus, Activation, AffineGrads, OpError,
};
pub use rng::{logistic_from_uniform, NoiseKind, RngStream, UNIFORM_EPS};
pub use tensor::{matmul, ShapeError, Tensor};
