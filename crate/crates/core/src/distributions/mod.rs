//! Bernoulli, diagonal Gaussian and Binary Concrete families: log densities,
//! reparameterized samplers, KL divergences and their partial derivatives.
//!
//! Row-wise functions take `[batch, units]` tensors and return one value per
//! batch row, summed over units.

mod bernoulli;
mod concrete;
mod gaussian;

use thiserror::Error;

use crate::numerics::ShapeError;

pub use bernoulli::{bernoulli_kl, bernoulli_kl_grads, bernoulli_logpmf, bernoulli_logpmf_grad, BernoulliParams};
pub use concrete::{
    concrete_cdf, concrete_kl_mc, concrete_log_density_grads, concrete_log_density_logit, concrete_log_density_s,
    concrete_sample_logit, harden, BinaryConcreteParams,
};
pub use gaussian::{
    gaussian_kl, gaussian_kl_to_standard, gaussian_log_density, gaussian_sample, std_normal_log_density,
    DiagGaussianParams,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DistError {
    #[error(transparent)]
    Shape(#[from] ShapeError),
    #[error("observation {value} at flat index {index} is not binary")]
    NonBinary { index: usize, value: f64 },
    #[error("temperature must be positive, got {0}")]
    Temperature(f64),
}
