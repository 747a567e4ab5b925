//! Binary Concrete (relaxed Bernoulli) distribution.
//!
//! Everything is expressed through the pre-sigmoid variable
//! `y = (location + L) / λ` with `L` standard logistic; the relaxed sample is
//! `s = σ(y)`. The density of `y` is `λ · f(λy - location)` where `f` is the
//! standard logistic density, so `log p(y) = log λ - t - 2 softplus(-t)` with
//! `t = λy - location`.

use super::DistError;
use crate::numerics::{log_sum_exp, sigmoid, softplus, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct BinaryConcreteParams {
    pub location_logits: Tensor,
    pub temperature: f64,
}

impl BinaryConcreteParams {
    pub fn new(location_logits: Tensor, temperature: f64) -> Result<Self, DistError> {
        check_temperature(temperature)?;
        Ok(BinaryConcreteParams {
            location_logits,
            temperature,
        })
    }
}

fn check_temperature(lambda: f64) -> Result<(), DistError> {
    if lambda > 0.0 && lambda.is_finite() {
        Ok(())
    } else {
        Err(DistError::Temperature(lambda))
    }
}

/// Reparameterized pre-sigmoid sample `(location + logistic_noise) / λ`.
pub fn concrete_sample_logit(params: &BinaryConcreteParams, logistic_noise: &Tensor) -> Result<Tensor, DistError> {
    check_temperature(params.temperature)?;
    let inv = 1.0 / params.temperature;
    Ok(params.location_logits.zip_map(logistic_noise, |a, l| (a + l) * inv)?)
}

#[inline]
fn log_density_unit(y: f64, location: f64, lambda: f64) -> f64 {
    let t = lambda * y - location;
    lambda.ln() - t - 2.0 * softplus(-t)
}

/// Per-row log density of the pre-sigmoid variable.
pub fn concrete_log_density_logit(y: &Tensor, params: &BinaryConcreteParams) -> Result<Vec<f64>, DistError> {
    check_temperature(params.temperature)?;
    let lambda = params.temperature;
    let per_unit = y.zip_map(&params.location_logits, |y, a| log_density_unit(y, a, lambda))?;
    Ok(per_unit.row_sums())
}

/// Partials of the per-row log density: `(d/dy, d/dlocation)`.
pub fn concrete_log_density_grads(y: &Tensor, params: &BinaryConcreteParams) -> Result<(Tensor, Tensor), DistError> {
    let lambda = params.temperature;
    // d/dt [-t - 2 softplus(-t)] = 1 - 2σ(t)
    let slope = y.zip_map(&params.location_logits, |y, a| 1.0 - 2.0 * sigmoid(lambda * y - a))?;
    Ok((slope.scale(lambda), slope.scale(-1.0)))
}

/// Per-row log density of the relaxed value `s ∈ (0, 1)`:
/// `log λ + a - (λ+1)(log s + log(1-s)) - 2 log(e^a s^-λ + (1-s)^-λ)`.
pub fn concrete_log_density_s(s: &Tensor, params: &BinaryConcreteParams) -> Result<Vec<f64>, DistError> {
    check_temperature(params.temperature)?;
    let lambda = params.temperature;
    let per_unit = s.zip_map(&params.location_logits, |s, a| {
        let (ls, l1s) = (s.ln(), (-s).ln_1p());
        lambda.ln() + a - (lambda + 1.0) * (ls + l1s) - 2.0 * log_sum_exp(&[a - lambda * ls, -lambda * l1s])
    })?;
    Ok(per_unit.row_sums())
}

/// `P(s ≤ x) = σ(λ logit(x) - location)`, elementwise.
pub fn concrete_cdf(x: f64, location: f64, lambda: f64) -> f64 {
    sigmoid(lambda * (x.ln() - (-x).ln_1p()) - location)
}

/// Single-sample estimate `log q(y) - log p(y)` per row, for `y` drawn from `q`.
pub fn concrete_kl_mc(
    q: &BinaryConcreteParams,
    p: &BinaryConcreteParams,
    y: &Tensor,
) -> Result<Vec<f64>, DistError> {
    let lq = concrete_log_density_logit(y, q)?;
    let lp = concrete_log_density_logit(y, p)?;
    Ok(lq.into_iter().zip(lp).map(|(a, b)| a - b).collect())
}

/// Hard threshold `1[y > 0]`; `y = 0` maps to 0.
pub fn harden(y: &Tensor) -> Tensor {
    y.map(|v| if v > 0.0 { 1.0 } else { 0.0 })
}
