use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::tensor::{ShapeError, Tensor};

pub const DEFAULT_LEARNING_RATE: f64 = 3e-4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AdamError {
    #[error(transparent)]
    Shape(#[from] ShapeError),
    #[error("non-finite gradient entry {value} at flat index {index}")]
    NonFiniteGradient { index: usize, value: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: DEFAULT_LEARNING_RATE,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Per-parameter ADAM moments.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Tensor,
    pub v: Tensor,
    pub t: u64,
    pub config: AdamConfig,
}

impl AdamState {
    pub fn new(shape: &[usize], config: AdamConfig) -> Self {
        AdamState {
            m: Tensor::zeros(shape),
            v: Tensor::zeros(shape),
            t: 0,
            config,
        }
    }
}

/// One bias-corrected ADAM descent step, `param -= lr * m_hat / (sqrt(v_hat) + eps)`.
pub fn adam_step(param: &mut Tensor, grad: &Tensor, state: &mut AdamState) -> Result<(), AdamError> {
    param.check_same("adam_step", grad)?;
    param.check_same("adam_step", &state.m)?;
    if let Some((index, &value)) = grad.data().iter().enumerate().find(|(_, v)| !v.is_finite()) {
        return Err(AdamError::NonFiniteGradient { index, value });
    }
    let AdamConfig {
        learning_rate,
        beta1,
        beta2,
        eps,
    } = state.config;
    state.t += 1;
    let bc1 = 1.0 - beta1.powi(state.t as i32);
    let bc2 = 1.0 - beta2.powi(state.t as i32);
    let m = state.m.data_mut();
    let v = state.v.data_mut();
    for (((p, &g), m), v) in param.data_mut().iter_mut().zip(grad.data()).zip(m).zip(v) {
        *m = beta1 * *m + (1.0 - beta1) * g;
        *v = beta2 * *v + (1.0 - beta2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p -= learning_rate * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}
