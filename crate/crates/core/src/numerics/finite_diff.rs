use thiserror::Error;

use super::Tensor;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("objective is non-finite ({value}) at coordinate {index}")]
    NonFinite { index: usize, value: f64 },
    #[error("objective failed: {0}")]
    Objective(String),
}

/// Central differences `(f(x + h e_i) - f(x - h e_i)) / 2h` for every coordinate.
pub fn finite_diff_grad<F>(mut f: F, x: &Tensor, h: f64) -> Result<Tensor, OracleError>
where
    F: FnMut(&Tensor) -> Result<f64, OracleError>,
{
    let mut probe = x.clone();
    let mut grad = Tensor::zeros(x.shape());
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = f(&probe)?;
        probe.data_mut()[i] = orig - h;
        let down = f(&probe)?;
        probe.data_mut()[i] = orig;
        for value in [up, down] {
            if !value.is_finite() {
                return Err(OracleError::NonFinite { index: i, value });
            }
        }
        grad.data_mut()[i] = (up - down) / (2.0 * h);
    }
    Ok(grad)
}
