use super::DistError;
use crate::numerics::Tensor;

const HALF_LN_TAU: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Clone, PartialEq)]
pub struct DiagGaussianParams {
    pub mean: Tensor,
    pub log_std: Tensor,
}

impl DiagGaussianParams {
    pub fn new(mean: Tensor, log_std: Tensor) -> Result<Self, DistError> {
        mean.check_same("DiagGaussianParams", &log_std)?;
        Ok(DiagGaussianParams { mean, log_std })
    }

    pub fn standard(shape: &[usize]) -> Self {
        DiagGaussianParams {
            mean: Tensor::zeros(shape),
            log_std: Tensor::zeros(shape),
        }
    }
}

/// Reparameterized draw `mean + exp(log_std) * eps`.
pub fn gaussian_sample(params: &DiagGaussianParams, eps: &Tensor) -> Result<Tensor, DistError> {
    params.mean.check_same("gaussian_sample", eps)?;
    let mut z = params.log_std.zip_map(eps, |ls, e| ls.exp() * e)?;
    z.add_assign(&params.mean)?;
    Ok(z)
}

pub fn gaussian_log_density(z: &Tensor, params: &DiagGaussianParams) -> Result<Vec<f64>, DistError> {
    params.mean.check_same("gaussian_log_density", z)?;
    let cols = z.cols();
    Ok((0..z.rows())
        .map(|i| {
            let (zr, m, ls) = (z.row(i), params.mean.row(i), params.log_std.row(i));
            (0..cols)
                .map(|j| {
                    let u = (zr[j] - m[j]) * (-ls[j]).exp();
                    -0.5 * u * u - ls[j] - HALF_LN_TAU
                })
                .sum()
        })
        .collect())
}

pub fn std_normal_log_density(z: &Tensor) -> Vec<f64> {
    (0..z.rows())
        .map(|i| z.row(i).iter().map(|v| -0.5 * v * v - HALF_LN_TAU).sum())
        .collect()
}

/// `KL(q || N(0, I))` per row, `½ Σ (μ² + σ² - 1 - 2 log σ)`.
pub fn gaussian_kl_to_standard(q: &DiagGaussianParams) -> Vec<f64> {
    let per_unit = q
        .mean
        .zip_map(&q.log_std, |m, ls| 0.5 * (m * m + (2.0 * ls).exp() - 1.0 - 2.0 * ls))
        .expect("shapes checked at construction");
    per_unit.row_sums()
}

/// `KL(q || p)` per row for diagonal Gaussians.
pub fn gaussian_kl(q: &DiagGaussianParams, p: &DiagGaussianParams) -> Result<Vec<f64>, DistError> {
    q.mean.check_same("gaussian_kl", &p.mean)?;
    let cols = q.mean.cols();
    Ok((0..q.mean.rows())
        .map(|i| {
            let (mq, lq, mp, lp) = (q.mean.row(i), q.log_std.row(i), p.mean.row(i), p.log_std.row(i));
            (0..cols)
                .map(|j| {
                    let d = mq[j] - mp[j];
                    lp[j] - lq[j] + ((2.0 * lq[j]).exp() + d * d) / (2.0 * (2.0 * lp[j]).exp()) - 0.5
                })
                .sum()
        })
        .collect())
}
