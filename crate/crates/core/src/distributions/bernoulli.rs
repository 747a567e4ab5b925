use super::DistError;
use crate::numerics::{log_sigmoid, sigmoid, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct BernoulliParams {
    pub logits: Tensor,
}

impl BernoulliParams {
    pub fn new(logits: Tensor) -> Self {
        BernoulliParams { logits }
    }

    pub fn probs(&self) -> Tensor {
        self.logits.map(sigmoid)
    }
}

/// Row sums of `x log σ(l) + (1 - x) log σ(-l)`.
pub fn bernoulli_logpmf(params: &BernoulliParams, x: &Tensor) -> Result<Vec<f64>, DistError> {
    params.logits.check_same("bernoulli_logpmf", x)?;
    if let Some((index, &value)) = x.data().iter().enumerate().find(|(_, &v)| v != 0.0 && v != 1.0) {
        return Err(DistError::NonBinary { index, value });
    }
    let cols = x.cols();
    Ok((0..x.rows())
        .map(|i| {
            let l = params.logits.row(i);
            let xr = x.row(i);
            (0..cols)
                .map(|j| if xr[j] == 1.0 { log_sigmoid(l[j]) } else { log_sigmoid(-l[j]) })
                .sum()
        })
        .collect())
}

/// Derivative of the log-pmf with respect to the logits: `x - σ(l)`.
pub fn bernoulli_logpmf_grad(params: &BernoulliParams, x: &Tensor) -> Result<Tensor, DistError> {
    Ok(x.zip_map(&params.logits, |x, l| x - sigmoid(l))?)
}

/// Closed-form `KL(q || p)` per row.
pub fn bernoulli_kl(q: &BernoulliParams, p: &BernoulliParams) -> Result<Vec<f64>, DistError> {
    let per_unit = q.logits.zip_map(&p.logits, |lq, lp| {
        let qp = sigmoid(lq);
        qp * (log_sigmoid(lq) - log_sigmoid(lp)) + (1.0 - qp) * (log_sigmoid(-lq) - log_sigmoid(-lp))
    })?;
    Ok(per_unit.row_sums())
}

/// Partials of the per-row KL: `(d/dl_q, d/dl_p) = (q(1-q)(l_q - l_p), p - q)`.
pub fn bernoulli_kl_grads(q: &BernoulliParams, p: &BernoulliParams) -> Result<(Tensor, Tensor), DistError> {
    let dq = q.logits.zip_map(&p.logits, |lq, lp| {
        let s = sigmoid(lq);
        s * (1.0 - s) * (lq - lp)
    })?;
    let dp = q.logits.zip_map(&p.logits, |lq, lp| sigmoid(lp) - sigmoid(lq))?;
    Ok((dq, dp))
}
