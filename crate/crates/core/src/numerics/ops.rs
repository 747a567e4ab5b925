//! The fixed layer vocabulary: affine maps and elementwise nonlinearities,
//! each with a hand-derived vector-Jacobian product.

use thiserror::Error;

use super::tensor::{matmul, ShapeError, Tensor};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OpError {
    #[error(transparent)]
    Shape(#[from] ShapeError),
    #[error("{op}: argument {value} outside domain {domain}")]
    Domain {
        op: &'static str,
        value: f64,
        domain: &'static str,
    },
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^x)` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[inline]
pub fn log_sigmoid(x: f64) -> f64 {
    -softplus(-x)
}

#[inline]
pub fn logit(p: f64) -> f64 {
    p.ln() - (-p).ln_1p()
}

/// Numerically stable `log(sum(exp(values)))`.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let m = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + values.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// `X·W + b` with `W: [in, out]`, `b: [out]`, `X: [batch, in]`.
pub fn affine(w: &Tensor, b: &Tensor, x: &Tensor) -> Result<Tensor, OpError> {
    let (fan_in, fan_out) = (w.rows(), w.cols());
    if x.cols() != fan_in || b.len() != fan_out {
        return Err(ShapeError::Mismatch {
            op: "affine",
            left: x.shape().to_vec(),
            right: w.shape().to_vec(),
        }
        .into());
    }
    let mut y = matmul(x, false, w, false)?;
    for i in 0..y.rows() {
        for (v, bias) in y.row_mut(i).iter_mut().zip(b.data()) {
            *v += bias;
        }
    }
    Ok(y)
}

pub struct AffineGrads {
    pub w: Tensor,
    pub b: Tensor,
    pub x: Tensor,
}

pub fn affine_vjp(w: &Tensor, x: &Tensor, grad_out: &Tensor) -> Result<AffineGrads, OpError> {
    Ok(AffineGrads {
        w: matmul(x, true, grad_out, false)?,
        b: grad_out.col_sums(),
        x: matmul(grad_out, false, w, true)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Sigmoid,
    Tanh,
    Softplus,
    LogSigmoid,
    Logit,
}

impl Activation {
    pub fn scalar(self, x: f64) -> f64 {
        match self {
            Activation::Sigmoid => sigmoid(x),
            Activation::Tanh => x.tanh(),
            Activation::Softplus => softplus(x),
            Activation::LogSigmoid => log_sigmoid(x),
            Activation::Logit => logit(x),
        }
    }

    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Sigmoid => {
                let s = sigmoid(x);
                s * (1.0 - s)
            }
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            Activation::Softplus => sigmoid(x),
            Activation::LogSigmoid => sigmoid(-x),
            Activation::Logit => 1.0 / (x * (1.0 - x)),
        }
    }

    fn check_domain(self, x: &Tensor) -> Result<(), OpError> {
        if self == Activation::Logit {
            if let Some(&bad) = x.data().iter().find(|&&p| !(p > 0.0 && p < 1.0)) {
                return Err(OpError::Domain {
                    op: "logit",
                    value: bad,
                    domain: "(0, 1)",
                });
            }
        }
        Ok(())
    }

    pub fn forward(self, x: &Tensor) -> Result<Tensor, OpError> {
        self.check_domain(x)?;
        Ok(x.map(|v| self.scalar(v)))
    }

    /// Gradient with respect to the input, given the upstream gradient.
    pub fn vjp(self, x: &Tensor, grad_out: &Tensor) -> Result<Tensor, OpError> {
        self.check_domain(x)?;
        Ok(grad_out.zip_map(x, |g, v| g * self.derivative(v))?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{finite_diff_grad, NoiseKind, RngStream};

    fn rel_err(a: &Tensor, b: &Tensor) -> f64 {
        let num = a.sub(b).unwrap().max_abs();
        num / a.max_abs().max(b.max_abs()).max(1e-8)
    }

    #[test]
    fn affine_identity_and_scalar() {
        let y = affine(
            &Tensor::identity(2),
            &Tensor::zeros(&[2]),
            &Tensor::from_rows(&[vec![3.0, 4.0]]).unwrap(),
        )
        .unwrap();
        assert_eq!(y.data(), &[3.0, 4.0]);
        let y = affine(
            &Tensor::new(&[1, 1], vec![2.0]).unwrap(),
            &Tensor::new(&[1], vec![1.0]).unwrap(),
            &Tensor::new(&[1, 1], vec![3.0]).unwrap(),
        )
        .unwrap();
        assert_eq!(y.data(), &[7.0]);
    }

    #[test]
    fn affine_shape_error_names_shapes() {
        let err = affine(&Tensor::zeros(&[3, 2]), &Tensor::zeros(&[2]), &Tensor::zeros(&[1, 4])).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[1, 4]") && msg.contains("[3, 2]"), "{msg}");
    }

    #[test]
    fn affine_vjp_matches_finite_differences() {
        let mut rng = RngStream::new(5);
        let w = rng.sample(NoiseKind::StdNormal, &[3, 4]);
        let b = rng.sample(NoiseKind::StdNormal, &[4]);
        let x = rng.sample(NoiseKind::StdNormal, &[2, 3]);
        let g = rng.sample(NoiseKind::StdNormal, &[2, 4]);
        let dot = |y: &Tensor| y.mul(&g).unwrap().sum();
        let grads = affine_vjp(&w, &x, &g).unwrap();
        let fw = finite_diff_grad(|w| Ok(dot(&affine(w, &b, &x).unwrap())), &w, 1e-5).unwrap();
        let fb = finite_diff_grad(|b| Ok(dot(&affine(&w, b, &x).unwrap())), &b, 1e-5).unwrap();
        let fx = finite_diff_grad(|x| Ok(dot(&affine(&w, &b, x).unwrap())), &x, 1e-5).unwrap();
        assert!(rel_err(&grads.w, &fw) <= 1e-6);
        assert!(rel_err(&grads.b, &fb) <= 1e-6);
        assert!(rel_err(&grads.x, &fx) <= 1e-6);
    }

    #[test]
    fn activation_values() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!((softplus(0.0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((log_sigmoid(0.0) + std::f64::consts::LN_2).abs() < 1e-15);
        assert!(softplus(800.0).is_finite() && softplus(-800.0) >= 0.0);
    }

    #[test]
    fn logit_rejects_endpoints() {
        for p in [0.0, 1.0] {
            let t = Tensor::new(&[1], vec![p]).unwrap();
            assert!(matches!(Activation::Logit.forward(&t), Err(OpError::Domain { .. })));
        }
    }

    #[test]
    fn logit_inverts_sigmoid() {
        // sigmoid(y) near 1 keeps only ~e^-y relative precision in 1 - p, so
        // the attainable bound for y > 0 is a few ulps scaled by 1 + e^y.
        for i in -300..=300 {
            let y = f64::from(i) / 10.0;
            let back = logit(sigmoid(y));
            let tol = if y <= 0.0 { 1e-12 } else { 1e-12 + 4.0 * f64::EPSILON * (1.0 + y.exp()) };
            assert!((back - y).abs() <= tol, "y={y} back={back}");
        }
    }

    #[test]
    fn tanh_vjp_matches_finite_differences() {
        let x = RngStream::new(8).sample(NoiseKind::StdNormal, &[3, 3]);
        let g = Tensor::full(&[3, 3], 1.0);
        let analytic = Activation::Tanh.vjp(&x, &g).unwrap();
        let fd = finite_diff_grad(|x| Ok(x.map(f64::tanh).sum()), &x, 1e-5).unwrap();
        assert!(rel_err(&analytic, &fd) <= 1e-6);
    }

    #[test]
    fn log_sum_exp_stable() {
        assert!((log_sum_exp(&[1000.0, 1000.0]) - (1000.0 + std::f64::consts::LN_2)).abs() < 1e-12);
        assert_eq!(log_sum_exp(&[f64::NEG_INFINITY]), f64::NEG_INFINITY);
    }
}
