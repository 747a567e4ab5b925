//! Gauss–Legendre rules and scalar helpers used by the exact oracles. Kept
//! separate from the library's numerics on purpose.

use std::f64::consts::PI;

/// Nodes and weights of the `n`-point rule on `[a, b]`.
pub fn gauss_legendre(n: usize, a: f64, b: f64) -> Vec<(f64, f64)> {
    let mut rule = Vec::with_capacity(n);
    for i in 0..n {
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        rule.push((0.5 * (b - a) * x + 0.5 * (b + a), 0.5 * (b - a) * w));
    }
    rule
}

pub fn sig(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^t)`
pub fn softplus(t: f64) -> f64 {
    t.max(0.0) + (-t.abs()).exp().ln_1p()
}

pub fn logit(u: f64) -> f64 {
    u.ln() - (-u).ln_1p()
}

/// `ln Bern(x | σ(η))`
pub fn bern_ll(x: f64, eta: f64) -> f64 {
    -(x * softplus(-eta) + (1.0 - x) * softplus(eta))
}

pub fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
}

/// Every point of the tensor-product rule in `dims` dimensions, as
/// (coordinates, weight).
pub fn product_rule(rule: &[(f64, f64)], dims: usize) -> Vec<(Vec<f64>, f64)> {
    let mut points = vec![(Vec::new(), 1.0)];
    for _ in 0..dims {
        points = points
            .into_iter()
            .flat_map(|(xs, w): (Vec<f64>, f64)| {
                rule.iter().map(move |&(x, v)| {
                    let mut next = xs.clone();
                    next.push(x);
                    (next, w * v)
                })
            })
            .collect();
    }
    points
}
