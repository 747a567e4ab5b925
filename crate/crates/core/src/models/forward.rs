//! One single-sample pass through a model and its reverse pass.
//!
//! The loss differentiated by [`backward`] is the negated batch-mean bound.
//! For Bernoulli `z` only the parts of the gradient that do not need a score
//! function are produced here; the estimators add the rest.

use super::{Batch, LatentKind, Model, ModelError, Variant};
use crate::distributions::{
    bernoulli_kl, bernoulli_kl_grads, bernoulli_logpmf, concrete_kl_mc, concrete_log_density_grads,
    gaussian_kl_to_standard, gaussian_log_density, std_normal_log_density, BernoulliParams,
    BinaryConcreteParams, DiagGaussianParams,
};
use crate::nets::{ChannelPass, GradBuffer};
use crate::numerics::{sigmoid, Tensor};

/// Noise for the `z` layer.
#[derive(Debug, Clone, PartialEq)]
pub enum ZNoise {
    /// Standard normal draws for a Gaussian `z`.
    Normal(Tensor),
    /// Uniform draws for a Bernoulli `z` (`z = 1[u < σ(l)]`).
    Uniform(Tensor),
    /// A Bernoulli `z` given directly.
    Fixed(Tensor),
}

/// All randomness consumed by one pass.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Noise {
    /// Standard logistic draws for the relaxed layer.
    pub s: Option<Tensor>,
    pub z: Option<ZNoise>,
}

/// How the KL terms are computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KlMode {
    /// Closed form for `KL(q(z|·)‖p(z))`; the training bound.
    Analytic,
    /// `log q(z|·) − log p(z)` at the sampled `z`; the K = 1 importance weight.
    Sampled,
}

/// Encoder outputs that depend only on the input, reused across samples.
#[derive(Debug, Clone)]
pub struct Encoded {
    pub(crate) q_s: Option<ChannelPass>,
    pub(crate) q_z: Option<ChannelPass>,
}

/// Per-datum terms of one bound sample.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RowTerms {
    pub recon: Vec<f64>,
    pub kl_s: Vec<f64>,
    pub kl_z: Vec<f64>,
}

impl RowTerms {
    pub fn bound(&self) -> Vec<f64> {
        self.recon
            .iter()
            .zip(&self.kl_s)
            .zip(&self.kl_z)
            .map(|((r, s), z)| r - s - z)
            .collect()
    }

    pub fn estimate(&self) -> BoundEstimate {
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len().max(1) as f64;
        BoundEstimate::from_terms(mean(&self.recon), mean(&self.kl_s), mean(&self.kl_z))
    }
}

/// Batch-mean bound and its three terms, in nats.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundEstimate {
    pub total: f64,
    pub term_recon: f64,
    pub term_kl_s: f64,
    pub term_kl_z: f64,
}

impl BoundEstimate {
    pub fn from_terms(recon: f64, kl_s: f64, kl_z: f64) -> Self {
        BoundEstimate {
            total: recon - kl_s - kl_z,
            term_recon: recon,
            term_kl_s: kl_s,
            term_kl_z: kl_z,
        }
    }
}

/// Intermediate values of one pass, needed by [`backward`].
#[derive(Debug, Clone)]
pub struct Pass {
    pub rows: RowTerms,
    pub mode: KlMode,
    /// Relaxed sample in logit space.
    pub y: Option<Tensor>,
    pub s: Option<Tensor>,
    pub z: Option<Tensor>,
    /// Logits of a Bernoulli `q(z|x)`.
    pub z_logits: Option<Tensor>,
    pub(crate) q_z_pass: Option<ChannelPass>,
    pub(crate) eps: Option<Tensor>,
    pub(crate) prior_loc: Option<Tensor>,
    pub(crate) p_s_pass: Option<ChannelPass>,
    pub(crate) dec: ChannelPass,
}

impl Pass {
    pub fn estimate(&self) -> BoundEstimate {
        self.rows.estimate()
    }
}

pub fn encode(model: &Model, input: &Tensor) -> Result<Encoded, ModelError> {
    let (expected, _) = model.spec().io_dims();
    if input.cols() != expected {
        return Err(ModelError::InputWidth {
            expected,
            got: input.cols(),
        });
    }
    let q_s = model.q_s.as_ref().map(|c| c.forward(&model.store, input)).transpose()?;
    let q_z = match (&model.q_z, model.variant()) {
        (Some(c), v) if v != Variant::VaeCon => Some(c.forward(&model.store, input)?),
        _ => None,
    };
    Ok(Encoded { q_s, q_z })
}

fn relaxed_q(model: &Model, enc: &Encoded) -> Result<BinaryConcreteParams, ModelError> {
    let pass = enc.q_s.as_ref().expect("relaxed encoder pass");
    Ok(BinaryConcreteParams::new(pass.output().clone(), model.spec().temperature)?)
}

fn bernoulli_prior(model: &Model, rows: usize) -> BernoulliParams {
    let p = model.store.get(model.prior.expect("Bernoulli prior"));
    BernoulliParams::new(Tensor::broadcast_rows(p, rows))
}

pub fn forward(model: &Model, batch: &Batch, enc: &Encoded, noise: &Noise, mode: KlMode) -> Result<Pass, ModelError> {
    let rows = batch.input.rows();
    let store = &model.store;
    let v = model.variant();

    let (y, s) = if v.has_relaxed() {
        let q = relaxed_q(model, enc)?;
        let l = noise.s.as_ref().ok_or(ModelError::Noise("relaxed layer needs logistic noise"))?;
        let y = crate::distributions::concrete_sample_logit(&q, l)?;
        let s = y.map(sigmoid);
        (Some(y), Some(s))
    } else {
        (None, None)
    };

    let mut q_z_pass = None;
    let mut eps = None;
    let mut z_logits = None;
    let (z, kl_z) = match v.latent() {
        LatentKind::None => (None, vec![0.0; rows]),
        LatentKind::Gaussian => {
            let pass = if v == Variant::VaeCon {
                let c = model.q_z.as_ref().expect("latent encoder");
                c.forward(store, s.as_ref().expect("relaxed sample"))?
            } else {
                enc.q_z.clone().expect("latent encoder pass")
            };
            let q = DiagGaussianParams::new(pass.outputs[0].clone(), pass.outputs[1].clone())?;
            let e = match &noise.z {
                Some(ZNoise::Normal(e)) => e.clone(),
                _ => return Err(ModelError::Noise("Gaussian z needs standard normal noise")),
            };
            let z = crate::distributions::gaussian_sample(&q, &e)?;
            let kl = match mode {
                KlMode::Analytic => gaussian_kl_to_standard(&q),
                KlMode::Sampled => {
                    let lq = gaussian_log_density(&z, &q)?;
                    let lp = std_normal_log_density(&z);
                    lq.iter().zip(&lp).map(|(a, b)| a - b).collect()
                }
            };
            q_z_pass = Some(pass);
            eps = Some(e);
            (Some(z), kl)
        }
        LatentKind::Bernoulli => {
            let pass = enc.q_z.as_ref().expect("latent encoder pass");
            let logits = pass.output().clone();
            let z = match &noise.z {
                Some(ZNoise::Uniform(u)) => u.zip_map(&logits, |u, l| if u < sigmoid(l) { 1.0 } else { 0.0 })?,
                Some(ZNoise::Fixed(z)) => z.clone(),
                _ => return Err(ModelError::Noise("Bernoulli z needs uniform noise or a fixed sample")),
            };
            let q = BernoulliParams::new(logits.clone());
            let p = bernoulli_prior(model, rows);
            let kl = match mode {
                KlMode::Analytic => bernoulli_kl(&q, &p)?,
                KlMode::Sampled => {
                    let lq = bernoulli_logpmf(&q, &z)?;
                    let lp = bernoulli_logpmf(&p, &z)?;
                    lq.iter().zip(&lp).map(|(a, b)| a - b).collect()
                }
            };
            z_logits = Some(logits);
            (Some(z), kl)
        }
    };

    let mut p_s_pass = None;
    let (prior_loc, kl_s) = match &y {
        Some(y) => {
            let loc = if let Some(c) = &model.p_s {
                let pass = c.forward(store, z.as_ref().expect("z sample"))?;
                let loc = pass.output().clone();
                p_s_pass = Some(pass);
                loc
            } else {
                Tensor::broadcast_rows(store.get(model.prior.expect("relaxed prior")), rows)
            };
            let q = relaxed_q(model, enc)?;
            let p = BinaryConcreteParams::new(loc.clone(), model.spec().prior_temperature())?;
            let kl = concrete_kl_mc(&q, &p, y)?;
            (Some(loc), kl)
        }
        None => (None, vec![0.0; rows]),
    };

    let dec_in = s.as_ref().or(z.as_ref()).expect("decoder input");
    let dec = model.p_x.forward(store, dec_in)?;
    let recon = bernoulli_logpmf(&BernoulliParams::new(dec.output().clone()), &batch.target)?;

    Ok(Pass {
        rows: RowTerms { recon, kl_s, kl_z },
        mode,
        y,
        s,
        z,
        z_logits,
        q_z_pass,
        eps,
        prior_loc,
        p_s_pass,
        dec,
    })
}

/// Accumulates the gradient of the negated batch-mean bound into `grads`.
///
/// With a Bernoulli `z`, `extra_z_logit_grad` is added to the gradient of the
/// loss with respect to the `q(z|x)` logits (the score-function part); the
/// analytic KL gradient (or, in sampled mode, the prior gradient) is always
/// included.
pub fn backward(
    model: &Model,
    batch: &Batch,
    enc: &Encoded,
    pass: &Pass,
    extra_z_logit_grad: Option<&Tensor>,
    grads: &mut GradBuffer,
) -> Result<(), ModelError> {
    let rows = batch.input.rows();
    let c = 1.0 / rows as f64;
    let store = &model.store;
    let v = model.variant();
    let spec = model.spec();

    let g_logits = pass.dec.output().zip_map(&batch.target, |l, x| c * (sigmoid(l) - x))?;
    let want_dec_input = v.has_relaxed() || v.latent() == LatentKind::Gaussian;
    let g_dec_in = model.p_x.backward(store, &pass.dec, &[&g_logits], grads, want_dec_input)?;

    let (mut g_s, mut g_z) = if v.has_relaxed() { (g_dec_in, None) } else { (None, g_dec_in) };

    // Relaxed-layer KL: log q(y) − log p(y), y pathwise.
    let mut g_y = None;
    let mut g_loc_q = None;
    if let (Some(y), Some(loc)) = (&pass.y, &pass.prior_loc) {
        let q = relaxed_q(model, enc)?;
        let p = BinaryConcreteParams::new(loc.clone(), spec.prior_temperature())?;
        let (dyq, daq) = concrete_log_density_grads(y, &q)?;
        let (dyp, dap) = concrete_log_density_grads(y, &p)?;
        g_y = Some(dyq.zip_map(&dyp, |a, b| c * (a - b))?);
        g_loc_q = Some(daq.scale(c));
        let g_loc_p = dap.scale(-c);
        if let Some(ch) = &model.p_s {
            let p_s_pass = pass.p_s_pass.as_ref().expect("surrogate prior pass");
            let want = v.latent() == LatentKind::Gaussian;
            if let Some(gz) = ch.backward(store, p_s_pass, &[&g_loc_p], grads, want)? {
                match &mut g_z {
                    Some(acc) => acc.add_assign(&gz)?,
                    None => g_z = Some(gz),
                }
            }
        } else {
            grads.add(model.prior.expect("relaxed prior"), &g_loc_p.col_sums());
        }
    }

    match v.latent() {
        LatentKind::None => {}
        LatentKind::Gaussian => {
            let q_pass = pass.q_z_pass.as_ref().expect("latent encoder pass");
            let mean = &q_pass.outputs[0];
            let log_std = &q_pass.outputs[1];
            let eps = pass.eps.as_ref().expect("normal noise");
            let z = pass.z.as_ref().expect("z sample");
            let mut gz = g_z.take().unwrap_or_else(|| Tensor::zeros(z.shape()));
            if pass.mode == KlMode::Sampled {
                // −log N(z; 0, I) contributes z; log q(z) at its own sample only through log σ.
                gz.axpy(c, z)?;
            }
            let mut g_mean = gz.clone();
            let mut g_log_std = gz.zip_map(log_std, |g, ls| g * ls.exp())?.mul(eps)?;
            match pass.mode {
                KlMode::Analytic => {
                    g_mean.axpy(c, mean)?;
                    g_log_std.add_assign(&log_std.map(|ls| c * ((2.0 * ls).exp() - 1.0)))?;
                }
                KlMode::Sampled => g_log_std.add_assign(&Tensor::full(log_std.shape(), -c))?,
            }
            let q_z = model.q_z.as_ref().expect("latent encoder");
            let want_input = v == Variant::VaeCon;
            if let Some(gs) = q_z.backward(store, q_pass, &[&g_mean, &g_log_std], grads, want_input)? {
                g_s.as_mut().expect("relaxed gradient").add_assign(&gs)?;
            }
        }
        LatentKind::Bernoulli => {
            let logits = pass.z_logits.as_ref().expect("latent logits");
            let p = bernoulli_prior(model, rows);
            let q = BernoulliParams::new(logits.clone());
            let prior_id = model.prior.expect("Bernoulli prior");
            let mut g_l = Tensor::zeros(logits.shape());
            match pass.mode {
                KlMode::Analytic => {
                    let (dq, dp) = bernoulli_kl_grads(&q, &p)?;
                    g_l.axpy(c, &dq)?;
                    grads.add(prior_id, &dp.scale(c).col_sums());
                }
                KlMode::Sampled => {
                    let z = pass.z.as_ref().expect("z sample");
                    let g_prior = z.zip_map(&p.logits, |z, lp| -c * (z - sigmoid(lp)))?;
                    grads.add(prior_id, &g_prior.col_sums());
                }
            }
            if let Some(extra) = extra_z_logit_grad {
                g_l.add_assign(extra)?;
            }
            let q_pass = enc.q_z.as_ref().expect("latent encoder pass");
            model.q_z.as_ref().expect("latent encoder").backward(store, q_pass, &[&g_l], grads, false)?;
        }
    }

    if let (Some(s), Some(mut gy), Some(mut g_loc)) = (pass.s.as_ref(), g_y, g_loc_q) {
        if let Some(gs) = &g_s {
            gy.add_assign(&gs.zip_map(s, |g, s| g * s * (1.0 - s))?)?;
        }
        let lambda = spec.temperature;
        g_loc.axpy(1.0 / lambda, &gy)?;
        let q_pass = enc.q_s.as_ref().expect("relaxed encoder pass");
        model.q_s.as_ref().expect("relaxed encoder").backward(store, q_pass, &[&g_loc], grads, false)?;
    }
    Ok(())
}
