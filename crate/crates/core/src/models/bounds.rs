use super::{encode, forward, task_adapt, BoundEstimate, KlMode, Model, ModelError, Variant};
use crate::distributions::{bernoulli_logpmf, harden, BernoulliParams};
use crate::numerics::{log_sum_exp, NoiseKind, RngStream, Tensor};

/// Single-sample training bound of any variant on full image rows.
pub fn evaluate_bound(model: &Model, x_full: &Tensor, rng: &mut RngStream) -> Result<BoundEstimate, ModelError> {
    let batch = task_adapt(model.spec().task, x_full);
    let enc = encode(model, &batch.input)?;
    let noise = model.draw_noise(batch.input.rows(), rng);
    Ok(forward(model, &batch, &enc, &noise, KlMode::Analytic)?.estimate())
}

fn require(model: &Model, op: &'static str, allowed: &[Variant]) -> Result<(), ModelError> {
    if allowed.contains(&model.variant()) {
        Ok(())
    } else {
        Err(ModelError::WrongVariant {
            op,
            variant: model.variant(),
        })
    }
}

pub fn vae_bound(model: &Model, x_full: &Tensor, rng: &mut RngStream) -> Result<BoundEstimate, ModelError> {
    require(model, "vae_bound", &[Variant::Vae])?;
    evaluate_bound(model, x_full, rng)
}

pub fn vcae_bound(model: &Model, x_full: &Tensor, rng: &mut RngStream) -> Result<BoundEstimate, ModelError> {
    require(model, "vcae_bound", &[Variant::VcaeGaussian, Variant::VcaeDiscrete])?;
    evaluate_bound(model, x_full, rng)
}

pub fn concrete_training_bound(
    model: &Model,
    x_full: &Tensor,
    rng: &mut RngStream,
) -> Result<BoundEstimate, ModelError> {
    require(model, "concrete_training_bound", &[Variant::ConcreteS, Variant::ConcreteZ])?;
    evaluate_bound(model, x_full, rng)
}

pub fn vae_con_bound(model: &Model, x_full: &Tensor, rng: &mut RngStream) -> Result<BoundEstimate, ModelError> {
    require(model, "vae_con_bound", &[Variant::VaeCon])?;
    evaluate_bound(model, x_full, rng)
}

fn log_mean_exp_rows(weights: &[Vec<f64>]) -> Vec<f64> {
    weights
        .iter()
        .map(|w| log_sum_exp(w) - (w.len() as f64).ln())
        .collect()
}

/// Importance-weighted estimate of `ln p(x)` per datum with `k` joint samples.
///
/// Each log weight is the sampled-mode bound of one draw, so `k = 1`
/// reproduces that bound exactly for the same noise. Relaxed densities are
/// evaluated in logit space.
pub fn iwae_estimate(model: &Model, x_full: &Tensor, k: usize, rng: &mut RngStream) -> Result<Vec<f64>, ModelError> {
    if k == 0 {
        return Err(ModelError::ZeroSamples);
    }
    let batch = task_adapt(model.spec().task, x_full);
    let rows = batch.input.rows();
    let enc = encode(model, &batch.input)?;
    let mut weights = vec![Vec::with_capacity(k); rows];
    for _ in 0..k {
        let noise = model.draw_noise(rows, rng);
        let pass = forward(model, &batch, &enc, &noise, KlMode::Sampled)?;
        for (w, b) in weights.iter_mut().zip(pass.rows.bound()) {
            w.push(b);
        }
    }
    Ok(log_mean_exp_rows(&weights))
}

/// Test-time estimate for Concrete-z: relaxed samples are hardened and
/// scored under the discrete model they stand in for.
///
/// The proposal and prior are the Bernoulli distributions induced by the
/// Concrete location logits (`P(y > 0) = σ(α)`).
pub fn concrete_z_test_eval(
    model: &Model,
    x_full: &Tensor,
    k: usize,
    rng: &mut RngStream,
) -> Result<Vec<f64>, ModelError> {
    require(model, "concrete_z_test_eval", &[Variant::ConcreteZ])?;
    if k == 0 {
        return Err(ModelError::ZeroSamples);
    }
    let batch = task_adapt(model.spec().task, x_full);
    let rows = batch.input.rows();
    let enc = encode(model, &batch.input)?;
    let loc = enc.q_s.as_ref().expect("relaxed encoder pass").output();
    let lambda = model.spec().temperature;
    let q = BernoulliParams::new(loc.clone());
    let prior = model.store.get(model.prior.expect("relaxed prior"));
    let p = BernoulliParams::new(Tensor::broadcast_rows(prior, rows));
    let mut weights = vec![Vec::with_capacity(k); rows];
    for _ in 0..k {
        let noise = rng.sample(NoiseKind::StdLogistic, loc.shape());
        let y = loc.zip_map(&noise, |a, l| (a + l) / lambda)?;
        let b = harden(&y);
        let dec = model.p_x.forward(&model.store, &b)?;
        let recon = bernoulli_logpmf(&BernoulliParams::new(dec.output().clone()), &batch.target)?;
        let lp = bernoulli_logpmf(&p, &b)?;
        let lq = bernoulli_logpmf(&q, &b)?;
        for (i, w) in weights.iter_mut().enumerate() {
            w.push(recon[i] + lp[i] - lq[i]);
        }
    }
    Ok(log_mean_exp_rows(&weights))
}

/// The variant's test-time log-likelihood estimate: hardened for Concrete-z,
/// importance-weighted with relaxed samples otherwise.
pub fn test_estimate(model: &Model, x_full: &Tensor, k: usize, rng: &mut RngStream) -> Result<Vec<f64>, ModelError> {
    if model.variant() == Variant::ConcreteZ {
        concrete_z_test_eval(model, x_full, k, rng)
    } else {
        iwae_estimate(model, x_full, k, rng)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{backward, ModelSpec, Noise, Task, ZNoise};
    use crate::nets::Hidden;
    use crate::numerics::{finite_diff_grad, sigmoid};

    fn tiny(variant: Variant, hidden: Hidden) -> Model {
        let spec = ModelSpec {
            x_dim: 6,
            s_dim: 3,
            z_dim: 2,
            ..ModelSpec::new(variant, hidden, Task::GenerativeModeling)
        };
        Model::new(spec, 11).unwrap()
    }

    fn data(rows: usize, cols: usize, seed: u64) -> Tensor {
        RngStream::new(seed)
            .sample(NoiseKind::Uniform01, &[rows, cols])
            .map(|u| if u < 0.4 { 1.0 } else { 0.0 })
    }

    fn zero_decoder(model: &mut Model) {
        for id in model.p_x.param_ids() {
            model.store.get_mut(id).fill(0.0);
        }
    }

    #[test]
    fn zero_decoder_gives_uniform_reconstruction() {
        for v in Variant::ALL {
            let mut m = tiny(v, Hidden::Linear);
            zero_decoder(&mut m);
            let est = evaluate_bound(&m, &data(3, 6, 1), &mut RngStream::new(2)).unwrap();
            assert!((est.term_recon - 6.0 * 0.5f64.ln()).abs() < 1e-12, "{v}");
        }
    }

    #[test]
    fn structured_zero_decoder() {
        let spec = ModelSpec::new(Variant::VcaeGaussian, Hidden::Linear, Task::StructuredPrediction);
        let mut m = Model::new(spec, 0).unwrap();
        zero_decoder(&mut m);
        let x = Tensor::zeros(&[2, 784]);
        let est = vcae_bound(&m, &x, &mut RngStream::new(0)).unwrap();
        assert!((est.term_recon - 392.0 * 0.5f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn standard_encoder_has_zero_kl() {
        let mut m = tiny(Variant::Vae, Hidden::Linear);
        for id in m.q_z.as_ref().unwrap().param_ids() {
            m.store.get_mut(id).fill(0.0);
        }
        let est = vae_bound(&m, &data(4, 6, 3), &mut RngStream::new(1)).unwrap();
        assert_eq!(est.term_kl_z, 0.0);
        assert_eq!(est.term_kl_s, 0.0);
    }

    #[test]
    fn term_identity() {
        for v in Variant::ALL {
            let m = tiny(v, Hidden::Nonlinear { widths: vec![5] });
            let est = evaluate_bound(&m, &data(5, 6, 4), &mut RngStream::new(9)).unwrap();
            assert!((est.total - (est.term_recon - est.term_kl_s - est.term_kl_z)).abs() <= 1e-10);
        }
    }

    #[test]
    fn wrong_variant_rejected() {
        let m = tiny(Variant::Vae, Hidden::Linear);
        assert!(matches!(
            vcae_bound(&m, &data(1, 6, 0), &mut RngStream::new(0)),
            Err(ModelError::WrongVariant { .. })
        ));
        assert!(matches!(
            iwae_estimate(&m, &data(1, 6, 0), 0, &mut RngStream::new(0)),
            Err(ModelError::ZeroSamples)
        ));
    }

    #[test]
    fn single_sample_iwae_equals_sampled_bound() {
        for v in Variant::ALL {
            let m = tiny(v, Hidden::Linear);
            let x = data(4, 6, 5);
            let iw = iwae_estimate(&m, &x, 1, &mut RngStream::new(77)).unwrap();
            let batch = task_adapt(Task::GenerativeModeling, &x);
            let enc = encode(&m, &batch.input).unwrap();
            let noise = m.draw_noise(4, &mut RngStream::new(77));
            let pass = forward(&m, &batch, &enc, &noise, KlMode::Sampled).unwrap();
            assert_eq!(iw, pass.rows.bound(), "{v}");
        }
    }

    #[test]
    fn concrete_z_saturated_location_is_deterministic() {
        let mut m = tiny(Variant::ConcreteZ, Hidden::Linear);
        let enc = m.q_s.clone().unwrap();
        let (w, b) = enc.head_ids(0);
        m.store.get_mut(w).fill(0.0);
        m.store.get_mut(b).fill(30.0);
        let x = data(2, 6, 8);
        let est = concrete_z_test_eval(&m, &x, 5, &mut RngStream::new(3)).unwrap();
        let ones = Tensor::full(&[2, 2], 1.0);
        let dec = m.p_x.forward(&m.store, &ones).unwrap();
        let recon = bernoulli_logpmf(&BernoulliParams::new(dec.output().clone()), &x).unwrap();
        let prior = 2.0 * 0.5f64.ln();
        let q = 2.0 * crate::numerics::log_sigmoid(30.0);
        for i in 0..2 {
            assert!((est[i] - (recon[i] + prior - q)).abs() < 1e-9);
        }
    }

    /// Loss as a function of every parameter, with frozen noise.
    fn loss_at(model: &Model, x: &Tensor, noise: &Noise, mode: KlMode) -> f64 {
        let batch = task_adapt(model.spec().task, x);
        let enc = encode(model, &batch.input).unwrap();
        -forward(model, &batch, &enc, noise, mode).unwrap().estimate().total
    }

    fn check_gradients(variant: Variant, hidden: Hidden, mode: KlMode) {
        let model = tiny(variant, hidden);
        let x = data(3, 6, 21);
        let mut noise = model.draw_noise(3, &mut RngStream::new(5));
        if let Some(ZNoise::Uniform(u)) = &noise.z {
            // Bernoulli z is held fixed; only non-score paths are checked here.
            let enc = encode(&model, &x).unwrap();
            let logits = enc.q_z.as_ref().unwrap().output();
            noise.z = Some(ZNoise::Fixed(u.zip_map(logits, |u, l| if u < sigmoid(l) { 1.0 } else { 0.0 }).unwrap()));
        }
        let batch = task_adapt(Task::GenerativeModeling, &x);
        let enc = encode(&model, &batch.input).unwrap();
        let pass = forward(&model, &batch, &enc, &noise, mode).unwrap();
        let mut grads = model.store.grad_buffer();
        backward(&model, &batch, &enc, &pass, None, &mut grads).unwrap();

        for (i, name) in model.store.names().enumerate() {
            if name.starts_with("nvil") {
                continue;
            }
            let id = model.store.id(name).unwrap();
            // The Bernoulli encoder's direct log-probability term in sampled mode is a score term.
            if mode == KlMode::Sampled && variant.latent() == crate::models::LatentKind::Bernoulli && name.starts_with("q_z") {
                continue;
            }
            let fd = finite_diff_grad(
                |p| {
                    let mut m = model.clone();
                    *m.store.get_mut(id) = p.clone();
                    Ok(loss_at(&m, &x, &noise, mode))
                },
                model.store.get(id),
                1e-5,
            )
            .unwrap();
            let g = grads.get(id);
            let scale = fd.max_abs().max(1e-3);
            let err = g.sub(&fd).unwrap().max_abs() / scale;
            assert!(err <= 1e-4, "{variant} {mode:?} param {i} `{name}`: rel err {err}");
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        for v in Variant::ALL {
            for mode in [KlMode::Analytic, KlMode::Sampled] {
                check_gradients(v, Hidden::Linear, mode);
                check_gradients(v, Hidden::Nonlinear { widths: vec![4, 3] }, mode);
            }
        }
    }
}
