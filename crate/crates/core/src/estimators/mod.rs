//! Gradient estimators: pathwise, NVIL score function, the hybrid of the two
//! used for a Bernoulli latent under a relaxed surrogate, and a probe that
//! measures gradient variance across replicas.

use thiserror::Error;

use crate::models::{
    backward, encode, forward, task_adapt, BoundEstimate, KlMode, Model, ModelError, ParamGroup, Variant,
};
use crate::nets::{Channel, GradBuffer, NetError, ParamStore};
use crate::numerics::{sigmoid, RngStream, Tensor};

pub const DEFAULT_DECAY: f64 = 0.8;
pub const DEFAULT_REPLICAS: usize = 64;

#[derive(Debug, Error)]
pub enum EstimatorError {
    #[error("variant {0} has a Bernoulli layer on the pathwise route")]
    NonReparameterized(Variant),
    #[error("learning signal at row {index} is not finite ({value})")]
    NonFiniteSignal { index: usize, value: f64 },
    #[error("variant {0} needs NVIL state")]
    MissingNvilState(Variant),
    #[error("variance probe needs at least 2 replicas, got {0}")]
    TooFewReplicas(usize),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Net(#[from] NetError),
}

/// Input-dependent baseline and running signal statistics for NVIL.
#[derive(Debug, Clone)]
pub struct NvilState {
    baseline: Channel,
    /// Running mean of the learning signal.
    pub mean: f64,
    /// Running mean of the squared centered signal.
    pub var: f64,
    pub decay: f64,
}

/// Result of one NVIL gradient computation.
#[derive(Debug, Clone)]
pub struct NvilOutput {
    /// Loss gradient with respect to the `q(z|x)` logits (already batch-averaged).
    pub logit_grad: Tensor,
    /// `signal − baseline(x) − mean` per row.
    pub centered: Vec<f64>,
    /// Normalizer `max(1, √var)` used for this step.
    pub scale: f64,
}

impl NvilState {
    pub fn new(baseline: Channel) -> Self {
        NvilState {
            baseline,
            mean: 0.0,
            var: 0.0,
            decay: DEFAULT_DECAY,
        }
    }

    pub fn baseline(&self) -> &Channel {
        &self.baseline
    }

    pub fn predict(&self, store: &ParamStore, input: &Tensor) -> Result<Vec<f64>, NetError> {
        Ok(self.baseline.forward(store, input)?.output().data().to_vec())
    }

    pub(crate) fn read_buffers(&mut self, store: &ParamStore) {
        if let Some(t) = store.buffer("nvil/mean") {
            self.mean = t.data()[0];
        }
        if let Some(t) = store.buffer("nvil/var") {
            self.var = t.data()[0];
        }
    }

    pub(crate) fn write_buffers(&self, store: &mut ParamStore) {
        store.set_buffer("nvil/mean", Tensor::scalar(self.mean)).expect("buffer name is free");
        store.set_buffer("nvil/var", Tensor::scalar(self.var)).expect("buffer name is free");
    }
}

/// Score-function gradient with NVIL control variates.
///
/// `score` holds `∂ log q(z|x) / ∂ logits` per row. The returned logit
/// gradient is for the loss (negated signal), averaged over the batch. The
/// baseline's regression gradient goes into `grads`, and the running
/// statistics are updated after the gradient has been formed.
pub fn nvil_score_grad(
    state: &mut NvilState,
    store: &ParamStore,
    grads: &mut GradBuffer,
    signal: &[f64],
    score: &Tensor,
    baseline_input: &Tensor,
) -> Result<NvilOutput, EstimatorError> {
    if let Some((index, &value)) = signal.iter().enumerate().find(|(_, v)| !v.is_finite()) {
        return Err(EstimatorError::NonFiniteSignal { index, value });
    }
    let rows = signal.len();
    let c = 1.0 / rows as f64;
    let pass = state.baseline.forward(store, baseline_input)?;
    let predicted = pass.output().data();
    let centered: Vec<f64> = signal
        .iter()
        .zip(predicted)
        .map(|(s, b)| s - b - state.mean)
        .collect();
    let scale = state.var.sqrt().max(1.0);

    let mut logit_grad = score.clone();
    for (i, w) in centered.iter().enumerate() {
        let k = -c * w / scale;
        for g in logit_grad.row_mut(i) {
            *g *= k;
        }
    }

    let g_base = Tensor::new(&[rows, 1], centered.iter().map(|w| -2.0 * c * w).collect())
        .expect("one column per row");
    state.baseline.backward(store, &pass, &[&g_base], grads, false)?;

    let d = state.decay;
    state.mean = d * state.mean + (1.0 - d) * signal.iter().sum::<f64>() * c;
    state.var = d * state.var + (1.0 - d) * centered.iter().map(|w| w * w).sum::<f64>() * c;
    Ok(NvilOutput {
        logit_grad,
        centered,
        scale,
    })
}

fn bernoulli_score(z: &Tensor, logits: &Tensor) -> Result<Tensor, EstimatorError> {
    Ok(z.zip_map(logits, |z, l| z - sigmoid(l)).map_err(ModelError::from)?)
}

/// Exact reverse-mode gradients of the single-sample training bound for a
/// fully reparameterized variant.
pub fn pathwise_step(
    model: &Model,
    x_full: &Tensor,
    rng: &mut RngStream,
    grads: &mut GradBuffer,
) -> Result<BoundEstimate, EstimatorError> {
    if !model.variant().is_pathwise() {
        return Err(EstimatorError::NonReparameterized(model.variant()));
    }
    let batch = task_adapt(model.spec().task, x_full);
    let enc = encode(model, &batch.input)?;
    let noise = model.draw_noise(batch.input.rows(), rng);
    let pass = forward(model, &batch, &enc, &noise, KlMode::Analytic)?;
    backward(model, &batch, &enc, &pass, None, grads)?;
    Ok(pass.estimate())
}

/// One gradient estimate for the Bernoulli-latent VCAE: pathwise through the
/// relaxed channel, score function with NVIL on `z`, closed-form KL gradient
/// for `KL(q(z|x)‖p(z))`.
pub fn hybrid_vcae_step(
    model: &Model,
    state: &mut NvilState,
    x_full: &Tensor,
    rng: &mut RngStream,
    grads: &mut GradBuffer,
) -> Result<BoundEstimate, EstimatorError> {
    if model.variant() != Variant::VcaeDiscrete {
        return Err(ModelError::WrongVariant {
            op: "hybrid_vcae_step",
            variant: model.variant(),
        }
        .into());
    }
    let batch = task_adapt(model.spec().task, x_full);
    let enc = encode(model, &batch.input)?;
    let noise = model.draw_noise(batch.input.rows(), rng);
    let pass = forward(model, &batch, &enc, &noise, KlMode::Analytic)?;
    let signal: Vec<f64> = pass.rows.kl_s.iter().map(|k| -k).collect();
    let score = bernoulli_score(pass.z.as_ref().expect("z"), pass.z_logits.as_ref().expect("logits"))?;
    let out = nvil_score_grad(state, &model.store, grads, &signal, &score, &batch.input)?;
    backward(model, &batch, &enc, &pass, Some(&out.logit_grad), grads)?;
    Ok(pass.estimate())
}

/// NVIL for the single-layer sigmoid belief network: the learning signal is
/// `ln p(x, z) − ln q(z|x)`.
pub fn nvil_step(
    model: &Model,
    state: &mut NvilState,
    x_full: &Tensor,
    rng: &mut RngStream,
    grads: &mut GradBuffer,
) -> Result<BoundEstimate, EstimatorError> {
    if model.variant() != Variant::Nvil {
        return Err(ModelError::WrongVariant {
            op: "nvil_step",
            variant: model.variant(),
        }
        .into());
    }
    let batch = task_adapt(model.spec().task, x_full);
    let enc = encode(model, &batch.input)?;
    let noise = model.draw_noise(batch.input.rows(), rng);
    let pass = forward(model, &batch, &enc, &noise, KlMode::Sampled)?;
    let signal = pass.rows.bound();
    let score = bernoulli_score(pass.z.as_ref().expect("z"), pass.z_logits.as_ref().expect("logits"))?;
    let out = nvil_score_grad(state, &model.store, grads, &signal, &score, &batch.input)?;
    backward(model, &batch, &enc, &pass, Some(&out.logit_grad), grads)?;
    Ok(pass.estimate())
}

/// The training gradient estimator appropriate to the model's variant.
pub fn gradient_step(
    model: &Model,
    state: Option<&mut NvilState>,
    x_full: &Tensor,
    rng: &mut RngStream,
    grads: &mut GradBuffer,
) -> Result<BoundEstimate, EstimatorError> {
    match (model.variant(), state) {
        (v, _) if v.is_pathwise() => pathwise_step(model, x_full, rng, grads),
        (Variant::VcaeDiscrete, Some(s)) => hybrid_vcae_step(model, s, x_full, rng, grads),
        (Variant::Nvil, Some(s)) => nvil_step(model, s, x_full, rng, grads),
        (v, None) => Err(EstimatorError::MissingNvilState(v)),
        (v, Some(_)) => Err(EstimatorError::NonReparameterized(v)),
    }
}

/// Mean per-parameter gradient variance within each group.
#[derive(Debug, Clone, PartialEq)]
pub struct VarianceReport {
    pub step: u64,
    pub replicas: usize,
    pub theta1: Option<f64>,
    pub theta2: Option<f64>,
    pub psi: Option<f64>,
    pub phi: Option<f64>,
    /// Pooled over every encoder parameter (both `q` groups).
    pub inference: Option<f64>,
}

/// Per-element running mean and sum of squared deviations.
struct Welford {
    n: f64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Welford {
    fn new(len: usize) -> Self {
        Welford {
            n: 0.0,
            mean: vec![0.0; len],
            m2: vec![0.0; len],
        }
    }

    fn push(&mut self, xs: &[f64]) {
        self.n += 1.0;
        for ((m, s), &x) in self.mean.iter_mut().zip(&mut self.m2).zip(xs) {
            let d = x - *m;
            *m += d / self.n;
            *s += d * (x - *m);
        }
    }

    fn variance(&self) -> Vec<f64> {
        self.m2.iter().map(|s| s / (self.n - 1.0)).collect()
    }
}

/// Per-coordinate sample variance of `replicas` draws of `estimate`, where
/// draw `r` receives the stream `rng.split(r)`.
pub fn replica_variance<F>(replicas: usize, rng: &RngStream, mut estimate: F) -> Result<Vec<f64>, EstimatorError>
where
    F: FnMut(&mut RngStream) -> Result<Vec<f64>, EstimatorError>,
{
    if replicas < 2 {
        return Err(EstimatorError::TooFewReplicas(replicas));
    }
    let mut acc: Option<Welford> = None;
    for r in 0..replicas {
        let g = estimate(&mut rng.split(r as u64))?;
        acc.get_or_insert_with(|| Welford::new(g.len())).push(&g);
    }
    Ok(acc.expect("at least two replicas").variance())
}

/// Draws `replicas` independent gradient estimates at the current
/// parameters on a fixed batch and summarizes their variance by group.
///
/// Replica `r` uses the stream `rng.split(r)` and its own copy of the NVIL
/// state, so the report does not depend on evaluation order and the model is
/// left untouched.
pub fn variance_probe(
    model: &Model,
    state: Option<&NvilState>,
    x_full: &Tensor,
    replicas: usize,
    step: u64,
    rng: &RngStream,
) -> Result<VarianceReport, EstimatorError> {
    let store = &model.store;
    let var = replica_variance(replicas, rng, |stream| {
        let mut local = state.cloned();
        let mut grads = store.grad_buffer();
        gradient_step(model, local.as_mut(), x_full, stream, &mut grads)?;
        Ok(grads.flatten())
    })?;

    let mut sums = [0.0f64; 5];
    let mut counts = [0usize; 5];
    let mut offset = 0;
    for (name, e) in store.entries() {
        let n = e.value.len();
        let slot = match ParamGroup::of(name) {
            ParamGroup::Theta1 => 0,
            ParamGroup::Theta2 => 1,
            ParamGroup::Psi => 2,
            ParamGroup::Phi => 3,
            ParamGroup::Baseline => 4,
        };
        sums[slot] += var[offset..offset + n].iter().sum::<f64>();
        counts[slot] += n;
        offset += n;
    }
    let mean = |s: f64, n: usize| (n > 0).then(|| s / n as f64);
    Ok(VarianceReport {
        step,
        replicas,
        theta1: mean(sums[0], counts[0]),
        theta2: mean(sums[1], counts[1]),
        psi: mean(sums[2], counts[2]),
        phi: mean(sums[3], counts[3]),
        inference: mean(sums[0] + sums[1], counts[0] + counts[1]),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{ModelSpec, Task};
    use crate::nets::{build_channel, ChannelSpec, Head, Hidden};
    use crate::numerics::NoiseKind;

    fn tiny(variant: Variant) -> Model {
        let spec = ModelSpec {
            x_dim: 6,
            s_dim: 3,
            z_dim: 2,
            baseline_width: 4,
            ..ModelSpec::new(variant, Hidden::Linear, Task::GenerativeModeling)
        };
        Model::new(spec, 2).unwrap()
    }

    fn data(rows: usize) -> Tensor {
        RngStream::new(1)
            .sample(NoiseKind::Uniform01, &[rows, 6])
            .map(|u| if u < 0.5 { 1.0 } else { 0.0 })
    }

    #[test]
    fn explained_signal_gives_zero_gradient() {
        let mut store = ParamStore::new();
        let ch = build_channel(
            &ChannelSpec::new(3, 1, Hidden::Nonlinear { widths: vec![4] }, Head::Identity),
            &mut store,
            "nvil",
            &mut RngStream::new(0),
        )
        .unwrap();
        let (w, b) = ch.head_ids(0);
        store.get_mut(w).fill(0.0);
        store.get_mut(b).fill(2.5);
        let mut state = NvilState::new(ch);
        let mut grads = store.grad_buffer();
        let score = Tensor::full(&[4, 2], 0.3);
        let out = nvil_score_grad(&mut state, &store, &mut grads, &[2.5; 4], &score, &Tensor::zeros(&[4, 3])).unwrap();
        assert_eq!(out.logit_grad.max_abs(), 0.0);
        assert!(grads.flatten().iter().all(|g| *g == 0.0));
    }

    #[test]
    fn non_finite_signal_aborts() {
        let m = tiny(Variant::Nvil);
        let mut state = m.nvil.clone().unwrap();
        let mut grads = m.store.grad_buffer();
        let err = nvil_score_grad(
            &mut state,
            &m.store,
            &mut grads,
            &[0.0, f64::NAN],
            &Tensor::zeros(&[2, 2]),
            &Tensor::zeros(&[2, 6]),
        )
        .unwrap_err();
        assert!(matches!(err, EstimatorError::NonFiniteSignal { index: 1, .. }));
    }

    #[test]
    fn pathwise_refuses_bernoulli() {
        let m = tiny(Variant::VcaeDiscrete);
        let mut g = m.store.grad_buffer();
        assert!(matches!(
            pathwise_step(&m, &data(2), &mut RngStream::new(0), &mut g),
            Err(EstimatorError::NonReparameterized(Variant::VcaeDiscrete))
        ));
    }

    #[test]
    fn nvil_state_does_not_change_bound() {
        let m = tiny(Variant::VcaeDiscrete);
        let x = data(3);
        let mut a = m.nvil.clone().unwrap();
        let mut b = m.nvil.clone().unwrap();
        b.mean = 40.0;
        b.var = 9.0;
        let e1 = hybrid_vcae_step(&m, &mut a, &x, &mut RngStream::new(3), &mut m.store.grad_buffer()).unwrap();
        let e2 = hybrid_vcae_step(&m, &mut b, &x, &mut RngStream::new(3), &mut m.store.grad_buffer()).unwrap();
        assert_eq!(e1, e2);
    }

    #[test]
    fn probe_leaves_model_untouched_and_is_order_free() {
        let m = tiny(Variant::VcaeDiscrete);
        let before = m.store.clone();
        let x = data(4);
        let rng = RngStream::new(8);
        let r1 = variance_probe(&m, m.nvil.as_ref(), &x, 6, 0, &rng).unwrap();
        let r2 = variance_probe(&m, m.nvil.as_ref(), &x, 6, 0, &rng).unwrap();
        assert_eq!(r1, r2);
        assert_eq!(m.store, before);
        assert!(r1.theta1.unwrap() >= 0.0 && r1.psi.unwrap() >= 0.0);
        assert!(matches!(
            variance_probe(&m, None, &x, 1, 0, &rng),
            Err(EstimatorError::TooFewReplicas(1))
        ));
    }

    #[test]
    fn gradient_step_dispatch() {
        for v in Variant::ALL {
            let m = tiny(v);
            let mut state = m.nvil.clone();
            let mut g = m.store.grad_buffer();
            let est = gradient_step(&m, state.as_mut(), &data(3), &mut RngStream::new(4), &mut g).unwrap();
            assert!(est.total.is_finite(), "{v}");
            assert!(g.all_finite());
        }
    }
}
