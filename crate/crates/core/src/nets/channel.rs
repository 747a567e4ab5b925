use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::store::{GradBuffer, ParamId, ParamStore, StoreError};
use crate::numerics::{affine, affine_vjp, OpError, RngStream, Tensor};

/// Range the Gaussian `log_std` head is clamped to before use.
pub const LOG_STD_MIN: f64 = -6.0;
pub const LOG_STD_MAX: f64 = 2.0;

#[derive(Debug, Error)]
pub enum NetError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Op(#[from] OpError),
    #[error("name prefix `{0}` is already in use")]
    PrefixInUse(String),
    #[error("channel dimensions must be positive (input {input}, output {output})")]
    EmptyDims { input: usize, output: usize },
    #[error("channel expects {expected} upstream gradients, got {got}")]
    GradArity { expected: usize, got: usize },
}

/// Hidden structure between a channel's input and its distribution head.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Hidden {
    /// One affine map straight into the head.
    Linear,
    /// Stacked affine + tanh layers of the given widths, then the head.
    Nonlinear { widths: Vec<usize> },
}

impl Hidden {
    pub fn nonlinear() -> Self {
        Hidden::Nonlinear { widths: vec![200, 200] }
    }

    fn widths(&self) -> &[usize] {
        match self {
            Hidden::Linear => &[],
            Hidden::Nonlinear { widths } => widths,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Head {
    /// Bernoulli logits.
    Bernoulli,
    /// Mean and clamped log standard deviation.
    Gaussian,
    /// Binary Concrete location logits at a fixed temperature.
    Concrete { temperature: f64 },
    /// Raw affine output.
    Identity,
}

impl Head {
    fn outputs(self) -> &'static [&'static str] {
        match self {
            Head::Gaussian => &["mean", "log_std"],
            _ => &["out"],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelSpec {
    pub input_dim: usize,
    pub output_dim: usize,
    pub hidden: Hidden,
    pub head: Head,
}

impl ChannelSpec {
    pub fn new(input_dim: usize, output_dim: usize, hidden: Hidden, head: Head) -> Self {
        ChannelSpec {
            input_dim,
            output_dim,
            hidden,
            head,
        }
    }

    /// Closed-form number of scalar parameters.
    pub fn param_count(&self) -> usize {
        let mut fan_in = self.input_dim;
        let mut n = 0;
        for &w in self.hidden.widths() {
            n += fan_in * w + w;
            fan_in = w;
        }
        n + self.head.outputs().len() * (fan_in * self.output_dim + self.output_dim)
    }
}

#[derive(Debug, Clone, Copy)]
struct Dense {
    w: ParamId,
    b: ParamId,
}

/// An encoder or decoder network mapping an input batch to distribution parameters.
#[derive(Debug, Clone)]
pub struct Channel {
    spec: ChannelSpec,
    prefix: String,
    hidden: Vec<Dense>,
    heads: Vec<Dense>,
}

/// Saved activations of one forward pass, consumed by [`Channel::backward`].
#[derive(Debug, Clone)]
pub struct ChannelPass {
    /// Input followed by every post-tanh hidden activation.
    activations: Vec<Tensor>,
    raw_log_std: Option<Tensor>,
    pub outputs: Vec<Tensor>,
}

impl ChannelPass {
    pub fn output(&self) -> &Tensor {
        &self.outputs[0]
    }
}

/// Glorot-uniform bound `sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

fn glorot_tensor(fan_in: usize, fan_out: usize, rng: &mut RngStream) -> Tensor {
    let bound = glorot_bound(fan_in, fan_out);
    let u = rng.sample(crate::numerics::NoiseKind::Uniform01, &[fan_in, fan_out]);
    u.map(|v| (2.0 * v - 1.0) * bound)
}

/// Re-draws every weight matrix (2-D parameter) Glorot-uniform and zeroes
/// every vector parameter, in store order.
pub fn init_params(store: &mut ParamStore, rng: &mut RngStream) {
    for (_, e) in store.entries_mut() {
        e.value = if e.value.shape().len() == 2 {
            glorot_tensor(e.value.rows(), e.value.cols(), rng)
        } else {
            Tensor::zeros(e.value.shape())
        };
    }
}

/// Registers the parameters of a channel under `prefix/` and initializes them.
pub fn build_channel(
    spec: &ChannelSpec,
    store: &mut ParamStore,
    prefix: &str,
    rng: &mut RngStream,
) -> Result<Channel, NetError> {
    if spec.input_dim == 0 || spec.output_dim == 0 || spec.hidden.widths().contains(&0) {
        return Err(NetError::EmptyDims {
            input: spec.input_dim,
            output: spec.output_dim,
        });
    }
    if store.has_prefix(&format!("{prefix}/")) {
        return Err(NetError::PrefixInUse(prefix.to_owned()));
    }
    let mut dense = |name: String, fan_in: usize, fan_out: usize, rng: &mut RngStream| -> Result<Dense, NetError> {
        let w = store.register(&format!("{name}/w"), glorot_tensor(fan_in, fan_out, rng))?;
        let b = store.register(&format!("{name}/b"), Tensor::zeros(&[fan_out]))?;
        Ok(Dense { w, b })
    };
    let mut fan_in = spec.input_dim;
    let mut hidden = Vec::new();
    for (k, &width) in spec.hidden.widths().iter().enumerate() {
        hidden.push(dense(format!("{prefix}/h{k}"), fan_in, width, rng)?);
        fan_in = width;
    }
    let heads = spec
        .head
        .outputs()
        .iter()
        .map(|out| dense(format!("{prefix}/{out}"), fan_in, spec.output_dim, rng))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Channel {
        spec: spec.clone(),
        prefix: prefix.to_owned(),
        hidden,
        heads,
    })
}

impl Channel {
    pub fn spec(&self) -> &ChannelSpec {
        &self.spec
    }

    pub fn prefix(&self) -> &str {
        &self.prefix
    }

    /// Ids of the parameters owned by this channel.
    pub fn param_ids(&self) -> Vec<ParamId> {
        self.hidden.iter().chain(&self.heads).flat_map(|d| [d.w, d.b]).collect()
    }

    /// Weight and bias ids of head `k` (0 = mean/logits, 1 = log_std).
    pub fn head_ids(&self, k: usize) -> (ParamId, ParamId) {
        (self.heads[k].w, self.heads[k].b)
    }

    pub fn forward(&self, store: &ParamStore, input: &Tensor) -> Result<ChannelPass, NetError> {
        let mut activations = vec![input.clone()];
        for d in &self.hidden {
            let h = affine(store.get(d.w), store.get(d.b), activations.last().expect("non-empty"))?;
            activations.push(h.map(f64::tanh));
        }
        let last = activations.last().expect("non-empty");
        let mut outputs = self
            .heads
            .iter()
            .map(|d| affine(store.get(d.w), store.get(d.b), last))
            .collect::<Result<Vec<_>, _>>()?;
        let mut raw_log_std = None;
        if self.spec.head == Head::Gaussian {
            let raw = outputs.pop().expect("two heads");
            outputs.push(raw.map(|v| v.clamp(LOG_STD_MIN, LOG_STD_MAX)));
            raw_log_std = Some(raw);
        }
        Ok(ChannelPass {
            activations,
            raw_log_std,
            outputs,
        })
    }

    /// Accumulates parameter gradients for the upstream gradients of each
    /// head output; returns the input gradient when `want_input` is set.
    pub fn backward(
        &self,
        store: &ParamStore,
        pass: &ChannelPass,
        grad_outputs: &[&Tensor],
        grads: &mut GradBuffer,
        want_input: bool,
    ) -> Result<Option<Tensor>, NetError> {
        if grad_outputs.len() != self.heads.len() {
            return Err(NetError::GradArity {
                expected: self.heads.len(),
                got: grad_outputs.len(),
            });
        }
        let last = pass.activations.last().expect("non-empty");
        let need_last = want_input || !self.hidden.is_empty();
        let mut grad_last: Option<Tensor> = None;
        for (k, (d, &g)) in self.heads.iter().zip(grad_outputs).enumerate() {
            let masked;
            let g = match (&pass.raw_log_std, k) {
                (Some(raw), 1) => {
                    masked = g.zip_map(raw, |g, r| if (LOG_STD_MIN..=LOG_STD_MAX).contains(&r) { g } else { 0.0 })
                        .map_err(OpError::from)?;
                    &masked
                }
                _ => g,
            };
            let ag = affine_vjp(store.get(d.w), last, g)?;
            grads.add(d.w, &ag.w);
            grads.add(d.b, &ag.b);
            if need_last {
                match grad_last.as_mut() {
                    Some(acc) => acc.add_assign(&ag.x).map_err(OpError::from)?,
                    None => grad_last = Some(ag.x),
                }
            }
        }
        let mut upstream = grad_last;
        for (k, d) in self.hidden.iter().enumerate().rev() {
            let out = &pass.activations[k + 1];
            let g_pre = upstream
                .take()
                .expect("gradient present")
                .zip_map(out, |g, h| g * (1.0 - h * h))
                .map_err(OpError::from)?;
            let ag = affine_vjp(store.get(d.w), &pass.activations[k], &g_pre)?;
            grads.add(d.w, &ag.w);
            grads.add(d.b, &ag.b);
            if k > 0 || want_input {
                upstream = Some(ag.x);
            }
        }
        Ok(if want_input { upstream } else { None })
    }
}
