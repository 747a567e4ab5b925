//! Model variants, their single-sample training bounds with hand-derived
//! reverse passes, and importance-weighted evaluation.
//!
//! Every variant is assembled from the same parts: an optional relaxed
//! (Binary Concrete) layer `s` with encoder `q(s|x)`, an optional latent `z`
//! (Gaussian or Bernoulli) with encoder `q(z|x)` (or `q(z|s)` for VAE-Con),
//! the prior over `s` (a learned constant, or `p_ψ(s|z)`), and the Bernoulli
//! likelihood `p(x|s)` (or `p(x|z)` when there is no relaxed layer).

mod bounds;
mod forward;
mod spec;
mod task;

use thiserror::Error;

use crate::distributions::DistError;
use crate::estimators::NvilState;
use crate::nets::{build_channel, Channel, ChannelSpec, Head, Hidden, NetError, ParamId, ParamStore, StoreError};
use crate::numerics::{AdamConfig, OpError, RngStream, ShapeError, Tensor};

pub use bounds::{
    concrete_training_bound, concrete_z_test_eval, evaluate_bound, iwae_estimate, test_estimate, vae_bound,
    vae_con_bound, vcae_bound,
};
pub use forward::{backward, encode, forward, BoundEstimate, Encoded, KlMode, Noise, Pass, RowTerms, ZNoise};
pub use spec::{LatentKind, ModelSpec, Task, Variant};
pub use task::{task_adapt, Batch};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),
    #[error("operation `{op}` does not apply to variant {variant}")]
    WrongVariant { op: &'static str, variant: Variant },
    #[error("importance sample count must be at least 1")]
    ZeroSamples,
    #[error("input has {got} columns, expected {expected}")]
    InputWidth { expected: usize, got: usize },
    #[error("noise does not match the model's stochastic layers: {0}")]
    Noise(&'static str),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Dist(#[from] DistError),
    #[error(transparent)]
    Store(#[from] StoreError),
}

impl From<OpError> for ModelError {
    fn from(e: OpError) -> Self {
        ModelError::Net(NetError::Op(e))
    }
}

impl From<ShapeError> for ModelError {
    fn from(e: ShapeError) -> Self {
        ModelError::Net(NetError::Op(OpError::Shape(e)))
    }
}

/// Parameter groups used for gradient-variance reporting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamGroup {
    /// `q(s|x)`
    Theta1,
    /// `q(z|x)` (or `q(z|s)`)
    Theta2,
    /// `p_ψ(s|z)` and learned priors
    Psi,
    /// `p_φ(x|·)`
    Phi,
    /// NVIL baseline network
    Baseline,
}

impl ParamGroup {
    pub fn of(name: &str) -> ParamGroup {
        match name.split('/').next().unwrap_or("") {
            "q_s" => ParamGroup::Theta1,
            "q_z" => ParamGroup::Theta2,
            "p_s" | "p_z" => ParamGroup::Psi,
            "p_x" => ParamGroup::Phi,
            _ => ParamGroup::Baseline,
        }
    }
}

/// A model variant together with its parameters.
#[derive(Debug, Clone)]
pub struct Model {
    spec: ModelSpec,
    pub store: ParamStore,
    pub(crate) q_s: Option<Channel>,
    pub(crate) q_z: Option<Channel>,
    pub(crate) p_s: Option<Channel>,
    pub(crate) p_x: Channel,
    pub(crate) prior: Option<ParamId>,
    pub nvil: Option<NvilState>,
}

impl Model {
    pub fn new(spec: ModelSpec, init_seed: u64) -> Result<Model, ModelError> {
        Self::with_adam(spec, init_seed, AdamConfig::default())
    }

    pub fn with_adam(spec: ModelSpec, init_seed: u64, adam: AdamConfig) -> Result<Model, ModelError> {
        spec.validate()?;
        let root = RngStream::new(init_seed);
        let mut store = ParamStore::with_adam(adam);
        let (in_dim, out_dim) = spec.io_dims();
        let v = spec.variant;
        let hidden = spec.hidden.clone();
        let relaxed_dim = spec.relaxed_dim();

        let q_s = if v.has_relaxed() {
            let prefix = if v == Variant::ConcreteZ { "q_z" } else { "q_s" };
            let head = Head::Concrete {
                temperature: spec.temperature,
            };
            let cs = ChannelSpec::new(in_dim, relaxed_dim, hidden.clone(), head);
            Some(build_channel(&cs, &mut store, prefix, &mut root.split(0))?)
        } else {
            None
        };
        let q_z = match v.latent() {
            LatentKind::None => None,
            kind => {
                let head = if kind == LatentKind::Gaussian {
                    Head::Gaussian
                } else {
                    Head::Bernoulli
                };
                let input = if v == Variant::VaeCon { spec.s_dim } else { in_dim };
                let cs = ChannelSpec::new(input, spec.z_dim, hidden.clone(), head);
                Some(build_channel(&cs, &mut store, "q_z", &mut root.split(1))?)
            }
        };
        let p_s = if v.has_surrogate_prior() {
            let head = Head::Concrete {
                temperature: spec.prior_temperature(),
            };
            let cs = ChannelSpec::new(spec.z_dim, spec.s_dim, Hidden::Linear, head);
            Some(build_channel(&cs, &mut store, "p_s", &mut root.split(2))?)
        } else {
            None
        };
        let prior = match v {
            Variant::ConcreteS => Some(store.register("p_s/prior", Tensor::zeros(&[relaxed_dim]))?),
            Variant::ConcreteZ => Some(store.register("p_z/prior", Tensor::zeros(&[relaxed_dim]))?),
            Variant::VcaeDiscrete | Variant::Nvil => Some(store.register("p_z/prior", Tensor::zeros(&[spec.z_dim]))?),
            _ => None,
        };
        let dec_in = if v.has_relaxed() { relaxed_dim } else { spec.z_dim };
        let p_x = build_channel(
            &ChannelSpec::new(dec_in, out_dim, hidden, Head::Bernoulli),
            &mut store,
            "p_x",
            &mut root.split(3),
        )?;
        let nvil = if v.latent() == LatentKind::Bernoulli {
            let cs = ChannelSpec::new(
                in_dim,
                1,
                Hidden::Nonlinear {
                    widths: vec![spec.baseline_width],
                },
                Head::Identity,
            );
            let baseline = build_channel(&cs, &mut store, "nvil", &mut root.split(4))?;
            Some(NvilState::new(baseline))
        } else {
            None
        };
        Ok(Model {
            spec,
            store,
            q_s,
            q_z,
            p_s,
            p_x,
            prior,
            nvil,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn variant(&self) -> Variant {
        self.spec.variant
    }

    pub fn relaxed_encoder(&self) -> Option<&Channel> {
        self.q_s.as_ref()
    }

    pub fn latent_encoder(&self) -> Option<&Channel> {
        self.q_z.as_ref()
    }

    pub fn surrogate_prior(&self) -> Option<&Channel> {
        self.p_s.as_ref()
    }

    pub fn decoder(&self) -> &Channel {
        &self.p_x
    }

    pub fn prior_param(&self) -> Option<ParamId> {
        self.prior
    }

    /// Draws the noise for one single-sample pass over `rows` data points.
    pub fn draw_noise(&self, rows: usize, rng: &mut RngStream) -> Noise {
        use crate::numerics::NoiseKind;
        let z = match self.spec.variant.latent() {
            LatentKind::None => None,
            LatentKind::Gaussian => Some(ZNoise::Normal(rng.sample(NoiseKind::StdNormal, &[rows, self.spec.z_dim]))),
            LatentKind::Bernoulli => {
                Some(ZNoise::Uniform(rng.sample(NoiseKind::Uniform01, &[rows, self.spec.z_dim])))
            }
        };
        let s = self
            .spec
            .variant
            .has_relaxed()
            .then(|| rng.sample(NoiseKind::StdLogistic, &[rows, self.spec.relaxed_dim()]));
        Noise { s, z }
    }

    /// Copies parameter values (and ADAM state and buffers) from a loaded
    /// checkpoint after checking the parameter sets agree.
    pub fn load_store(&mut self, loaded: ParamStore) -> Result<(), crate::nets::CheckpointError> {
        crate::nets::check_compatible(&self.store, &loaded)?;
        if let Some(state) = self.nvil.as_mut() {
            state.read_buffers(&loaded);
        }
        self.store = loaded;
        Ok(())
    }

    /// The store with NVIL running statistics written into its buffers.
    pub fn store_for_checkpoint(&self) -> ParamStore {
        let mut store = self.store.clone();
        if let Some(state) = &self.nvil {
            state.write_buffers(&mut store);
        }
        store
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(variant: Variant) -> ModelSpec {
        ModelSpec {
            x_dim: 8,
            s_dim: 3,
            z_dim: 2,
            ..ModelSpec::new(variant, Hidden::Linear, Task::GenerativeModeling)
        }
    }

    #[test]
    fn every_variant_builds() {
        for v in Variant::ALL {
            let m = Model::new(tiny(v), 1).unwrap();
            assert!(m.store.param_count() > 0, "{v}");
            assert_eq!(m.nvil.is_some(), v.latent() == LatentKind::Bernoulli);
        }
    }

    #[test]
    fn paper_scale_vcae_parameter_count() {
        let spec = ModelSpec::new(Variant::VcaeGaussian, Hidden::Linear, Task::GenerativeModeling);
        let m = Model::new(spec, 0).unwrap();
        let expected = (784 * 200 + 200) + 2 * (784 * 200 + 200) + (200 * 200 + 200) + (200 * 784 + 784);
        assert_eq!(m.store.param_count(), expected);
    }

    #[test]
    fn groups_by_prefix() {
        assert_eq!(ParamGroup::of("q_s/out/w"), ParamGroup::Theta1);
        assert_eq!(ParamGroup::of("q_z/mean/b"), ParamGroup::Theta2);
        assert_eq!(ParamGroup::of("p_z/prior"), ParamGroup::Psi);
        assert_eq!(ParamGroup::of("p_x/h0/w"), ParamGroup::Phi);
        assert_eq!(ParamGroup::of("nvil/out/w"), ParamGroup::Baseline);
    }

    #[test]
    fn invalid_specs_rejected() {
        let mut s = tiny(Variant::Vae);
        s.temperature = 0.0;
        assert!(matches!(Model::new(s, 0), Err(ModelError::InvalidSpec(_))));
        let mut s = tiny(Variant::VcaeDiscrete);
        s.z_dim = 0;
        assert!(Model::new(s, 0).is_err());
    }

    #[test]
    fn same_seed_same_parameters() {
        let a = Model::new(tiny(Variant::VaeCon), 5).unwrap();
        let b = Model::new(tiny(Variant::VaeCon), 5).unwrap();
        let c = Model::new(tiny(Variant::VaeCon), 6).unwrap();
        assert_eq!(a.store, b.store);
        assert_ne!(a.store, c.store);
    }

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
        }
    }
}
