use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::nets::Hidden;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Gaussian latent, single stochastic layer.
    Vae,
    /// Single Binary Concrete layer, continuous samples at test time.
    ConcreteS,
    /// Single Binary Concrete layer standing in for binary latents; hardened at test time.
    ConcreteZ,
    /// Markov chain x → s → z: `q(s|x) q(z|s)`, generative `p(z) p(s|z) p(x|s)`.
    VaeCon,
    /// Concrete surrogate `s` and Gaussian latent `z`, both encoded from `x`.
    VcaeGaussian,
    /// Concrete surrogate `s` and Bernoulli latent `z`, trained with the hybrid estimator.
    VcaeDiscrete,
    /// Sigmoid belief network with one Bernoulli layer, trained with NVIL.
    Nvil,
}

impl Variant {
    pub const ALL: [Variant; 7] = [
        Variant::Vae,
        Variant::ConcreteS,
        Variant::ConcreteZ,
        Variant::VaeCon,
        Variant::VcaeGaussian,
        Variant::VcaeDiscrete,
        Variant::Nvil,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Vae => "vae",
            Variant::ConcreteS => "concrete_s",
            Variant::ConcreteZ => "concrete_z",
            Variant::VaeCon => "vae_con",
            Variant::VcaeGaussian => "vcae_gaussian",
            Variant::VcaeDiscrete => "vcae_discrete",
            Variant::Nvil => "nvil",
        }
    }

    pub fn latent(self) -> LatentKind {
        match self {
            Variant::Vae | Variant::VaeCon | Variant::VcaeGaussian => LatentKind::Gaussian,
            Variant::VcaeDiscrete | Variant::Nvil => LatentKind::Bernoulli,
            Variant::ConcreteS | Variant::ConcreteZ => LatentKind::None,
        }
    }

    /// Whether the model has a relaxed (Binary Concrete) layer.
    pub fn has_relaxed(self) -> bool {
        !matches!(self, Variant::Vae | Variant::Nvil)
    }

    /// Whether the relaxed layer's prior is conditioned on `z` through `p_ψ(s|z)`.
    pub fn has_surrogate_prior(self) -> bool {
        matches!(self, Variant::VaeCon | Variant::VcaeGaussian | Variant::VcaeDiscrete)
    }

    /// Whether every stochastic node is reparameterizable.
    pub fn is_pathwise(self) -> bool {
        self.latent() != LatentKind::Bernoulli
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| format!("unknown variant `{s}`"))
    }
}

/// Kind of the `z` layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LatentKind {
    None,
    Gaussian,
    Bernoulli,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    GenerativeModeling,
    /// Encoders read the first half of each image, the likelihood scores the second half.
    StructuredPrediction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub variant: Variant,
    pub hidden: Hidden,
    pub task: Task,
    /// Length of a full image vector.
    pub x_dim: usize,
    pub s_dim: usize,
    pub z_dim: usize,
    pub temperature: f64,
    /// Temperature of the prior side of the relaxed layer; `None` shares `temperature`.
    pub prior_temperature: Option<f64>,
    /// Hidden width of the NVIL baseline network.
    pub baseline_width: usize,
}

impl ModelSpec {
    pub fn new(variant: Variant, hidden: Hidden, task: Task) -> Self {
        ModelSpec {
            variant,
            hidden,
            task,
            x_dim: 784,
            s_dim: 200,
            z_dim: 200,
            temperature: 0.5,
            prior_temperature: None,
            baseline_width: 100,
        }
    }

    /// Encoder input width and likelihood target width.
    pub fn io_dims(&self) -> (usize, usize) {
        match self.task {
            Task::GenerativeModeling => (self.x_dim, self.x_dim),
            Task::StructuredPrediction => (self.x_dim / 2, self.x_dim - self.x_dim / 2),
        }
    }

    /// Width of the relaxed layer (`z_dim` for Concrete-z, `s_dim` otherwise).
    pub fn relaxed_dim(&self) -> usize {
        if self.variant == Variant::ConcreteZ {
            self.z_dim
        } else {
            self.s_dim
        }
    }

    pub fn prior_temperature(&self) -> f64 {
        self.prior_temperature.unwrap_or(self.temperature)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |reason: String| Err(ModelError::InvalidSpec(reason));
        if self.x_dim == 0 || (self.task == Task::StructuredPrediction && self.x_dim < 2) {
            return bad(format!("x_dim {} too small for {:?}", self.x_dim, self.task));
        }
        if self.variant.has_relaxed() && self.relaxed_dim() == 0 {
            return bad("relaxed layer width must be positive".into());
        }
        if self.variant.latent() != LatentKind::None && self.z_dim == 0 {
            return bad("z_dim must be positive".into());
        }
        for t in [self.temperature, self.prior_temperature()] {
            if !(t > 0.0 && t.is_finite()) {
                return bad(format!("temperature must be positive, got {t}"));
            }
        }
        if let Hidden::Nonlinear { widths } = &self.hidden {
            if widths.is_empty() || widths.contains(&0) {
                return bad(format!("invalid hidden widths {widths:?}"));
            }
        }
        if matches!(self.variant, Variant::VcaeDiscrete | Variant::Nvil) && self.baseline_width == 0 {
            return bad("baseline_width must be positive".into());
        }
        Ok(())
    }
}
