use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::data::Binarization;
use crate::estimators::DEFAULT_REPLICAS;
use crate::models::{ModelSpec, Task, Variant};
use crate::nets::Hidden;
use crate::numerics::{AdamConfig, DEFAULT_LEARNING_RATE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HiddenKind {
    Linear,
    Nonlinear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BinarizationMode {
    Threshold,
    SampleOnce,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    Mnist,
    /// Prototype patterns with bit flips; no files needed.
    Synthetic,
}

fn d_x_dim() -> usize {
    784
}
fn d_width() -> usize {
    200
}
fn d_widths() -> Vec<usize> {
    vec![200, 200]
}
fn d_temperature() -> f64 {
    0.5
}
fn d_baseline_width() -> usize {
    100
}
fn d_batch() -> usize {
    100
}
fn d_replicas() -> usize {
    DEFAULT_REPLICAS
}
fn d_k() -> usize {
    100
}
fn d_lr() -> f64 {
    DEFAULT_LEARNING_RATE
}
fn d_synthetic_count() -> usize {
    1000
}
fn d_synthetic_prototypes() -> usize {
    4
}
fn d_synthetic_flip() -> f64 {
    0.05
}
fn d_true() -> bool {
    true
}

/// One experiment, read from a flat JSON object. Every default is
/// materialized on load and echoed into the metrics header.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub variant: Variant,
    #[serde(default = "HiddenKind::default_linear")]
    pub hidden: HiddenKind,
    #[serde(default = "d_widths")]
    pub hidden_widths: Vec<usize>,
    #[serde(default = "Task::default_generative")]
    pub task: Task,
    #[serde(default = "d_x_dim")]
    pub x_dim: usize,
    #[serde(default = "d_width")]
    pub s_dim: usize,
    #[serde(default = "d_width")]
    pub z_dim: usize,
    #[serde(default = "d_temperature")]
    pub temperature: f64,
    #[serde(default)]
    pub prior_temperature: Option<f64>,
    #[serde(default = "d_baseline_width")]
    pub baseline_width: usize,

    #[serde(default = "d_batch")]
    pub batch_size: usize,
    pub max_steps: u64,
    /// Validation bound every this many steps; 0 disables.
    #[serde(default)]
    pub eval_every: u64,
    /// Validation images used for periodic evaluation; 0 means all.
    #[serde(default)]
    pub eval_subset: usize,
    /// Gradient-variance trace every this many steps; 0 disables.
    #[serde(default)]
    pub variance_trace_every: u64,
    #[serde(default = "d_replicas")]
    pub variance_replicas: usize,
    /// Periodic checkpoint every this many steps; 0 keeps only the final one.
    #[serde(default)]
    pub checkpoint_every: u64,
    #[serde(default = "d_lr")]
    pub learning_rate: f64,

    pub seed_init: u64,
    pub seed_data: u64,
    pub seed_noise: u64,

    #[serde(default = "d_k")]
    pub iwae_k: usize,
    /// Images of the evaluated split used by `eval`; 0 means all.
    #[serde(default)]
    pub test_subset: usize,

    #[serde(default = "DatasetKind::default_mnist")]
    pub dataset: DatasetKind,
    /// Directory with the IDX files; defaults to `$MNIST_DIR` or `data/mnist`.
    #[serde(default)]
    pub mnist_dir: Option<PathBuf>,
    /// Training images used (first N of the training split); 0 means all.
    #[serde(default)]
    pub train_subset: usize,
    #[serde(default = "d_true")]
    pub data_cache: bool,
    #[serde(default = "BinarizationMode::default_threshold")]
    pub binarization: BinarizationMode,
    #[serde(default)]
    pub binarization_seed: u64,
    #[serde(default = "d_synthetic_count")]
    pub synthetic_count: usize,
    #[serde(default = "d_synthetic_prototypes")]
    pub synthetic_prototypes: usize,
    #[serde(default = "d_synthetic_flip")]
    pub synthetic_flip: f64,

    pub output_dir: PathBuf,
    /// Record wall-clock milliseconds in metrics (makes files run-dependent).
    #[serde(default)]
    pub log_wall_time: bool,
}

impl HiddenKind {
    fn default_linear() -> Self {
        HiddenKind::Linear
    }
}

impl Task {
    fn default_generative() -> Self {
        Task::GenerativeModeling
    }
}

impl DatasetKind {
    fn default_mnist() -> Self {
        DatasetKind::Mnist
    }
}

impl BinarizationMode {
    fn default_threshold() -> Self {
        BinarizationMode::Threshold
    }
}

impl ExperimentConfig {
    pub fn model_spec(&self) -> ModelSpec {
        ModelSpec {
            variant: self.variant,
            hidden: match self.hidden {
                HiddenKind::Linear => Hidden::Linear,
                HiddenKind::Nonlinear => Hidden::Nonlinear {
                    widths: self.hidden_widths.clone(),
                },
            },
            task: self.task,
            x_dim: self.x_dim,
            s_dim: self.s_dim,
            z_dim: self.z_dim,
            temperature: self.temperature,
            prior_temperature: self.prior_temperature,
            baseline_width: self.baseline_width,
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            ..AdamConfig::default()
        }
    }

    pub fn binarization(&self) -> Binarization {
        match self.binarization {
            BinarizationMode::Threshold => Binarization::Threshold,
            BinarizationMode::SampleOnce => Binarization::SampleOnce {
                seed: self.binarization_seed,
            },
        }
    }

    pub fn mnist_dir(&self) -> PathBuf {
        self.mnist_dir.clone().unwrap_or_else(crate::data::default_mnist_dir)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |key: &str, message: &str| {
            Err(HarnessError::Config {
                path: String::new(),
                message: format!("`{key}`: {message}"),
            })
        };
        if self.batch_size == 0 {
            return bad("batch_size", "must be positive");
        }
        if self.iwae_k == 0 {
            return bad("iwae_k", "must be positive");
        }
        if self.variance_trace_every > 0 && self.variance_replicas < 2 {
            return bad("variance_replicas", "must be at least 2 when tracing");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate", "must be positive");
        }
        if self.dataset == DatasetKind::Mnist && self.x_dim != crate::data::IMAGE_DIM {
            return bad("x_dim", "must be 784 for MNIST");
        }
        if !(0.0..=1.0).contains(&self.synthetic_flip) {
            return bad("synthetic_flip", "must be a probability");
        }
        self.model_spec().validate().map_err(|e| HarnessError::Config {
            path: String::new(),
            message: e.to_string(),
        })
    }

    /// Parses a JSON object, naming the offending key on failure.
    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let message = if path == "." {
                e.inner().to_string()
            } else {
                format!("at `{path}`: {}", e.inner())
            };
            HarnessError::Config {
                path: String::new(),
                message,
            }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig, HarnessError> {
    let text = fs::read_to_string(path).map_err(|e| HarnessError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    ExperimentConfig::from_json(&text).map_err(|e| match e {
        HarnessError::Config { message, .. } => HarnessError::Config {
            path: path.display().to_string(),
            message,
        },
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{"variant": "vcae_gaussian", "max_steps": 10, "seed_init": 1,
        "seed_data": 2, "seed_noise": 3, "output_dir": "runs/x"}"#;

    #[test]
    fn defaults_filled() {
        let c = ExperimentConfig::from_json(MINIMAL).unwrap();
        assert_eq!(c.temperature, 0.5);
        assert_eq!(c.iwae_k, 100);
        assert_eq!(c.batch_size, 100);
        assert_eq!(c.learning_rate, 3e-4);
        assert_eq!(c.binarization, BinarizationMode::Threshold);
        assert_eq!(c.model_spec().hidden, Hidden::Linear);
    }

    #[test]
    fn misspelled_key_named() {
        let text = MINIMAL.replace("\"max_steps\"", "\"max_step\"");
        let err = ExperimentConfig::from_json(&text).unwrap_err().to_string();
        assert!(err.contains("max_step"), "{err}");
        let text = MINIMAL.replace("\"max_steps\": 10", "\"max_steps\": \"ten\"");
        let err = ExperimentConfig::from_json(&text).unwrap_err().to_string();
        assert!(err.contains("max_steps"), "{err}");
        let err = ExperimentConfig::from_json(r#"{"variant": "vae"}"#).unwrap_err().to_string();
        assert!(err.contains("max_steps"), "{err}");
    }

    #[test]
    fn echo_round_trip() {
        let c = ExperimentConfig::from_json(MINIMAL).unwrap();
        assert_eq!(ExperimentConfig::from_json(&c.to_json()).unwrap(), c);
    }

    #[test]
    fn invalid_values_rejected() {
        let text = MINIMAL.replace("\"max_steps\": 10", "\"max_steps\": 10, \"batch_size\": 0");
        assert!(ExperimentConfig::from_json(&text).unwrap_err().to_string().contains("batch_size"));
    }
}
