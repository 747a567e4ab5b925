//! Experiment configuration, the training loop, evaluation runs, variance
//! tracing, metrics files and SVG plots.

mod config;
mod metrics;
mod plot;
mod run;

use thiserror::Error;

use crate::data::DataError;
use crate::estimators::EstimatorError;
use crate::models::ModelError;
use crate::nets::{CheckpointError, StoreError};

pub use config::{load_config, BinarizationMode, DatasetKind, ExperimentConfig, HiddenKind};
pub use metrics::{read_metrics, MetricsFile, MetricsRecord, MetricsWriter, COLUMNS};
pub use plot::{emit_plot, render_svg, PlotSeries};
pub use run::{
    evaluate_split, inspect_data, load_data, run_eval, run_trace, run_training, DataSummary, EvalReport,
    ExperimentData, TrainSummary, CHECKPOINT_FILE, METRICS_FILE,
};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config {path}: {message}")]
    Config { path: String, message: String },
    #[error("i/o error on {path}: {message}")]
    Io { path: String, message: String },
    #[error("metrics file {path}: {message}")]
    Metrics { path: String, message: String },
    #[error("non-finite loss or gradient at step {step}; last good parameters saved to {checkpoint}")]
    NonFinite { step: u64, checkpoint: String },
    #[error("plot: {0}")]
    Plot(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Store(#[from] StoreError),
}
