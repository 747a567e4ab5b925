use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use super::{DatasetKind, ExperimentConfig, HarnessError, MetricsRecord, MetricsWriter};
use crate::data::{load_mnist, minibatches, synthetic, Binarization, Split};
use crate::estimators::{gradient_step, variance_probe, EstimatorError, VarianceReport};
use crate::models::{evaluate_bound, test_estimate, BoundEstimate, Model};
use crate::nets::{checkpoint_load, checkpoint_save};
use crate::numerics::{RngStream, Tensor};

pub const METRICS_FILE: &str = "metrics.csv";
pub const CHECKPOINT_FILE: &str = "model.ckpt";

// Independent substreams of the noise seed.
const TRAIN_STREAM: u64 = 0;
const TRACE_STREAM: u64 = 1;
const VALID_STREAM: u64 = 2;
const EVAL_STREAM: u64 = 3;

/// Binary image rows of each split, as used by one experiment.
#[derive(Debug, Clone)]
pub struct ExperimentData {
    pub train: Tensor,
    pub valid: Tensor,
    pub test: Tensor,
    pub binarization: Binarization,
}

impl ExperimentData {
    pub fn split(&self, split: Split) -> &Tensor {
        match split {
            Split::Train => &self.train,
            Split::Valid => &self.valid,
            Split::Test => &self.test,
        }
    }
}

fn head(t: &Tensor, n: usize) -> Tensor {
    if n == 0 || n >= t.rows() {
        t.clone()
    } else {
        t.select_rows(&(0..n).collect::<Vec<_>>())
    }
}

pub fn load_data(cfg: &ExperimentConfig) -> Result<ExperimentData, HarnessError> {
    let (train, valid, test) = match cfg.dataset {
        DatasetKind::Mnist => {
            let m = load_mnist(&cfg.mnist_dir(), cfg.binarization(), cfg.data_cache)?;
            (m.train.images, m.valid.images, m.test.images)
        }
        DatasetKind::Synthetic => {
            let n = cfg.synthetic_count;
            let held = (n / 5).max(1);
            let all = synthetic(n + 2 * held, cfg.x_dim, cfg.synthetic_prototypes, cfg.synthetic_flip, cfg.seed_data);
            let rows = |a: usize, b: usize| all.select_rows(&(a..b).collect::<Vec<_>>());
            (rows(0, n), rows(n, n + held), rows(n + held, n + 2 * held))
        }
    };
    Ok(ExperimentData {
        train: head(&train, cfg.train_subset),
        valid,
        test,
        binarization: cfg.binarization(),
    })
}

/// Row-weighted mean single-sample training bound over `images`.
pub fn evaluate_split(
    model: &Model,
    images: &Tensor,
    batch_size: usize,
    rng: &RngStream,
) -> Result<BoundEstimate, HarnessError> {
    let (mut r, mut s, mut z) = (0.0, 0.0, 0.0);
    let n = images.rows();
    for (i, start) in (0..n).step_by(batch_size).enumerate() {
        let idx: Vec<usize> = (start..(start + batch_size).min(n)).collect();
        let est = evaluate_bound(model, &images.select_rows(&idx), &mut rng.split(i as u64))?;
        let w = idx.len() as f64;
        r += w * est.term_recon;
        s += w * est.term_kl_s;
        z += w * est.term_kl_z;
    }
    let n = n.max(1) as f64;
    Ok(BoundEstimate::from_terms(r / n, s / n, z / n))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub steps: u64,
    pub checkpoint: PathBuf,
    pub metrics: PathBuf,
    /// Mean training bound over the steps since the last log point.
    pub last_train_bound: Option<f64>,
}

fn save(model: &Model, path: &Path) -> Result<(), HarnessError> {
    checkpoint_save(&model.store_for_checkpoint(), path)?;
    Ok(())
}

#[derive(Default)]
struct Running {
    recon: f64,
    kl_s: f64,
    kl_z: f64,
    n: f64,
}

impl Running {
    fn push(&mut self, e: &BoundEstimate) {
        self.recon += e.term_recon;
        self.kl_s += e.term_kl_s;
        self.kl_z += e.term_kl_z;
        self.n += 1.0;
    }

    fn take(&mut self) -> Option<BoundEstimate> {
        let out = (self.n > 0.0).then(|| BoundEstimate::from_terms(self.recon / self.n, self.kl_s / self.n, self.kl_z / self.n));
        *self = Running::default();
        out
    }
}

/// Trains the configured model, writing `metrics.csv` and `model.ckpt`
/// under the output directory.
pub fn run_training(cfg: &ExperimentConfig) -> Result<TrainSummary, HarnessError> {
    cfg.validate()?;
    let out = &cfg.output_dir;
    fs::create_dir_all(out).map_err(|e| HarnessError::Io {
        path: out.display().to_string(),
        message: e.to_string(),
    })?;
    let data = load_data(cfg)?;
    let mut model = Model::with_adam(cfg.model_spec(), cfg.seed_init, cfg.adam())?;
    let metrics_path = out.join(METRICS_FILE);
    let ckpt_path = out.join(CHECKPOINT_FILE);
    let mut writer = MetricsWriter::create(&metrics_path, &cfg.to_json())?;

    let noise = RngStream::new(cfg.seed_noise);
    let train_noise = noise.split(TRAIN_STREAM);
    let trace_noise = noise.split(TRACE_STREAM);
    let valid_noise = noise.split(VALID_STREAM);
    let data_rng = RngStream::new(cfg.seed_data);
    let n = data.train.rows();
    let probe_batch = head(&data.train, cfg.batch_size);
    let valid = head(&data.valid, cfg.eval_subset);
    let started = Instant::now();
    let wall = |rec: &mut MetricsRecord| {
        if cfg.log_wall_time {
            rec.wall_ms = Some(started.elapsed().as_millis() as u64);
        }
    };

    let mut epoch = 0u64;
    let mut batches = minibatches(n, cfg.batch_size, data_rng.split(epoch).next_u64())?;
    let mut cursor = 0;
    let mut running = Running::default();
    let mut last_train_bound = None;
    for step in 1..=cfg.max_steps {
        if cursor == batches.len() {
            epoch += 1;
            batches = minibatches(n, cfg.batch_size, data_rng.split(epoch).next_u64())?;
            cursor = 0;
        }
        let x = data.train.select_rows(&batches[cursor]);
        cursor += 1;

        let mut grads = model.store.grad_buffer();
        let mut state = model.nvil.take();
        let result = gradient_step(&model, state.as_mut(), &x, &mut train_noise.split(step), &mut grads);
        let est = match result {
            Ok(est) if est.total.is_finite() && grads.all_finite() => Ok(est),
            Ok(_) | Err(EstimatorError::NonFiniteSignal { .. }) => Err(()),
            Err(e) => return Err(e.into()),
        };
        if est.is_err() {
            model.nvil = state;
            save(&model, &ckpt_path)?;
            log::error!("non-finite training step {step}");
            return Err(HarnessError::NonFinite {
                step,
                checkpoint: ckpt_path.display().to_string(),
            });
        }
        let est = est.expect("checked");
        model.store.zero_grads();
        model.store.accumulate(&grads)?;
        model.store.adam_step_all()?;
        model.nvil = state;
        running.push(&est);

        if cfg.variance_trace_every > 0 && step % cfg.variance_trace_every == 0 {
            let report = variance_probe(
                &model,
                model.nvil.as_ref(),
                &probe_batch,
                cfg.variance_replicas,
                step,
                &trace_noise.split(step),
            )?;
            let mut rec = MetricsRecord::variance(&report);
            wall(&mut rec);
            writer.write(&rec)?;
        }
        if cfg.eval_every > 0 && (step % cfg.eval_every == 0 || step == cfg.max_steps) {
            if let Some(train_est) = running.take() {
                last_train_bound = Some(train_est.total);
                let mut rec = MetricsRecord::bound(step, "train", &train_est);
                wall(&mut rec);
                writer.write(&rec)?;
            }
            let v = evaluate_split(&model, &valid, cfg.batch_size, &valid_noise.split(step))?;
            log::info!("step {step}: valid bound {:.3}", v.total);
            let mut rec = MetricsRecord::bound(step, "valid", &v);
            wall(&mut rec);
            writer.write(&rec)?;
        }
        if cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0 {
            save(&model, &ckpt_path)?;
        }
    }
    if last_train_bound.is_none() {
        last_train_bound = running.take().map(|e| e.total);
    }
    save(&model, &ckpt_path)?;
    Ok(TrainSummary {
        steps: cfg.max_steps,
        checkpoint: ckpt_path,
        metrics: metrics_path,
        last_train_bound,
    })
}

fn load_model(cfg: &ExperimentConfig, checkpoint: &Path) -> Result<(Model, u64), HarnessError> {
    let mut model = Model::with_adam(cfg.model_spec(), cfg.seed_init, cfg.adam())?;
    let store = checkpoint_load(checkpoint)?;
    model.load_store(store)?;
    let step = model.store.entries().map(|(_, e)| e.adam.t).max().unwrap_or(0);
    Ok((model, step))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub split: Split,
    pub k: usize,
    pub count: usize,
    pub step: u64,
    /// Mean per-datum log-likelihood estimate, nats.
    pub mean: f64,
    pub std_err: f64,
}

/// Test-time log-likelihood estimate over a split (hardened samples for
/// Concrete-z, importance weighting otherwise). The result is appended to
/// the run's metrics file.
pub fn run_eval(
    cfg: &ExperimentConfig,
    checkpoint: Option<&Path>,
    split: Split,
    k: usize,
) -> Result<EvalReport, HarnessError> {
    cfg.validate()?;
    let default_ckpt = cfg.output_dir.join(CHECKPOINT_FILE);
    let (model, step) = load_model(cfg, checkpoint.unwrap_or(&default_ckpt))?;
    let data = load_data(cfg)?;
    let images = head(data.split(split), cfg.test_subset);
    let rng = RngStream::new(cfg.seed_noise).split(EVAL_STREAM).split(k as u64);
    let mut values = Vec::with_capacity(images.rows());
    let n = images.rows();
    for (i, start) in (0..n).step_by(cfg.batch_size).enumerate() {
        let idx: Vec<usize> = (start..(start + cfg.batch_size).min(n)).collect();
        values.extend(test_estimate(&model, &images.select_rows(&idx), k, &mut rng.split(i as u64))?);
    }
    let count = values.len();
    let mean = values.iter().sum::<f64>() / count.max(1) as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (count.max(2) - 1) as f64;
    let report = EvalReport {
        split,
        k,
        count,
        step,
        mean,
        std_err: (var / count.max(1) as f64).sqrt(),
    };
    fs::create_dir_all(&cfg.output_dir).map_err(|e| HarnessError::Io {
        path: cfg.output_dir.display().to_string(),
        message: e.to_string(),
    })?;
    let mut writer = MetricsWriter::append(&cfg.output_dir.join(METRICS_FILE), &cfg.to_json())?;
    writer.write(&MetricsRecord {
        step,
        split: split.name().into(),
        iwae: Some(mean),
        iwae_k: Some(k),
        ..Default::default()
    })?;
    Ok(report)
}

/// Gradient-variance probe on the first training batch at a checkpoint's
/// parameters; appended to the metrics file as a `trace` row.
pub fn run_trace(
    cfg: &ExperimentConfig,
    checkpoint: Option<&Path>,
    replicas: usize,
) -> Result<VarianceReport, HarnessError> {
    cfg.validate()?;
    let default_ckpt = cfg.output_dir.join(CHECKPOINT_FILE);
    let (model, step) = load_model(cfg, checkpoint.unwrap_or(&default_ckpt))?;
    let data = load_data(cfg)?;
    let batch = head(&data.train, cfg.batch_size);
    let rng = RngStream::new(cfg.seed_noise).split(TRACE_STREAM).split(step);
    let report = variance_probe(&model, model.nvil.as_ref(), &batch, replicas, step, &rng)?;
    let mut writer = MetricsWriter::append(&cfg.output_dir.join(METRICS_FILE), &cfg.to_json())?;
    writer.write(&MetricsRecord::variance(&report))?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataSummary {
    pub binarization: Binarization,
    pub counts: [usize; 3],
    pub dim: usize,
    /// Fraction of pixels that are on, per split.
    pub on_fraction: [f64; 3],
}

pub fn inspect_data(cfg: &ExperimentConfig) -> Result<DataSummary, HarnessError> {
    let data = load_data(cfg)?;
    let frac = |t: &Tensor| t.sum() / t.len().max(1) as f64;
    Ok(DataSummary {
        binarization: data.binarization,
        counts: [data.train.rows(), data.valid.rows(), data.test.rows()],
        dim: data.train.cols(),
        on_fraction: [frac(&data.train), frac(&data.valid), frac(&data.test)],
    })
}
