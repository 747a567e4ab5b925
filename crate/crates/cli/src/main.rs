use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use vcae::data::Split;
use vcae::harness::{emit_plot, inspect_data, load_config, run_eval, run_trace, run_training};

#[derive(Parser)]
#[command(name = "vcae", version, about = "Train and evaluate variational composite autoencoders")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model; writes metrics.csv and model.ckpt to the config's output_dir.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Importance-weighted log-likelihood estimate on a split.
    Eval {
        #[arg(long)]
        config: PathBuf,
        /// Defaults to <output_dir>/model.ckpt.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        split: Split,
        /// Importance samples; defaults to the config's iwae_k.
        #[arg(long)]
        k: Option<usize>,
    },
    /// Gradient-variance probe at a checkpoint.
    TraceVariance {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Replica count; defaults to the config's variance_replicas.
        #[arg(long)]
        replicas: Option<usize>,
    },
    /// Line chart of one metrics column from one or more metrics files.
    Plot {
        #[arg(required = true)]
        files: Vec<PathBuf>,
        #[arg(long)]
        series: String,
        /// Only rows of this split (train, valid, test, trace).
        #[arg(long)]
        split: Option<String>,
        #[arg(long)]
        log_y: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Load the configured dataset and print split sizes.
    InspectData {
        #[arg(long)]
        config: PathBuf,
    },
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Train { config } => {
            let cfg = load_config(&config)?;
            let summary = run_training(&cfg).context("training failed")?;
            println!(
                "trained {} steps; checkpoint {}; metrics {}",
                summary.steps,
                summary.checkpoint.display(),
                summary.metrics.display()
            );
        }
        Command::Eval {
            config,
            checkpoint,
            split,
            k,
        } => {
            let cfg = load_config(&config)?;
            let k = k.unwrap_or(cfg.iwae_k);
            let r = run_eval(&cfg, checkpoint.as_deref(), split, k)?;
            println!(
                "{} split, K = {}, {} images, step {}: {:.3} ± {:.3} nats",
                r.split, r.k, r.count, r.step, r.mean, r.std_err
            );
        }
        Command::TraceVariance {
            config,
            checkpoint,
            replicas,
        } => {
            let cfg = load_config(&config)?;
            let r = run_trace(&cfg, checkpoint.as_deref(), replicas.unwrap_or(cfg.variance_replicas))?;
            let show = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.4e}"));
            println!(
                "step {} R = {}: theta1 {} theta2 {} psi {} phi {} (encoders {})",
                r.step,
                r.replicas,
                show(r.theta1),
                show(r.theta2),
                show(r.psi),
                show(r.phi),
                show(r.inference)
            );
        }
        Command::Plot {
            files,
            series,
            split,
            log_y,
            out,
        } => {
            emit_plot(&files, &series, split.as_deref(), log_y, &out)?;
            println!("wrote {}", out.display());
        }
        Command::InspectData { config } => {
            let cfg = load_config(&config)?;
            let s = inspect_data(&cfg)?;
            println!("binarization: {}", s.binarization);
            println!("dimension: {}", s.dim);
            for (name, (n, f)) in ["train", "valid", "test"].iter().zip(s.counts.iter().zip(s.on_fraction)) {
                println!("{name}: {n} images, {:.2}% pixels on", 100.0 * f);
            }
        }
    }
    Ok(())
}
