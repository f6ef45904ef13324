//! Command-line front end: `gen`, `train`, `eval`, `weights`, `selfcheck`.
//!
//! Configuration is layered: defaults (seed from `SETPOOL_SEED`), then a
//! `key=value` file from `--config`, then `--set key=value` pairs, then the
//! dedicated flags.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::actor_critic::ActorCritic;
use crate::config::RunConfig;
use crate::data::{gen_synthetic, save_embeddings, Dataset};
use crate::env::infer_weights;
use crate::error::{Error, Result};
use crate::eval::{evaluate, Pooling};
use crate::selfcheck::{run_all, SelfCheckOptions};
use crate::train::{prepare_data, save_metrics, train};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DIVERGENCE: i32 = 3;
pub const EXIT_MISMATCH: i32 = 4;

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Divergence(_) | Error::NonFinite(_) => EXIT_DIVERGENCE,
        Error::Mismatch(_) | Error::Format { .. } | Error::Shape(_) => EXIT_MISMATCH,
        Error::Config { .. } | Error::Parse { .. } | Error::Usage(_) | Error::Input(_) | Error::Io { .. } => EXIT_CONFIG,
    }
}

#[derive(Debug, Parser)]
#[command(name = "setpool", version, about = "Learned attention pooling of embedding sets")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic embedding CSV.
    Gen {
        #[command(flatten)]
        cfg: ConfigFlags,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a policy; writes run.txt, metrics.csv and checkpoint/ under the output directory.
    Train {
        #[command(flatten)]
        cfg: ConfigFlags,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Verification and identification metrics on the held-out split.
    Eval {
        #[command(flatten)]
        cfg: ConfigFlags,
        #[arg(long, required_unless_present = "baseline", conflicts_with = "baseline")]
        checkpoint: Option<PathBuf>,
        /// Evaluate a fixed pooling instead of a checkpoint. Only `avepool`.
        #[arg(long, value_parser = ["avepool"])]
        baseline: Option<String>,
        /// Directory for metrics.json and curve CSVs.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Which identities to score.
        #[arg(long, default_value = "test", value_parser = ["test", "train", "all"])]
        split: String,
        /// Accepted for compatibility; scoring is single-threaded.
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
    /// Per-member weights of one set, highest first.
    Weights {
        #[command(flatten)]
        cfg: ConfigFlags,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        set_id: String,
    },
    /// Gradient, estimator, projection and telescoping checks.
    Selfcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, hide = true)]
        corrupt_backward: bool,
    },
}

#[derive(Debug, Args, Default)]
pub struct ConfigFlags {
    /// `key=value` file applied before any flag.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Any config key, repeatable: `--set lambda=0.1`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[arg(long)]
    pub seed: Option<String>,
    #[arg(long)]
    pub ids: Option<String>,
    #[arg(long)]
    pub sets_per_id: Option<String>,
    #[arg(long)]
    pub dim: Option<String>,
    #[arg(long)]
    pub noise: Option<String>,
    #[arg(long)]
    pub outlier_rate: Option<String>,
    #[arg(long)]
    pub profile_rate: Option<String>,
    /// Embedding CSV used instead of synthetic data.
    #[arg(long)]
    pub data: Option<String>,
    #[arg(long)]
    pub episodes: Option<String>,
    /// `on` or `off`.
    #[arg(long)]
    pub mode: Option<String>,
    /// `plain` or `pgr`.
    #[arg(long)]
    pub distance: Option<String>,
    #[arg(long)]
    pub lambda: Option<String>,
}

impl ConfigFlags {
    fn flags(&self) -> [(&'static str, &Option<String>); 12] {
        [
            ("seed", &self.seed),
            ("ids", &self.ids),
            ("sets_per_id", &self.sets_per_id),
            ("dim", &self.dim),
            ("noise", &self.noise),
            ("outlier_rate", &self.outlier_rate),
            ("profile_rate", &self.profile_rate),
            ("data", &self.data),
            ("episodes", &self.episodes),
            ("mode", &self.mode),
            ("distance", &self.distance),
            ("lambda", &self.lambda),
        ]
    }

    /// Builds the run config. `fallback` is read when `--config` is absent
    /// and the file exists.
    pub fn resolve(&self, fallback: Option<&Path>) -> Result<RunConfig> {
        let mut cfg = RunConfig::from_env()?;
        let file = self.config.as_deref().or(fallback.filter(|p| p.is_file()));
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            cfg.apply_text(&text)?;
        }
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Usage(format!("--set expects KEY=VALUE, got `{kv}`")))?;
            cfg.set(k.trim(), v.trim())?;
        }
        for (k, v) in self.flags() {
            if let Some(v) = v {
                cfg.set(k, v)?;
            }
        }
        Ok(cfg)
    }
}

/// Manifest written next to a checkpoint directory by `train`.
fn run_manifest(checkpoint: &Path) -> Option<PathBuf> {
    checkpoint.parent().map(|d| d.join("run.txt"))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn cmd_gen(flags: &ConfigFlags, out: &Path) -> Result<()> {
    let cfg = flags.resolve(None)?;
    cfg.synthetic.validate()?;
    let ds = gen_synthetic(&cfg.synthetic, cfg.seed)?;
    save_embeddings(out, &ds)?;
    eprintln!("wrote {} sets of {} identities to {}", ds.sets.len(), ds.num_identities, out.display());
    Ok(())
}

fn cmd_train(flags: &ConfigFlags, out: Option<&Path>) -> Result<()> {
    let mut cfg = flags.resolve(None)?;
    if let Some(out) = out {
        cfg.out = out.to_path_buf();
    }
    cfg.validate()?;
    let (train_set, _) = prepare_data(&cfg)?;
    let outcome = train(&cfg, &train_set)?;
    let dir = &cfg.out;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = format!("# setpool {}\n", env!("CARGO_PKG_VERSION"));
    manifest.push_str(&cfg.to_text());
    write_file(&dir.join("run.txt"), &manifest)?;
    save_metrics(&dir.join("metrics.csv"), &outcome.log)?;
    outcome.model.save(
        &dir.join("checkpoint"),
        &[
            ("seed", cfg.seed.to_string()),
            ("mode", cfg.mode.to_string()),
            ("episodes", cfg.episodes.to_string()),
        ],
    )?;
    let losses = &outcome.episode_losses;
    if let (Some(first), Some(last)) = (losses.first(), losses.last()) {
        eprintln!(
            "trained {} episodes: xent {first:.4} -> {last:.4}, {} updates skipped",
            losses.len(),
            outcome.skipped_updates
        );
    }
    Ok(())
}

fn load_checkpoint(path: &Path, ds: &Dataset) -> Result<ActorCritic> {
    let (model, _) = ActorCritic::load(path)?;
    if model.feature_dim() != ds.dim {
        return Err(Error::Mismatch(format!(
            "checkpoint expects {}-dim features, data has {}",
            model.feature_dim(),
            ds.dim
        )));
    }
    Ok(model)
}

fn eval_split(cfg: &RunConfig, split: &str) -> Result<Dataset> {
    let (train_set, test_set) = prepare_data(cfg)?;
    Ok(match split {
        "train" => train_set,
        "test" => test_set,
        _ => match &cfg.data {
            Some(path) => crate::data::load_embeddings(path)?,
            None => gen_synthetic(&cfg.synthetic, cfg.seed)?,
        },
    })
}

fn cmd_eval(flags: &ConfigFlags, checkpoint: Option<&Path>, out: Option<&Path>, split: &str) -> Result<()> {
    let cfg = flags.resolve(checkpoint.and_then(run_manifest).as_deref())?;
    cfg.validate()?;
    let ds = eval_split(&cfg, split)?;
    let model = checkpoint.map(|c| load_checkpoint(c, &ds)).transpose()?;
    let pooling = model.as_ref().map_or(Pooling::Average, Pooling::Policy);
    let report = evaluate(&ds, pooling, cfg.distance)?;
    if let Some(out) = out {
        report.write_dir(out)?;
    }
    println!("{}", serde_json::to_string_pretty(&report.to_json()).expect("report is valid JSON"));
    Ok(())
}

fn cmd_weights(flags: &ConfigFlags, checkpoint: &Path, set_id: &str) -> Result<()> {
    let cfg = flags.resolve(run_manifest(checkpoint).as_deref())?;
    cfg.validate()?;
    let ds = eval_split(&cfg, "all")?;
    let model = load_checkpoint(checkpoint, &ds)?;
    let set = ds
        .find(set_id)
        .ok_or_else(|| Error::Usage(format!("unknown set_id `{set_id}`")))?;
    let (weights, _) = infer_weights(set, &model)?;
    let mut rows: Vec<usize> = (0..set.len()).collect();
    rows.sort_by(|&a, &b| weights[b].total_cmp(&weights[a]));
    println!("member,yaw,quality,weight");
    for i in rows {
        let m = &set.members[i];
        let q = m.quality.map_or(String::new(), |q| q.to_string());
        println!("{i},{},{q},{}", m.yaw, weights[i]);
    }
    Ok(())
}

fn cmd_selfcheck(seed: u64, corrupt_backward: bool) -> Result<bool> {
    let results = run_all(SelfCheckOptions { corrupt_backward, seed })?;
    for r in &results {
        println!(
            "{} {:<24} max_error={:.3e} tolerance={:.0e}",
            if r.passed() { "PASS" } else { "FAIL" },
            r.name,
            r.max_error,
            r.tolerance
        );
    }
    Ok(results.iter().all(|r| r.passed()))
}

pub fn run(cli: Cli) -> i32 {
    let outcome = match &cli.command {
        Command::Gen { cfg, out } => cmd_gen(cfg, out).map(|_| true),
        Command::Train { cfg, out } => cmd_train(cfg, out.as_deref()).map(|_| true),
        Command::Eval {
            cfg,
            checkpoint,
            out,
            split,
            ..
        } => cmd_eval(cfg, checkpoint.as_deref(), out.as_deref(), split).map(|_| true),
        Command::Weights {
            cfg,
            checkpoint,
            set_id,
        } => cmd_weights(cfg, checkpoint, set_id).map(|_| true),
        Command::Selfcheck { seed, corrupt_backward } => cmd_selfcheck(*seed, *corrupt_backward),
    };
    match outcome {
        Ok(true) => EXIT_OK,
        Ok(false) => EXIT_CHECK_FAILED,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
