//! Training drivers for the on-policy and replay learners, plus the data
//! preparation shared with evaluation.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::actor_critic::{a2c_update, clip_norm, ActorCritic, ActorCriticConfig, LearnRates, Optimizers, SampleMode};
use crate::config::{Mode, RunConfig};
use crate::data::{gen_synthetic, load_embeddings, Dataset};
use crate::env::{run_episode, Trajectory};
use crate::error::{Error, Result};
use crate::nn::Gradient;
use crate::off_policy::{
    average_policy_update, is_ratios, kl_grad, policy_grad_off, trust_region_project, value_grad_off, ReplayPool,
};

/// Named random streams derived from the run seed. The synthetic generator
/// uses the seed directly.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Split = 1,
    Init = 2,
    Rollout = 3,
    Replay = 4,
}

pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

/// Consecutive failed iterations tolerated before training is abandoned.
pub const DIVERGENCE_PATIENCE: usize = 10;

/// Loads or generates the dataset and splits it by identity.
pub fn prepare_data(cfg: &RunConfig) -> Result<(Dataset, Dataset)> {
    let ds = match &cfg.data {
        Some(path) => load_embeddings(path)?,
        None => gen_synthetic(&cfg.synthetic, cfg.seed)?,
    };
    ds.split(cfg.test_fraction, &mut stream_rng(cfg.seed, Stream::Split))
}

pub fn init_model(cfg: &RunConfig, dim: usize, num_classes: usize) -> Result<ActorCritic> {
    let ac_cfg = ActorCriticConfig {
        feature_dim: dim,
        trunk_widths: cfg.trunk_widths.clone(),
        head_hidden: cfg.head_hidden.clone(),
        num_classes,
        lambda: cfg.lambda,
        interaction: cfg.interaction,
    };
    ActorCritic::new(&ac_cfg, &mut stream_rng(cfg.seed, Stream::Init))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub iter: usize,
    pub episodes_seen: usize,
    pub mean_reward: f64,
    pub xent_loss: f64,
    pub mean_kl: f64,
    pub clip_fraction: f64,
}

pub const METRICS_HEADER: &str = "iter,episodes_seen,mean_reward,xent_loss,mean_KL,clip_fraction";

pub fn write_metrics<W: Write>(rows: &[MetricsRow], mut w: W) -> std::io::Result<()> {
    writeln!(w, "{METRICS_HEADER}")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{:e},{:e},{:e},{:e}",
            r.iter, r.episodes_seen, r.mean_reward, r.xent_loss, r.mean_kl, r.clip_fraction
        )?;
    }
    w.flush()
}

pub fn save_metrics(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_metrics(rows, std::io::BufWriter::new(file)).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: ActorCritic,
    pub log: Vec<MetricsRow>,
    /// Final cross-entropy of every collected episode, in collection order.
    pub episode_losses: Vec<f64>,
    /// Updates skipped because of a non-finite direction.
    pub skipped_updates: usize,
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

fn mean_kl(p: &ActorCritic, traj: &Trajectory) -> Result<f64> {
    let kls = traj.steps.iter().map(|s| p.kl_at(&s.state_vec)).collect::<Result<Vec<_>>>()?;
    Ok(mean(kls.into_iter()))
}

/// Cycles through the training sets in a fresh random order per pass.
struct SetSchedule {
    order: Vec<usize>,
    pos: usize,
}

impl SetSchedule {
    fn new(n: usize) -> Self {
        Self {
            order: (0..n).collect(),
            pos: n,
        }
    }

    fn next(&mut self, rng: &mut ChaCha8Rng) -> usize {
        if self.pos == self.order.len() {
            self.order.shuffle(rng);
            self.pos = 0;
        }
        self.pos += 1;
        self.order[self.pos - 1]
    }
}

/// Counts consecutive failures and aborts past the patience limit.
struct Divergence(usize);

impl Divergence {
    fn record(&mut self, ok: bool, iter: usize) -> Result<()> {
        self.0 = if ok { 0 } else { self.0 + 1 };
        if self.0 >= DIVERGENCE_PATIENCE {
            return Err(Error::Divergence(format!(
                "{DIVERGENCE_PATIENCE} consecutive non-finite iterations, last at {iter}"
            )));
        }
        Ok(())
    }
}

fn rates(cfg: &RunConfig) -> LearnRates {
    LearnRates {
        gamma: cfg.gamma,
        lr_pi: cfg.lr_pi,
        lr_v: cfg.lr_v,
        lr_head: cfg.lr_head,
        alpha: cfg.trust.alpha,
        max_grad_norm: cfg.max_grad_norm,
    }
}

pub fn train(cfg: &RunConfig, data: &Dataset) -> Result<TrainOutcome> {
    cfg.validate()?;
    let model = init_model(cfg, data.dim, data.num_identities)?;
    match cfg.mode {
        Mode::On => train_on_policy(model, cfg, data),
        Mode::Off => train_off_policy(model, cfg, data),
    }
}

/// One stochastic episode and one actor-critic update per training set
/// visit; one metrics row per episode.
pub fn train_on_policy(mut p: ActorCritic, cfg: &RunConfig, data: &Dataset) -> Result<TrainOutcome> {
    let rates = rates(cfg);
    let mut opt = Optimizers::new(cfg.momentum);
    let mut rng = stream_rng(cfg.seed, Stream::Rollout);
    let mut schedule = SetSchedule::new(data.sets.len());
    let mut log = Vec::with_capacity(cfg.episodes);
    let mut losses = Vec::with_capacity(cfg.episodes);
    let mut diverged = Divergence(0);
    let mut skipped = 0;
    for episode in 1..=cfg.episodes {
        let set = &data.sets[schedule.next(&mut rng)];
        let traj = run_episode(set, &p, &p.reward_head, SampleMode::Stochastic, &mut rng)?;
        let kl = mean_kl(&p, &traj)?;
        let stats = a2c_update(&mut p, &traj, &rates, &mut opt)?;
        skipped += usize::from(!stats.applied);
        diverged.record(stats.applied && traj.final_loss.is_finite() && stats.head_loss.is_finite(), episode)?;
        losses.push(traj.final_loss);
        log.push(MetricsRow {
            iter: episode,
            episodes_seen: episode,
            mean_reward: mean(traj.steps.iter().map(|s| s.reward)),
            xent_loss: traj.final_loss,
            mean_kl: kl,
            clip_fraction: 0.0,
        });
    }
    Ok(TrainOutcome {
        model: p,
        log,
        episode_losses: losses,
        skipped_updates: skipped,
    })
}

/// Directions from one replayed minibatch.
struct ReplayStep {
    theta: Gradient,
    omega: Gradient,
    mean_kl: f64,
    k: Gradient,
    mean_reward: f64,
    clip_fraction: f64,
}

fn replay_step(p: &ActorCritic, batch: &[&Trajectory], cfg: &RunConfig) -> Result<Option<ReplayStep>> {
    let mut theta = Gradient::zeros(p.theta_len());
    let mut omega = Gradient::zeros(p.omega_len());
    let mut states: Vec<&[f64]> = Vec::new();
    let (mut clipped, mut ratios, mut used) = (0usize, 0usize, 0usize);
    let mut rewards = Vec::new();
    for traj in batch {
        let Ok(rho) = is_ratios(traj, p, cfg.trust.rho_clip) else {
            continue;
        };
        if cfg.trust.rho_clip.is_finite() {
            clipped += rho.iter().filter(|&&r| r >= cfg.trust.rho_clip).count();
        }
        ratios += rho.len();
        theta.add_scaled(&policy_grad_off(traj, &rho, p, cfg.gamma)?, 1.0);
        omega.add_scaled(&value_grad_off(traj, &rho, p, cfg.gamma)?, 1.0);
        states.extend(traj.steps.iter().map(|s| s.state_vec.as_slice()));
        rewards.extend(traj.steps.iter().map(|s| s.reward));
        used += 1;
    }
    if used == 0 {
        return Ok(None);
    }
    theta.scale(1.0 / used as f64);
    omega.scale(1.0 / used as f64);
    let (mean_kl, k) = kl_grad(p, &states)?;
    Ok(Some(ReplayStep {
        theta,
        omega,
        mean_kl,
        k,
        mean_reward: mean(rewards.into_iter()),
        clip_fraction: clipped as f64 / ratios as f64,
    }))
}

/// Collects one episode per iteration into the replay pool and, once more
/// than `warmup` episodes have been seen, applies `replay_ratio` projected
/// minibatch updates. One metrics row per update.
pub fn train_off_policy(mut p: ActorCritic, cfg: &RunConfig, data: &Dataset) -> Result<TrainOutcome> {
    let mut opt = Optimizers::new(cfg.momentum);
    let mut rollout_rng = stream_rng(cfg.seed, Stream::Rollout);
    let mut replay_rng = stream_rng(cfg.seed, Stream::Replay);
    let mut schedule = SetSchedule::new(data.sets.len());
    let mut pool = ReplayPool::new(cfg.capacity)?;
    let mut log = Vec::new();
    let mut losses = Vec::with_capacity(cfg.episodes);
    let mut diverged = Divergence(0);
    let mut skipped = 0;
    let mut iter = 0;
    for episode in 1..=cfg.episodes {
        let set = &data.sets[schedule.next(&mut rollout_rng)];
        let traj = run_episode(set, &p, &p.reward_head, SampleMode::Stochastic, &mut rollout_rng)?;
        let head_loss = p.reward_head_step(&traj.final_aggregate, traj.identity, cfg.lr_head, &mut opt)?;
        losses.push(traj.final_loss);
        let fresh_loss = traj.final_loss;
        pool.push(traj)?;
        if episode <= cfg.warmup {
            diverged.record(fresh_loss.is_finite() && head_loss.is_finite(), episode)?;
            continue;
        }
        for _ in 0..cfg.replay_ratio {
            iter += 1;
            let n = cfg.minibatch.min(pool.len());
            let batch = pool.sample(n, &mut replay_rng)?;
            let step = replay_step(&p, &batch, cfg)?;
            let mut ok = fresh_loss.is_finite();
            let (mut kl, mut reward, mut clip) = (f64::NAN, f64::NAN, f64::NAN);
            if let Some(mut s) = step {
                let mut z = trust_region_project(&s.theta, &s.k, cfg.trust.xi)?;
                if z.is_finite() && s.omega.is_finite() {
                    clip_norm(&mut z, cfg.max_grad_norm);
                    clip_norm(&mut s.omega, cfg.max_grad_norm);
                    p.apply_update(&z, &s.omega, cfg.lr_pi, cfg.lr_v, &mut opt)?;
                } else {
                    ok = false;
                    skipped += 1;
                }
                (kl, reward, clip) = (s.mean_kl, s.mean_reward, s.clip_fraction);
            } else {
                ok = false;
                skipped += 1;
            }
            if cfg.head_replay {
                for traj in &batch {
                    let l = p.reward_head_step(&traj.final_aggregate, traj.identity, cfg.lr_head, &mut opt)?;
                    ok &= l.is_finite();
                }
            }
            average_policy_update(&mut p, cfg.trust.alpha)?;
            diverged.record(ok, iter)?;
            log.push(MetricsRow {
                iter,
                episodes_seen: episode,
                mean_reward: reward,
                xent_loss: fresh_loss,
                mean_kl: kl,
                clip_fraction: clip,
            });
        }
    }
    Ok(TrainOutcome {
        model: p,
        log,
        episode_losses: losses,
        skipped_updates: skipped,
    })
}
