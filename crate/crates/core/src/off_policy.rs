//! Experience replay for the actor-critic: replay pool, truncated importance
//! ratios, off-policy returns and gradients, and the KL trust region around
//! the running average policy.

use std::collections::VecDeque;
use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;

use crate::actor_critic::{gaussian_logpdf, td_error, ActorCritic};
use crate::env::{Trajectory, TrajectoryStep};
use crate::error::{Error, Result};
use crate::nn::Gradient;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrustRegionConfig {
    /// Bound on `k^T z`.
    pub xi: f64,
    /// Average-policy retention per update.
    pub alpha: f64,
    /// Upper bound on each importance ratio; `f64::INFINITY` disables it.
    pub rho_clip: f64,
}

impl Default for TrustRegionConfig {
    fn default() -> Self {
        Self {
            xi: 1.0,
            alpha: 0.99,
            rho_clip: 10.0,
        }
    }
}

impl TrustRegionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.xi >= 0.0) {
            return Err(Error::config("xi", format!("must be >= 0, got {}", self.xi)));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::config("alpha", format!("must lie in [0, 1], got {}", self.alpha)));
        }
        if !(self.rho_clip > 0.0) {
            return Err(Error::config("rho_clip", format!("must be > 0, got {}", self.rho_clip)));
        }
        Ok(())
    }
}

/// Bounded FIFO of trajectories.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayPool {
    capacity: usize,
    entries: VecDeque<Trajectory>,
    inserted: u64,
}

impl ReplayPool {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::config("capacity", "replay pool needs room for one trajectory"));
        }
        Ok(Self {
            capacity,
            entries: VecDeque::with_capacity(capacity.min(1 << 12)),
            inserted: 0,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of trajectories ever pushed.
    pub fn inserted(&self) -> u64 {
        self.inserted
    }

    pub fn iter(&self) -> impl Iterator<Item = &Trajectory> {
        self.entries.iter()
    }

    /// Appends `traj`, evicting the oldest entry when full.
    pub fn push(&mut self, traj: Trajectory) -> Result<()> {
        if traj.is_empty() {
            return Err(Error::Input(format!("trajectory for `{}` is empty", traj.set_id)));
        }
        if let Some(t) = traj.steps.iter().position(|s| !s.behavior_logdensity.is_finite()) {
            return Err(Error::NonFinite(format!(
                "behaviour log-density at step {t} of `{}`",
                traj.set_id
            )));
        }
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back(traj);
        self.inserted += 1;
        Ok(())
    }

    /// `n` distinct entries drawn uniformly.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<&Trajectory>> {
        if self.entries.is_empty() {
            return Err(Error::Usage("cannot sample from an empty replay pool".into()));
        }
        if n > self.entries.len() {
            return Err(Error::Usage(format!(
                "asked for {n} trajectories from a pool of {}",
                self.entries.len()
            )));
        }
        Ok(rand::seq::index::sample(rng, self.entries.len(), n)
            .into_iter()
            .map(|i| &self.entries[i])
            .collect())
    }
}

/// `min(pi(u_t | s_t) / mu_t, rho_clip)` for every step, in raw action space.
pub fn is_ratios(traj: &Trajectory, p: &ActorCritic, rho_clip: f64) -> Result<Vec<f64>> {
    traj.steps
        .iter()
        .enumerate()
        .map(|(t, s)| {
            let (mean, log_std) = p.policy_forward(&s.state_vec)?;
            let log_ratio = gaussian_logpdf(s.raw_action, mean, log_std) - s.behavior_logdensity;
            if log_ratio.is_nan() || log_ratio == f64::INFINITY {
                return Err(Error::NonFinite(format!("importance ratio at step {t} of `{}`", traj.set_id)));
            }
            Ok(log_ratio.exp().min(rho_clip))
        })
        .collect()
}

/// Off-policy Monte-Carlo return by the backward recursion
/// `R_t = r_t + gamma * rho_{t+1} * R_{t+1}`. `rho[0]` is not used.
pub fn off_policy_return(rewards: &[f64], rho: &[f64], gamma: f64) -> Result<Vec<f64>> {
    if rewards.len() != rho.len() {
        return Err(Error::Shape(format!("{} rewards but {} ratios", rewards.len(), rho.len())));
    }
    let mut out = vec![0.0; rewards.len()];
    let mut next = 0.0;
    for t in (0..rewards.len()).rev() {
        let carry = if t + 1 < rewards.len() { gamma * rho[t + 1] * next } else { 0.0 };
        next = rewards[t] + carry;
        out[t] = next;
    }
    Ok(out)
}

fn check_len(traj: &Trajectory, rho: &[f64]) -> Result<()> {
    if traj.len() != rho.len() {
        return Err(Error::Shape(format!(
            "trajectory of length {} with {} ratios",
            traj.len(),
            rho.len()
        )));
    }
    Ok(())
}

/// `sum_t (R_t - V(s_t)) grad V(s_t) prod_{i<=t} rho_i`, an ascent direction
/// in omega space.
pub fn value_grad_off(traj: &Trajectory, rho: &[f64], p: &ActorCritic, gamma: f64) -> Result<Gradient> {
    check_len(traj, rho)?;
    let returns = off_policy_return(&traj.rewards(), rho, gamma)?;
    let mut g = Gradient::zeros(p.omega_len());
    let mut weight = 1.0;
    for (t, step) in traj.steps.iter().enumerate() {
        weight *= rho[t];
        let (v, gv) = p.value_grad(&step.state_vec)?;
        g.add_scaled(&gv, (returns[t] - v) * weight);
    }
    Ok(g)
}

/// `sum_t rho_t grad log pi(u_t | s_t) delta_t` with the TD error held
/// constant, an ascent direction in theta space.
pub fn policy_grad_off(traj: &Trajectory, rho: &[f64], p: &ActorCritic, gamma: f64) -> Result<Gradient> {
    check_len(traj, rho)?;
    let values = p.trajectory_values(traj)?;
    let last = traj.len() - 1;
    let mut g = Gradient::zeros(p.theta_len());
    for (t, step) in traj.steps.iter().enumerate() {
        let delta = td_error(step.reward, values[t], values[t + 1], gamma, t == last && traj.terminal);
        let scale = rho[t] * delta;
        if scale == 0.0 {
            continue;
        }
        let (_, gl) = p.log_prob_grad(&step.state_vec, step.raw_action)?;
        g.add_scaled(&gl, scale);
    }
    Ok(g)
}

/// Mean `KL(pi_avg || pi)` over `states` and its theta-gradient.
pub fn kl_grad<S: AsRef<[f64]>>(p: &ActorCritic, states: &[S]) -> Result<(f64, Gradient)> {
    if states.is_empty() {
        return Err(Error::Input("KL gradient needs at least one state".into()));
    }
    let mut g = Gradient::zeros(p.theta_len());
    let mut kl = 0.0;
    for s in states {
        let (k, gk) = p.kl_grad_at(s.as_ref())?;
        kl += k;
        g.add_scaled(&gk, 1.0);
    }
    let inv = 1.0 / states.len() as f64;
    g.scale(inv);
    Ok((kl * inv, g))
}

/// Closest point to `dtheta` in the half-space `k^T z <= xi`.
pub fn trust_region_project(dtheta: &Gradient, k: &Gradient, xi: f64) -> Result<Gradient> {
    if dtheta.len() != k.len() {
        return Err(Error::Shape(format!("direction has {} entries, KL gradient {}", dtheta.len(), k.len())));
    }
    let kk = k.norm_sq();
    let mut z = dtheta.clone();
    if kk > 0.0 {
        let step = ((k.dot(dtheta) - xi) / kk).max(0.0);
        z.add_scaled(k, -step);
    }
    Ok(z)
}

/// `theta_a <- alpha * theta_a + (1 - alpha) * theta`.
pub fn average_policy_update(p: &mut ActorCritic, alpha: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::config("alpha", format!("must lie in [0, 1], got {alpha}")));
    }
    if alpha == 1.0 {
        return Ok(());
    }
    let mix = |avg: &mut crate::nn::DenseNet, cur: &crate::nn::DenseNet| -> Result<()> {
        let blended: Vec<f64> = avg
            .params()
            .iter()
            .zip(cur.params())
            .map(|(a, c)| alpha * a + (1.0 - alpha) * c)
            .collect();
        avg.set_params(&blended)
    };
    mix(&mut p.avg_trunk, &p.trunk)?;
    mix(&mut p.avg_policy_head, &p.policy_head)
}

const SPILL_MAGIC: &[u8; 8] = b"SPOOLRPL";
const SPILL_VERSION: u32 = 1;

struct Writer<W: Write>(W);

impl<W: Write> Writer<W> {
    fn bytes(&mut self, b: &[u8]) -> std::io::Result<()> {
        self.0.write_all(b)
    }
    fn u64(&mut self, v: u64) -> std::io::Result<()> {
        self.bytes(&v.to_le_bytes())
    }
    fn f64(&mut self, v: f64) -> std::io::Result<()> {
        self.bytes(&v.to_le_bytes())
    }
    fn f64s(&mut self, v: &[f64]) -> std::io::Result<()> {
        v.iter().try_for_each(|x| self.f64(*x))
    }
}

struct Reader<R: Read>(R);

impl<R: Read> Reader<R> {
    fn bytes(&mut self, n: usize) -> std::result::Result<Vec<u8>, String> {
        let mut buf = vec![0u8; n];
        self.0.read_exact(&mut buf).map_err(|e| format!("truncated file: {e}"))?;
        Ok(buf)
    }
    fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.bytes(8)?.try_into().unwrap()))
    }
    fn len(&mut self, what: &str) -> std::result::Result<usize, String> {
        let v = self.u64()?;
        if v > 1 << 32 {
            return Err(format!("implausible {what} {v}"));
        }
        Ok(v as usize)
    }
    fn f64(&mut self) -> std::result::Result<f64, String> {
        Ok(f64::from_le_bytes(self.bytes(8)?.try_into().unwrap()))
    }
    fn f64s(&mut self, n: usize) -> std::result::Result<Vec<f64>, String> {
        (0..n).map(|_| self.f64()).collect()
    }
}

impl ReplayPool {
    /// Binary spill file. Header: magic, `u32` version, capacity, inserted
    /// count and entry count as `u64`. Each trajectory: set_id (length +
    /// UTF-8), identity, `T`, state length, order, then `T` records of
    /// state/raw/weight/log-density/reward, the terminal flag, initial and
    /// final loss, final weights and final aggregate. Little-endian.
    pub fn write_to<W: Write>(&self, w: W) -> std::io::Result<()> {
        let mut w = Writer(w);
        w.bytes(SPILL_MAGIC)?;
        w.bytes(&SPILL_VERSION.to_le_bytes())?;
        w.u64(self.capacity as u64)?;
        w.u64(self.inserted)?;
        w.u64(self.entries.len() as u64)?;
        for traj in &self.entries {
            w.u64(traj.set_id.len() as u64)?;
            w.bytes(traj.set_id.as_bytes())?;
            w.u64(traj.identity as u64)?;
            w.u64(traj.len() as u64)?;
            let sd = traj.steps.first().map_or(0, |s| s.state_vec.len());
            w.u64(sd as u64)?;
            traj.order.iter().try_for_each(|&o| w.u64(o as u64))?;
            for s in &traj.steps {
                w.f64s(&s.state_vec)?;
                w.f64s(&[s.raw_action, s.weight, s.behavior_logdensity, s.reward])?;
            }
            w.bytes(&[traj.terminal as u8])?;
            w.f64(traj.initial_loss)?;
            w.f64(traj.final_loss)?;
            w.f64s(&traj.final_weights)?;
            w.u64(traj.final_aggregate.len() as u64)?;
            w.f64s(&traj.final_aggregate)?;
        }
        w.0.flush()
    }

    pub fn read_from<R: Read>(r: R) -> std::result::Result<Self, String> {
        let mut r = Reader(r);
        if r.bytes(8)? != SPILL_MAGIC {
            return Err("bad magic".into());
        }
        let version = u32::from_le_bytes(r.bytes(4)?.try_into().unwrap());
        if version != SPILL_VERSION {
            return Err(format!("unsupported version {version}"));
        }
        let capacity = r.len("capacity")?;
        let inserted = r.u64()?;
        let count = r.len("entry count")?;
        if capacity == 0 || count > capacity {
            return Err(format!("{count} entries in a pool of capacity {capacity}"));
        }
        let mut entries = VecDeque::with_capacity(count);
        for _ in 0..count {
            let n = r.len("set_id length")?;
            let set_id = String::from_utf8(r.bytes(n)?).map_err(|_| "set_id is not UTF-8".to_string())?;
            let identity = r.len("identity")?;
            let t = r.len("trajectory length")?;
            let sd = r.len("state length")?;
            let order = (0..t).map(|_| r.len("order entry")).collect::<std::result::Result<Vec<_>, _>>()?;
            let mut steps = Vec::with_capacity(t);
            for _ in 0..t {
                let state_vec = r.f64s(sd)?;
                let v = r.f64s(4)?;
                steps.push(TrajectoryStep {
                    state_vec,
                    raw_action: v[0],
                    weight: v[1],
                    behavior_logdensity: v[2],
                    reward: v[3],
                });
            }
            let terminal = match r.bytes(1)?[0] {
                0 => false,
                1 => true,
                b => return Err(format!("bad terminal flag {b}")),
            };
            let initial_loss = r.f64()?;
            let final_loss = r.f64()?;
            let final_weights = r.f64s(t)?;
            let ad = r.len("aggregate length")?;
            let final_aggregate = r.f64s(ad)?;
            entries.push_back(Trajectory {
                set_id,
                identity,
                order,
                steps,
                terminal,
                initial_loss,
                final_loss,
                final_weights,
                final_aggregate,
            });
        }
        let mut extra = [0u8; 1];
        if r.0.read(&mut extra).map_err(|e| e.to_string())? != 0 {
            return Err("trailing bytes".into());
        }
        Ok(Self {
            capacity,
            entries,
            inserted,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_to(std::io::BufWriter::new(file)).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(std::io::BufReader::new(file)).map_err(|msg| Error::Format {
            path: path.to_path_buf(),
            msg,
        })
    }
}
