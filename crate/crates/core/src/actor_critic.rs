//! Gaussian actor and state-value critic on a shared tanh trunk.
//!
//! The policy head emits `(mean, log_std)` of a Gaussian over a raw action
//! `u`; the attention weight is `softplus(u) + ACTION_FLOOR`. Densities are
//! always taken in raw space, so the softplus Jacobian cancels from every
//! importance ratio.
//!
//! Two flat parameter spaces are used throughout: `theta` is the trunk
//! followed by the policy head, `omega` is the trunk followed by the value
//! head.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::env::{RewardHead, Trajectory};
use crate::error::{Error, Result};
use crate::nn::{self, softplus, Activation, Dense, DenseNet, Gradient, Sgd, Tape};

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;
pub const ACTION_FLOOR: f64 = 1e-3;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleMode {
    Stochastic,
    Deterministic,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActionSample {
    pub raw: f64,
    pub weight: f64,
    pub logdensity: f64,
}

#[inline]
pub fn action_weight(raw: f64) -> f64 {
    softplus(raw) + ACTION_FLOOR
}

#[inline]
pub fn gaussian_logpdf(u: f64, mean: f64, log_std: f64) -> f64 {
    let z = (u - mean) * (-log_std).exp();
    -0.5 * z * z - log_std - HALF_LN_2PI
}

pub fn sample_action<R: Rng + ?Sized>(mean: f64, log_std: f64, rng: &mut R, mode: SampleMode) -> ActionSample {
    let raw = match mode {
        SampleMode::Stochastic => mean + log_std.exp() * rng.sample::<f64, _>(StandardNormal),
        SampleMode::Deterministic => mean,
    };
    ActionSample {
        raw,
        weight: action_weight(raw),
        logdensity: gaussian_logpdf(raw, mean, log_std),
    }
}

/// `r + gamma * v_next - v_t`, with `v_next` ignored on terminal steps.
#[inline]
pub fn td_error(r: f64, v_t: f64, v_next: f64, gamma: f64, terminal: bool) -> f64 {
    let bootstrap = if terminal { 0.0 } else { gamma * v_next };
    r + bootstrap - v_t
}

/// `KL(N(m_a, s_a) || N(m, s))` and its partials in `(m, log s)`.
pub(crate) fn gaussian_kl(m_a: f64, ls_a: f64, m: f64, ls: f64) -> (f64, f64, f64) {
    let inv_var = (-2.0 * ls).exp();
    let diff = m - m_a;
    let ratio = (2.0 * (ls_a - ls)).exp() + diff * diff * inv_var;
    let kl = ls - ls_a + 0.5 * ratio - 0.5;
    (kl, diff * inv_var, 1.0 - ratio)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActorCriticConfig {
    /// Embedding dimension `d`; states have length `2d`.
    pub feature_dim: usize,
    pub trunk_widths: Vec<usize>,
    /// Hidden widths of the reward head (empty = linear classifier).
    pub head_hidden: Vec<usize>,
    pub num_classes: usize,
    pub lambda: f64,
    /// Feed the trunk `[s, c * f]` (elementwise product of the two state
    /// halves) instead of the bare state.
    pub interaction: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActorCritic {
    pub trunk: DenseNet,
    pub policy_head: DenseNet,
    pub value_head: DenseNet,
    pub avg_trunk: DenseNet,
    pub avg_policy_head: DenseNet,
    pub reward_head: RewardHead,
}

/// Forward pass through trunk and policy head, kept for backprop.
struct PolicyPass {
    trunk_tape: Tape,
    head_tape: Tape,
    mean: f64,
    log_std: f64,
    clamped: bool,
}

fn clamp_log_std(raw: f64) -> (f64, bool) {
    let c = raw.clamp(LOG_STD_MIN, LOG_STD_MAX);
    (c, c != raw)
}

/// Trunk input for a state: the state itself, or the state followed by the
/// elementwise product of its halves when the trunk is three halves wide.
fn trunk_input<'s>(trunk: &DenseNet, state: &'s [f64]) -> Result<std::borrow::Cow<'s, [f64]>> {
    let d = state.len() / 2;
    if trunk.in_dim() == state.len() || trunk.in_dim() != 3 * d || state.len() % 2 != 0 {
        return Ok(std::borrow::Cow::Borrowed(state));
    }
    let mut x = state.to_vec();
    let scale = d as f64;
    x.extend(state[..d].iter().zip(&state[d..]).map(|(c, f)| scale * c * f));
    Ok(std::borrow::Cow::Owned(x))
}

fn policy_outputs(trunk: &DenseNet, head: &DenseNet, state: &[f64]) -> Result<(f64, f64)> {
    let out = head.predict(&trunk.predict(&trunk_input(trunk, state)?)?)?;
    Ok((out[0], clamp_log_std(out[1]).0))
}

impl ActorCritic {
    pub fn new<R: Rng + ?Sized>(cfg: &ActorCriticConfig, rng: &mut R) -> Result<Self> {
        if cfg.feature_dim == 0 || cfg.trunk_widths.is_empty() || cfg.trunk_widths.contains(&0) {
            return Err(Error::config(
                "trunk_widths",
                "need a positive feature dim and at least one positive trunk width",
            ));
        }
        let width = if cfg.interaction { 3 } else { 2 };
        let mut dims = vec![width * cfg.feature_dim];
        dims.extend_from_slice(&cfg.trunk_widths);
        let trunk = DenseNet::new(&dims, &vec![Activation::Tanh; cfg.trunk_widths.len()], rng)?;
        let hidden = trunk.out_dim();
        let policy_head = DenseNet::from_layers(vec![Dense::zeros(hidden, 2, Activation::Identity)])?;
        let value_head = DenseNet::from_layers(vec![Dense::zeros(hidden, 1, Activation::Identity)])?;
        let reward_head = RewardHead::new(cfg.feature_dim, &cfg.head_hidden, cfg.num_classes, cfg.lambda, rng)?;
        Ok(Self {
            avg_trunk: trunk.clone(),
            avg_policy_head: policy_head.clone(),
            trunk,
            policy_head,
            value_head,
            reward_head,
        })
    }

    pub fn state_dim(&self) -> usize {
        2 * self.feature_dim()
    }

    pub fn feature_dim(&self) -> usize {
        self.reward_head.net.in_dim()
    }

    pub fn interaction(&self) -> bool {
        self.trunk.in_dim() == 3 * self.feature_dim()
    }

    fn check_state(&self, state: &[f64]) -> Result<()> {
        if state.len() != self.state_dim() {
            return Err(Error::Shape(format!("state has length {}, expected {}", state.len(), self.state_dim())));
        }
        Ok(())
    }

    pub fn trunk_len(&self) -> usize {
        self.trunk.num_params()
    }

    pub fn theta_len(&self) -> usize {
        self.trunk.num_params() + self.policy_head.num_params()
    }

    pub fn omega_len(&self) -> usize {
        self.trunk.num_params() + self.value_head.num_params()
    }

    pub fn theta(&self) -> Vec<f64> {
        let mut p = self.trunk.params();
        p.extend(self.policy_head.params());
        p
    }

    pub fn avg_theta(&self) -> Vec<f64> {
        let mut p = self.avg_trunk.params();
        p.extend(self.avg_policy_head.params());
        p
    }

    pub fn set_theta(&mut self, theta: &[f64]) -> Result<()> {
        let n = self.trunk_len();
        if theta.len() != self.theta_len() {
            return Err(Error::Shape(format!("theta has {} entries, expected {}", theta.len(), self.theta_len())));
        }
        self.trunk.set_params(&theta[..n])?;
        self.policy_head.set_params(&theta[n..])
    }

    pub fn set_omega(&mut self, omega: &[f64]) -> Result<()> {
        let n = self.trunk_len();
        if omega.len() != self.omega_len() {
            return Err(Error::Shape(format!("omega has {} entries, expected {}", omega.len(), self.omega_len())));
        }
        self.trunk.set_params(&omega[..n])?;
        self.value_head.set_params(&omega[n..])
    }

    /// `(mean, log_std)` of the raw-action Gaussian, `log_std` clamped.
    pub fn policy_forward(&self, state: &[f64]) -> Result<(f64, f64)> {
        self.check_state(state)?;
        policy_outputs(&self.trunk, &self.policy_head, state)
    }

    /// Same as [`policy_forward`](Self::policy_forward) for the average policy.
    pub fn avg_policy_forward(&self, state: &[f64]) -> Result<(f64, f64)> {
        self.check_state(state)?;
        policy_outputs(&self.avg_trunk, &self.avg_policy_head, state)
    }

    pub fn value_forward(&self, state: &[f64]) -> Result<f64> {
        self.check_state(state)?;
        Ok(self.value_head.predict(&self.trunk.predict(&trunk_input(&self.trunk, state)?)?)?[0])
    }

    fn policy_pass(&self, state: &[f64]) -> Result<PolicyPass> {
        self.check_state(state)?;
        let (h, trunk_tape) = self.trunk.forward(&trunk_input(&self.trunk, state)?)?;
        let (out, head_tape) = self.policy_head.forward(&h)?;
        let (log_std, clamped) = clamp_log_std(out[1]);
        Ok(PolicyPass {
            trunk_tape,
            head_tape,
            mean: out[0],
            log_std,
            clamped,
        })
    }

    /// Theta-gradient of `dmean * mean + dlog_std * log_std`.
    fn policy_backward(&self, pass: &PolicyPass, dmean: f64, dlog_std: f64) -> Result<Gradient> {
        let dls = if pass.clamped { 0.0 } else { dlog_std };
        let (g_head, dh) = self.policy_head.backward(&pass.head_tape, &[dmean, dls])?;
        let (g_trunk, _) = self.trunk.backward(&pass.trunk_tape, &dh)?;
        Ok(Gradient::concat(&[&g_trunk, &g_head]))
    }

    /// `log pi(raw | state)` and its theta-gradient.
    pub fn log_prob_grad(&self, state: &[f64], raw: f64) -> Result<(f64, Gradient)> {
        let pass = self.policy_pass(state)?;
        let inv_std = (-pass.log_std).exp();
        let z = (raw - pass.mean) * inv_std;
        let logp = -0.5 * z * z - pass.log_std - HALF_LN_2PI;
        let g = self.policy_backward(&pass, z * inv_std, z * z - 1.0)?;
        Ok((logp, g))
    }

    /// `KL(pi_avg(state) || pi(state))` and its theta-gradient.
    pub fn kl_grad_at(&self, state: &[f64]) -> Result<(f64, Gradient)> {
        let (m_a, ls_a) = self.avg_policy_forward(state)?;
        let pass = self.policy_pass(state)?;
        let (kl, dm, dls) = gaussian_kl(m_a, ls_a, pass.mean, pass.log_std);
        let g = self.policy_backward(&pass, dm, dls)?;
        Ok((kl, g))
    }

    pub fn kl_at(&self, state: &[f64]) -> Result<f64> {
        let (m_a, ls_a) = self.avg_policy_forward(state)?;
        let (m, ls) = self.policy_forward(state)?;
        Ok(gaussian_kl(m_a, ls_a, m, ls).0)
    }

    /// `V(state)` and its omega-gradient.
    pub fn value_grad(&self, state: &[f64]) -> Result<(f64, Gradient)> {
        self.check_state(state)?;
        let (h, trunk_tape) = self.trunk.forward(&trunk_input(&self.trunk, state)?)?;
        let (v, head_tape) = self.value_head.forward(&h)?;
        let (g_head, dh) = self.value_head.backward(&head_tape, &[1.0])?;
        let (g_trunk, _) = self.trunk.backward(&trunk_tape, &dh)?;
        Ok((v[0], Gradient::concat(&[&g_trunk, &g_head])))
    }

    /// Values of every state in `traj`, plus a terminal zero.
    pub fn trajectory_values(&self, traj: &Trajectory) -> Result<Vec<f64>> {
        let mut v = traj
            .steps
            .iter()
            .map(|s| self.value_forward(&s.state_vec))
            .collect::<Result<Vec<_>>>()?;
        v.push(0.0);
        Ok(v)
    }

    /// Applies ascent directions: `theta += lr_pi * theta_dir` and
    /// `omega += lr_v * omega_dir`. The trunk receives both.
    pub fn apply_update(
        &mut self,
        theta_dir: &Gradient,
        omega_dir: &Gradient,
        lr_pi: f64,
        lr_v: f64,
        opt: &mut Optimizers,
    ) -> Result<()> {
        if theta_dir.len() != self.theta_len() || omega_dir.len() != self.omega_len() {
            return Err(Error::Shape("update direction does not match parameters".into()));
        }
        let n = self.trunk_len();
        let theta = theta_dir.split(&[n, self.policy_head.num_params()]);
        let omega = omega_dir.split(&[n, self.value_head.num_params()]);
        let mut trunk = Gradient::zeros(n);
        trunk.add_scaled(&theta[0], -lr_pi);
        trunk.add_scaled(&omega[0], -lr_v);
        let mut policy = theta[1].clone();
        policy.scale(-1.0);
        let mut value = omega[1].clone();
        value.scale(-1.0);
        if !(trunk.is_finite() && policy.is_finite() && value.is_finite()) {
            return Err(Error::NonFinite("actor-critic update".into()));
        }
        opt.trunk.step(&mut self.trunk, &trunk, 1.0)?;
        opt.policy.step(&mut self.policy_head, &policy, lr_pi)?;
        opt.value.step(&mut self.value_head, &value, lr_v)?;
        Ok(())
    }

    /// One cross-entropy descent step of the reward head on a final
    /// aggregate. Returns the pre-step loss.
    pub fn reward_head_step(&mut self, aggregate: &[f64], label: usize, lr: f64, opt: &mut Optimizers) -> Result<f64> {
        let (loss, g) = self.reward_head.loss_and_grad(aggregate, label)?;
        opt.reward.step(&mut self.reward_head.net, &g, lr)?;
        Ok(loss)
    }

    pub fn save(&self, dir: &Path, extra: &[(&str, String)]) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, net) in self.named_nets() {
            nn::write_net(&dir.join(format!("{name}.bin")), net)?;
        }
        let mut manifest = String::new();
        let mut push = |k: &str, v: String| manifest.push_str(&format!("{k}={v}\n"));
        push("format", "setpool-checkpoint".into());
        push("version", "1".into());
        push("feature_dim", self.feature_dim().to_string());
        push("interaction", self.interaction().to_string());
        push("trunk_dims", join(&self.trunk.dims()));
        push("reward_head_dims", join(&self.reward_head.net.dims()));
        push("num_classes", self.reward_head.num_classes().to_string());
        push("lambda", self.reward_head.lambda.to_string());
        push("action_floor", ACTION_FLOOR.to_string());
        for (k, v) in extra {
            push(k, v.clone());
        }
        let path = dir.join("manifest.txt");
        std::fs::write(&path, manifest).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<(Self, BTreeMap<String, String>)> {
        let path = dir.join("manifest.txt");
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest = crate::config::parse_key_values(&text)?;
        let bad = |msg: String| Error::Format { path: path.clone(), msg };
        if manifest.get("format").map(String::as_str) != Some("setpool-checkpoint") {
            return Err(bad("not a setpool checkpoint manifest".into()));
        }
        let get = |k: &str| manifest.get(k).cloned().ok_or_else(|| bad(format!("missing `{k}`")));
        let lambda: f64 = get("lambda")?.parse().map_err(|_| bad("bad lambda".into()))?;
        let read = |name: &str| nn::read_net(&dir.join(format!("{name}.bin")));
        let ac = Self {
            trunk: read("trunk")?,
            policy_head: read("policy_head")?,
            value_head: read("value_head")?,
            avg_trunk: read("avg_trunk")?,
            avg_policy_head: read("avg_policy_head")?,
            reward_head: RewardHead {
                net: read("reward_head")?,
                lambda,
            },
        };
        let mismatch = |what: &str| Error::Mismatch(format!("checkpoint {}: {what}", dir.display()));
        if join(&ac.trunk.dims()) != get("trunk_dims")? || join(&ac.reward_head.net.dims()) != get("reward_head_dims")? {
            return Err(mismatch("network files disagree with manifest"));
        }
        if !(ac.trunk.in_dim() == ac.state_dim() || ac.interaction())
            || ac.policy_head.dims() != [ac.trunk.out_dim(), 2]
            || ac.value_head.dims() != [ac.trunk.out_dim(), 1]
            || !ac.avg_trunk.same_shape(&ac.trunk)
            || !ac.avg_policy_head.same_shape(&ac.policy_head)
        {
            return Err(mismatch("inconsistent network shapes"));
        }
        Ok((ac, manifest))
    }

    fn named_nets(&self) -> [(&'static str, &DenseNet); 6] {
        [
            ("trunk", &self.trunk),
            ("policy_head", &self.policy_head),
            ("value_head", &self.value_head),
            ("avg_trunk", &self.avg_trunk),
            ("avg_policy_head", &self.avg_policy_head),
            ("reward_head", &self.reward_head.net),
        ]
    }
}

fn join(dims: &[usize]) -> String {
    dims.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(",")
}

/// Per-network optimiser state.
#[derive(Debug, Clone)]
pub struct Optimizers {
    pub trunk: Sgd,
    pub policy: Sgd,
    pub value: Sgd,
    pub reward: Sgd,
}

impl Optimizers {
    pub fn new(momentum: f64) -> Self {
        Self {
            trunk: Sgd::new(momentum),
            policy: Sgd::new(momentum),
            value: Sgd::new(momentum),
            reward: Sgd::new(momentum),
        }
    }
}

#[derive(Debug, Clone)]
pub struct A2cGradients {
    /// `sum_t delta_t * grad_theta log pi(u_t | s_t)`
    pub theta: Gradient,
    /// `sum_t delta_t * grad_omega V(s_t)`, the descent direction of `delta^2 / 2`.
    pub omega: Gradient,
    pub td_errors: Vec<f64>,
}

impl ActorCritic {
    /// On-policy advantage actor-critic directions for one trajectory, with
    /// the TD error standing in for the advantage (not differentiated).
    pub fn a2c_gradients(&self, traj: &Trajectory, gamma: f64) -> Result<A2cGradients> {
        let values = self.trajectory_values(traj)?;
        let mut theta = Gradient::zeros(self.theta_len());
        let mut omega = Gradient::zeros(self.omega_len());
        let mut td_errors = Vec::with_capacity(traj.len());
        let last = traj.len() - 1;
        for (t, step) in traj.steps.iter().enumerate() {
            let terminal = t == last && traj.terminal;
            let delta = td_error(step.reward, values[t], values[t + 1], gamma, terminal);
            td_errors.push(delta);
            if delta == 0.0 {
                continue;
            }
            let (_, g_logp) = self.log_prob_grad(&step.state_vec, step.raw_action)?;
            theta.add_scaled(&g_logp, delta);
            let (_, g_v) = self.value_grad(&step.state_vec)?;
            omega.add_scaled(&g_v, delta);
        }
        Ok(A2cGradients { theta, omega, td_errors })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LearnRates {
    pub gamma: f64,
    pub lr_pi: f64,
    pub lr_v: f64,
    pub lr_head: f64,
    pub alpha: f64,
    /// Global-norm cap on each update direction; 0 disables it.
    pub max_grad_norm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateStats {
    pub applied: bool,
    pub mean_abs_td: f64,
    pub head_loss: f64,
}

pub(crate) fn clip_norm(g: &mut Gradient, max_norm: f64) {
    if max_norm > 0.0 {
        let n = g.norm_sq().sqrt();
        if n > max_norm {
            g.scale(max_norm / n);
        }
    }
}

/// Full on-policy step for one freshly collected trajectory: policy and value
/// update, reward-head cross-entropy on the final aggregate, and the
/// average-policy soft update. A non-finite direction skips the parameter
/// update and is reported through `applied = false`.
pub fn a2c_update(p: &mut ActorCritic, traj: &Trajectory, rates: &LearnRates, opt: &mut Optimizers) -> Result<UpdateStats> {
    let mut grads = p.a2c_gradients(traj, rates.gamma)?;
    let mean_abs_td = grads.td_errors.iter().map(|d| d.abs()).sum::<f64>() / traj.len() as f64;
    let applied = grads.theta.is_finite() && grads.omega.is_finite();
    if applied {
        clip_norm(&mut grads.theta, rates.max_grad_norm);
        clip_norm(&mut grads.omega, rates.max_grad_norm);
        p.apply_update(&grads.theta, &grads.omega, rates.lr_pi, rates.lr_v, opt)?;
    }
    let head_loss = p.reward_head_step(&traj.final_aggregate, traj.identity, rates.lr_head, opt)?;
    crate::off_policy::average_policy_update(p, rates.alpha)?;
    Ok(UpdateStats {
        applied,
        mean_abs_td,
        head_loss,
    })
}
