//! Numerical self-checks shared by the `selfcheck` command and the test
//! suite. Each check reports the largest error it observed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::actor_critic::{ActorCritic, ActorCriticConfig, SampleMode};
use crate::data::{gen_synthetic, SyntheticConfig};
use crate::env::{run_episode, Episode, Trajectory};
use crate::error::Result;
use crate::nn::{grad_check, Gradient};
use crate::off_policy::{is_ratios, off_policy_return, policy_grad_off, trust_region_project, value_grad_off};

pub const GRAD_TOL: f64 = 1e-4;
pub const EXACT_TOL: f64 = 1e-10;
pub const TELESCOPE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, Default)]
pub struct SelfCheckOptions {
    /// Test hook: perturb every analytic gradient before comparing.
    pub corrupt_backward: bool,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub max_error: f64,
    pub tolerance: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.max_error <= self.tolerance
    }
}

fn result(name: &'static str, max_error: f64, tolerance: f64) -> CheckResult {
    // NaN errors must fail.
    let max_error = if max_error.is_nan() { f64::INFINITY } else { max_error };
    CheckResult { name, max_error, tolerance }
}

fn randomize(net: &mut crate::nn::DenseNet, rng: &mut ChaCha8Rng, scale: f64) -> Result<()> {
    let p: Vec<f64> = (0..net.num_params()).map(|_| rng.random_range(-scale..scale)).collect();
    net.set_params(&p)
}

/// Small model with every head populated, and an average policy that differs
/// from the current one.
pub fn random_model(rng: &mut ChaCha8Rng, interaction: bool) -> Result<ActorCritic> {
    let cfg = ActorCriticConfig {
        feature_dim: 4,
        trunk_widths: vec![6, 5],
        head_hidden: vec![3],
        num_classes: 3,
        lambda: 0.1,
        interaction,
    };
    let mut p = ActorCritic::new(&cfg, rng)?;
    randomize(&mut p.policy_head, rng, 0.5)?;
    randomize(&mut p.value_head, rng, 0.5)?;
    randomize(&mut p.avg_trunk, rng, 0.5)?;
    randomize(&mut p.avg_policy_head, rng, 0.5)?;
    Ok(p)
}

fn random_state(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn corrupt(g: &mut [f64], on: bool) {
    if on {
        g.iter_mut().for_each(|v| *v = *v * 1.05 + 1e-3);
    }
}

fn sample_trajectory(p: &ActorCritic, rng: &mut ChaCha8Rng) -> Result<Trajectory> {
    let ds = gen_synthetic(
        &SyntheticConfig {
            num_identities: 3,
            sets_per_identity: 1,
            set_size_min: 2,
            set_size_max: 5,
            dim: p.feature_dim(),
            ..Default::default()
        },
        rng.random(),
    )?;
    let set = &ds.sets[rng.random_range(0..ds.sets.len())];
    run_episode(set, p, &p.reward_head, SampleMode::Stochastic, rng)
}

/// Policy surrogate `sum_t c_t log pi(u_t | s_t)` with fixed coefficients.
fn check_policy(opts: SelfCheckOptions, rng: &mut ChaCha8Rng) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for trial in 0..6 {
        let p = random_model(rng, trial % 2 == 0)?;
        let steps: Vec<(Vec<f64>, f64, f64)> = (0..3)
            .map(|_| (random_state(rng, p.state_dim()), rng.random_range(-2.0..2.0), rng.random_range(-1.0..1.0)))
            .collect();
        let mut analytic = Gradient::zeros(p.theta_len());
        for (s, u, c) in &steps {
            analytic.add_scaled(&p.log_prob_grad(s, *u)?.1, *c);
        }
        corrupt(&mut analytic.0, opts.corrupt_backward);
        let f = |theta: &[f64]| {
            let mut q = p.clone();
            q.set_theta(theta).expect("theta length");
            steps.iter().map(|(s, u, c)| c * q.log_prob_grad(s, *u).expect("state").0).sum()
        };
        worst = worst.max(grad_check(f, &p.theta(), &analytic.0, 1e-6)?.max_rel_err);
    }
    Ok(worst)
}

/// Replay value objective `-1/2 sum_t w_t (R_t - V(s_t))^2`, whose ascent
/// direction is the off-policy value gradient.
fn check_value(opts: SelfCheckOptions, rng: &mut ChaCha8Rng) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for trial in 0..6 {
        let p = random_model(rng, trial % 2 == 1)?;
        let traj = sample_trajectory(&p, rng)?;
        let rho: Vec<f64> = (0..traj.len()).map(|_| rng.random_range(0.2..2.0)).collect();
        let gamma = 0.9;
        let mut analytic = value_grad_off(&traj, &rho, &p, gamma)?;
        corrupt(&mut analytic.0, opts.corrupt_backward);
        let returns = off_policy_return(&traj.rewards(), &rho, gamma)?;
        let omega: Vec<f64> = p.trunk.params().into_iter().chain(p.value_head.params()).collect();
        let f = |w: &[f64]| {
            let mut q = p.clone();
            q.set_omega(w).expect("omega length");
            let mut weight = 1.0;
            let mut total = 0.0;
            for (t, step) in traj.steps.iter().enumerate() {
                weight *= rho[t];
                let v = q.value_forward(&step.state_vec).expect("state");
                total -= 0.5 * weight * (returns[t] - v).powi(2);
            }
            total
        };
        worst = worst.max(grad_check(f, &omega, &analytic.0, 1e-6)?.max_rel_err);
    }
    Ok(worst)
}

fn check_reward_head(opts: SelfCheckOptions, rng: &mut ChaCha8Rng) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for _ in 0..6 {
        let p = random_model(rng, false)?;
        let head = &p.reward_head;
        let x = random_state(rng, p.feature_dim());
        let label = rng.random_range(0..head.num_classes());
        let (_, mut g) = head.loss_and_grad(&x, label)?;
        corrupt(&mut g.0, opts.corrupt_backward);
        let f = |w: &[f64]| {
            let mut h = head.clone();
            h.net.set_params(w).expect("head length");
            h.loss(&x, label).expect("input")
        };
        worst = worst.max(grad_check(f, &head.net.params(), &g.0, 1e-6)?.max_rel_err);
    }
    Ok(worst)
}

fn check_kl(opts: SelfCheckOptions, rng: &mut ChaCha8Rng) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for trial in 0..6 {
        let p = random_model(rng, trial % 2 == 0)?;
        let states: Vec<Vec<f64>> = (0..4).map(|_| random_state(rng, p.state_dim())).collect();
        let (_, mut g) = crate::off_policy::kl_grad(&p, &states)?;
        corrupt(&mut g.0, opts.corrupt_backward);
        let f = |theta: &[f64]| {
            let mut q = p.clone();
            q.set_theta(theta).expect("theta length");
            crate::off_policy::kl_grad(&q, &states).expect("states").0
        };
        worst = worst.max(grad_check(f, &p.theta(), &g.0, 1e-6)?.max_rel_err);
    }
    Ok(worst)
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    if a.len() != b.len() {
        return f64::INFINITY;
    }
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Discounted returns `G_t = sum_k gamma^k r_{t+k}`, summed forward.
pub fn discounted_returns(rewards: &[f64], gamma: f64) -> Vec<f64> {
    (0..rewards.len())
        .map(|t| rewards[t..].iter().enumerate().map(|(k, r)| gamma.powi(k as i32) * r).sum())
        .collect()
}

/// With behaviour equal to target, replay returns and the replay policy
/// gradient reduce to their on-policy counterparts. Also covers the
/// hand-unrolled three-step return.
fn check_estimators(rng: &mut ChaCha8Rng) -> Result<f64> {
    let hand = off_policy_return(&[1.0, 1.0, 1.0], &[7.0, 2.0, 0.5], 0.9)?;
    let mut worst = if hand == [3.61, 1.45, 1.0] { 0.0 } else { f64::INFINITY };
    for trial in 0..10 {
        let p = random_model(rng, trial % 2 == 0)?;
        let traj = sample_trajectory(&p, rng)?;
        for clip in [1.0, 10.0, f64::INFINITY] {
            let rho = is_ratios(&traj, &p, clip)?;
            worst = worst.max(max_abs_diff(&rho, &vec![1.0; rho.len()]));
            let gamma = 0.9;
            let r = off_policy_return(&traj.rewards(), &rho, gamma)?;
            worst = worst.max(max_abs_diff(&r, &discounted_returns(&traj.rewards(), gamma)));
            let off = policy_grad_off(&traj, &rho, &p, gamma)?;
            let on = p.a2c_gradients(&traj, gamma)?.theta;
            worst = worst.max(max_abs_diff(&off.0, &on.0));
        }
    }
    Ok(worst)
}

/// Projection of `dtheta` onto `k^T z <= xi` by bisection on the multiplier.
/// Independent of the closed form.
pub fn project_oracle(dtheta: &[f64], k: &[f64], xi: f64) -> Vec<f64> {
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let at = |lam: f64| -> Vec<f64> { dtheta.iter().zip(k).map(|(d, kk)| d - lam * kk).collect() };
    if dot(k, dtheta) <= xi {
        return dtheta.to_vec();
    }
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    while dot(k, &at(hi)) > xi {
        hi *= 2.0;
    }
    for _ in 0..2000 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if dot(k, &at(mid)) > xi {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    at(hi)
}

/// Returns the worst disagreement with the oracle, constraint excess, and
/// identity error in the inactive case, whichever is largest.
pub fn check_projection(rng: &mut ChaCha8Rng, trials: usize, dim: usize) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let d = Gradient((0..dim).map(|_| rng.random_range(-1.0..1.0)).collect());
        let k = Gradient((0..dim).map(|_| rng.random_range(-1.0..1.0)).collect());
        let xi = rng.random_range(0.01..2.0);
        let z = trust_region_project(&d, &k, xi)?;
        worst = worst.max(max_abs_diff(&z.0, &project_oracle(&d.0, &k.0, xi)));
        worst = worst.max(k.dot(&z) - xi);
        if k.dot(&d) <= xi && z != d {
            worst = f64::INFINITY;
        }
    }
    Ok(worst)
}

/// Sum of loss-difference rewards against initial minus final loss.
fn check_telescoping(rng: &mut ChaCha8Rng) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let p = random_model(rng, false)?;
        let ds = gen_synthetic(
            &SyntheticConfig {
                num_identities: 3,
                sets_per_identity: 2,
                set_size_min: 1,
                set_size_max: 8,
                dim: p.feature_dim(),
                ..Default::default()
            },
            rng.random(),
        )?;
        for set in &ds.sets {
            let order: Vec<usize> = (0..set.len()).collect();
            let mut ep = Episode::new(set, set.identity, order, &p.reward_head)?;
            let mut sum = 0.0;
            while !ep.is_terminal() {
                sum += ep.step(&p.reward_head, rng.random_range(0.0..3.0))?.loss_delta;
            }
            worst = worst.max((sum - (ep.initial_loss() - ep.current_loss())).abs());
        }
    }
    Ok(worst)
}

pub fn run_all(opts: SelfCheckOptions) -> Result<Vec<CheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    Ok(vec![
        result("grad_policy_surrogate", check_policy(opts, &mut rng)?, GRAD_TOL),
        result("grad_value_loss", check_value(opts, &mut rng)?, GRAD_TOL),
        result("grad_reward_head_xent", check_reward_head(opts, &mut rng)?, GRAD_TOL),
        result("grad_kl", check_kl(opts, &mut rng)?, GRAD_TOL),
        result("estimator_reduction", check_estimators(&mut rng)?, EXACT_TOL),
        result("trust_region_projection", check_projection(&mut rng, 200, 20)?, EXACT_TOL),
        result("reward_telescoping", check_telescoping(&mut rng)?, TELESCOPE_TOL),
    ])
}
