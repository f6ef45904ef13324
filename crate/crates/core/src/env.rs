//! Sequential attention over a feature set as a Markov decision process.
//!
//! Every member starts at weight 1. At step `t` the agent sees the current
//! member concatenated with the weighted mean of all the others, and assigns
//! the current member a positive weight. The reward is the drop in the reward
//! head's cross-entropy caused by that assignment plus a hinge bonus
//! `lambda * max(0, 1 - a)` for down-weighting. The episode terminates once
//! every member has been visited.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::actor_critic::{sample_action, ActorCritic, SampleMode};
use crate::data::FeatureSet;
use crate::error::{Error, Result};
use crate::nn::{softmax_xent, Activation, DenseNet, Gradient};

/// Rescales weights by their maximum, so equal weights become exactly 1.
pub(crate) fn relative_weights(weights: &[f64]) -> Vec<f64> {
    let max = weights.iter().copied().fold(f64::MIN, f64::max);
    weights.iter().map(|w| w / max).collect()
}

/// Weighted average `sum(a_i f_i) / sum(a_i)`.
///
/// Weights are first divided by their maximum, which leaves the result
/// unchanged mathematically and makes uniform weights reproduce the plain
/// mean bit for bit.
pub fn aggregate<F: AsRef<[f64]>>(features: &[F], weights: &[f64]) -> Result<Vec<f64>> {
    if features.is_empty() {
        return Err(Error::Input("cannot aggregate an empty set".into()));
    }
    if features.len() != weights.len() {
        return Err(Error::Shape(format!(
            "{} features but {} weights",
            features.len(),
            weights.len()
        )));
    }
    if let Some(w) = weights.iter().find(|w| !(**w > 0.0 && w.is_finite())) {
        return Err(Error::Input(format!("aggregation weights must be positive, got {w}")));
    }
    let dim = features[0].as_ref().len();
    let rel = relative_weights(weights);
    let mut acc = vec![0.0; dim];
    let mut total = 0.0;
    for (f, &w) in features.iter().zip(&rel) {
        let f = f.as_ref();
        if f.len() != dim {
            return Err(Error::Shape(format!("feature of length {} in a set of dim {dim}", f.len())));
        }
        for (a, x) in acc.iter_mut().zip(f) {
            *a += w * x;
        }
        total += w;
    }
    acc.iter_mut().for_each(|a| *a /= total);
    Ok(acc)
}

/// State vector for visiting member `t`: the weighted mean of every other
/// member, followed by `f_t`. A singleton set has a zero first half.
pub fn build_state<F: AsRef<[f64]>>(features: &[F], weights: &[f64], t: usize) -> Result<Vec<f64>> {
    if t >= features.len() || features.len() != weights.len() {
        return Err(Error::Shape(format!(
            "step {t} for {} features and {} weights",
            features.len(),
            weights.len()
        )));
    }
    if weights[t] != 1.0 {
        return Err(Error::Usage(format!(
            "member {t} was already re-weighted (weight {})",
            weights[t]
        )));
    }
    let current = features[t].as_ref();
    let mut state = if features.len() == 1 {
        vec![0.0; current.len()]
    } else {
        let others: Vec<&[f64]> = features
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != t)
            .map(|(_, f)| f.as_ref())
            .collect();
        let w: Vec<f64> = weights
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != t)
            .map(|(_, &w)| w)
            .collect();
        aggregate(&others, &w)?
    };
    state.extend_from_slice(current);
    Ok(state)
}

/// Classifier `h` over aggregated features, used only to score episodes.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardHead {
    pub net: DenseNet,
    pub lambda: f64,
}

impl RewardHead {
    pub fn new<R: Rng + ?Sized>(
        dim: usize,
        hidden: &[usize],
        num_classes: usize,
        lambda: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let mut dims = vec![dim];
        dims.extend_from_slice(hidden);
        dims.push(num_classes);
        let mut acts = vec![Activation::Tanh; hidden.len()];
        acts.push(Activation::Identity);
        Ok(Self {
            net: DenseNet::new(&dims, &acts, rng)?,
            lambda,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.net.out_dim()
    }

    pub fn loss(&self, aggregated: &[f64], label: usize) -> Result<f64> {
        let logits = self.net.predict(aggregated)?;
        Ok(softmax_xent(&logits, label)?.0)
    }

    /// Cross-entropy and its gradient with respect to the head parameters.
    pub fn loss_and_grad(&self, aggregated: &[f64], label: usize) -> Result<(f64, Gradient)> {
        let (logits, tape) = self.net.forward(aggregated)?;
        let (loss, dlogits) = softmax_xent(&logits, label)?;
        let (g, _) = self.net.backward(&tape, &dlogits)?;
        Ok((loss, g))
    }

    pub fn hinge(&self, action: f64) -> f64 {
        self.lambda * (1.0 - action).max(0.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeState {
    /// Current weight of every member, indexed by member (not by visit).
    pub weights: Vec<f64>,
    /// Number of members already visited; the next one is `order[step]`.
    pub step: usize,
    pub order: Vec<usize>,
    pub state_vec: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReward {
    pub loss_delta: f64,
    pub hinge: f64,
}

impl StepReward {
    pub fn total(&self) -> f64 {
        self.loss_delta + self.hinge
    }
}

/// One pass over a set. The reward head is read at every step but must not
/// change while the episode is running.
#[derive(Debug, Clone)]
pub struct Episode<'a> {
    features: Vec<&'a [f64]>,
    label: usize,
    state: EpisodeState,
    initial_loss: f64,
    current_loss: f64,
    terminal: bool,
}

impl<'a> Episode<'a> {
    pub fn new(set: &'a FeatureSet, label: usize, order: Vec<usize>, head: &RewardHead) -> Result<Self> {
        let n = set.len();
        if n == 0 {
            return Err(Error::Input(format!("set `{}` is empty", set.set_id)));
        }
        let mut seen = vec![false; n];
        if order.len() != n || !order.iter().all(|&i| i < n && !std::mem::replace(&mut seen[i], true)) {
            return Err(Error::Input(format!("traversal order is not a permutation of 0..{n}")));
        }
        if label >= head.num_classes() {
            return Err(Error::Input(format!(
                "label {label} outside the reward head's {} classes",
                head.num_classes()
            )));
        }
        let features = set.features();
        let weights = vec![1.0; n];
        let initial_loss = head.loss(&aggregate(&features, &weights)?, label)?;
        let state_vec = build_state(&features, &weights, order[0])?;
        Ok(Self {
            features,
            label,
            state: EpisodeState {
                weights,
                step: 0,
                order,
                state_vec,
            },
            initial_loss,
            current_loss: initial_loss,
            terminal: false,
        })
    }

    pub fn state(&self) -> &EpisodeState {
        &self.state
    }

    pub fn is_terminal(&self) -> bool {
        self.terminal
    }

    pub fn initial_loss(&self) -> f64 {
        self.initial_loss
    }

    pub fn current_loss(&self) -> f64 {
        self.current_loss
    }

    pub fn aggregate(&self) -> Result<Vec<f64>> {
        aggregate(&self.features, &self.state.weights)
    }

    /// Assigns `action` to the current member and advances.
    pub fn step(&mut self, head: &RewardHead, action: f64) -> Result<StepReward> {
        if self.terminal {
            return Err(Error::Usage("episode already terminated".into()));
        }
        if !(action > 0.0 && action.is_finite()) {
            self.terminal = true;
            return Err(Error::Input(format!(
                "action must be positive and finite, got {action}; episode aborted"
            )));
        }
        let member = self.state.order[self.state.step];
        self.state.weights[member] = action;
        let next_loss = head.loss(&self.aggregate()?, self.label)?;
        let reward = StepReward {
            loss_delta: self.current_loss - next_loss,
            hinge: head.hinge(action),
        };
        self.current_loss = next_loss;
        self.state.step += 1;
        if self.state.step == self.features.len() {
            self.terminal = true;
        } else {
            let next = self.state.order[self.state.step];
            self.state.state_vec = build_state(&self.features, &self.state.weights, next)?;
        }
        Ok(reward)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryStep {
    pub state_vec: Vec<f64>,
    pub raw_action: f64,
    pub weight: f64,
    pub behavior_logdensity: f64,
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub set_id: String,
    pub identity: usize,
    pub order: Vec<usize>,
    pub steps: Vec<TrajectoryStep>,
    pub terminal: bool,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub final_weights: Vec<f64>,
    pub final_aggregate: Vec<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn rewards(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.reward).collect()
    }
}

/// Runs one full episode. Stochastic mode shuffles the traversal order and
/// samples actions; deterministic mode keeps the given order and uses the
/// policy mean.
pub fn run_episode<R: Rng + ?Sized>(
    set: &FeatureSet,
    policy: &ActorCritic,
    head: &RewardHead,
    mode: SampleMode,
    rng: &mut R,
) -> Result<Trajectory> {
    let mut order: Vec<usize> = (0..set.len()).collect();
    if mode == SampleMode::Stochastic {
        order.shuffle(rng);
    }
    run_episode_ordered(set, policy, head, mode, order, rng)
}

pub fn run_episode_ordered<R: Rng + ?Sized>(
    set: &FeatureSet,
    policy: &ActorCritic,
    head: &RewardHead,
    mode: SampleMode,
    order: Vec<usize>,
    rng: &mut R,
) -> Result<Trajectory> {
    if policy.state_dim() != 2 * set.dim() {
        return Err(Error::Shape(format!(
            "policy takes states of length {}, set `{}` has dim {}",
            policy.state_dim(),
            set.set_id,
            set.dim()
        )));
    }
    let mut episode = Episode::new(set, set.identity, order.clone(), head)?;
    let mut steps = Vec::with_capacity(set.len());
    while !episode.is_terminal() {
        let state_vec = episode.state().state_vec.clone();
        let (mean, log_std) = policy.policy_forward(&state_vec)?;
        let sample = sample_action(mean, log_std, rng, mode);
        let reward = episode.step(head, sample.weight)?;
        steps.push(TrajectoryStep {
            state_vec,
            raw_action: sample.raw,
            weight: sample.weight,
            behavior_logdensity: sample.logdensity,
            reward: reward.total(),
        });
    }
    Ok(Trajectory {
        set_id: set.set_id.clone(),
        identity: set.identity,
        order,
        steps,
        terminal: true,
        initial_loss: episode.initial_loss(),
        final_loss: episode.current_loss(),
        final_aggregate: episode.aggregate()?,
        final_weights: episode.state.weights,
    })
}

/// Deterministic weights for `set` in its given order, and the resulting
/// aggregate. Needs no reward head.
pub fn infer_weights(set: &FeatureSet, policy: &ActorCritic) -> Result<(Vec<f64>, Vec<f64>)> {
    if policy.state_dim() != 2 * set.dim() {
        return Err(Error::Shape(format!(
            "policy takes states of length {}, set `{}` has dim {}",
            policy.state_dim(),
            set.set_id,
            set.dim()
        )));
    }
    let features = set.features();
    let mut weights = vec![1.0; set.len()];
    for t in 0..set.len() {
        let state = build_state(&features, &weights, t)?;
        let (mean, _) = policy.policy_forward(&state)?;
        weights[t] = crate::actor_critic::action_weight(mean);
    }
    let agg = aggregate(&features, &weights)?;
    Ok((weights, agg))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::actor_critic::{ActorCriticConfig, ACTION_FLOOR};
    use crate::data::{gen_synthetic, Member, SyntheticConfig};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn set_of(features: Vec<Vec<f64>>) -> FeatureSet {
        FeatureSet {
            set_id: "s".into(),
            identity: 0,
            members: features
                .into_iter()
                .map(|feature| Member {
                    feature,
                    yaw: 0.0,
                    quality: None,
                })
                .collect(),
        }
    }

    fn model(dim: usize, classes: usize, seed: u64) -> (ActorCritic, RewardHead) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = ActorCriticConfig {
            feature_dim: dim,
            trunk_widths: vec![8],
            head_hidden: vec![],
            num_classes: classes,
            lambda: 0.1,
            interaction: false,
        };
        let ac = ActorCritic::new(&cfg, &mut rng).unwrap();
        let head = ac.reward_head.clone();
        (ac, head)
    }

    /// Randomise the policy head so actions vary across states.
    fn perturbed(mut ac: ActorCritic, seed: u64) -> ActorCritic {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = ac.policy_head.num_params();
        let p: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        ac.policy_head.set_params(&p).unwrap();
        ac
    }

    #[test]
    fn equal_weights_give_mean() {
        let f = vec![vec![1.0, 2.0], vec![3.0, 6.0], vec![5.0, 1.0]];
        assert_eq!(aggregate(&f, &[0.7, 0.7, 0.7]).unwrap(), vec![3.0, 3.0]);
    }

    #[test]
    fn weighted_basis_vectors() {
        let f = vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]];
        let g = aggregate(&f, &[2.0, 1.0]).unwrap();
        assert!((g[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((g[1] - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(g[2], 0.0);
    }

    #[test]
    fn aggregate_rejects_bad_input() {
        let empty: Vec<Vec<f64>> = vec![];
        assert!(aggregate(&empty, &[]).is_err());
        assert!(aggregate(&[vec![1.0]], &[0.0]).is_err());
        assert!(aggregate(&[vec![1.0]], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn aggregate_stays_in_convex_hull() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let n = rng.random_range(1..8);
            let d = rng.random_range(1..5);
            let f: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.random_range(-3.0..3.0)).collect()).collect();
            let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.001..5.0)).collect();
            let g = aggregate(&f, &w).unwrap();
            let total: f64 = w.iter().sum();
            for k in 0..d {
                let expect: f64 = f.iter().zip(&w).map(|(fi, wi)| wi / total * fi[k]).sum();
                assert!((g[k] - expect).abs() < 1e-12);
                let lo = f.iter().map(|fi| fi[k]).fold(f64::INFINITY, f64::min);
                let hi = f.iter().map(|fi| fi[k]).fold(f64::NEG_INFINITY, f64::max);
                assert!(g[k] >= lo - 1e-12 && g[k] <= hi + 1e-12);
            }
        }
    }

    #[test]
    fn state_for_pair_is_other_then_self() {
        let f = vec![vec![1.0, 2.0], vec![3.0, 4.0]];
        assert_eq!(build_state(&f, &[1.0, 1.0], 0).unwrap(), vec![3.0, 4.0, 1.0, 2.0]);
    }

    #[test]
    fn state_for_triple_averages_the_rest() {
        let f = vec![vec![1.0, 0.0], vec![5.0, 5.0], vec![3.0, 2.0]];
        assert_eq!(build_state(&f, &[1.0, 1.0, 1.0], 1).unwrap(), vec![2.0, 1.0, 5.0, 5.0]);
        // (2 f1 + f3) / 3
        let s = build_state(&f, &[2.0, 1.0, 1.0], 1).unwrap();
        let expect = [5.0 / 3.0, 2.0 / 3.0, 5.0, 5.0];
        for (a, b) in s.iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn state_matches_literal_subtraction_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..50 {
            let n = rng.random_range(2..9);
            let f: Vec<Vec<f64>> = (0..n).map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
            let t = rng.random_range(0..n);
            let mut w: Vec<f64> = (0..n).map(|_| rng.random_range(0.2..3.0)).collect();
            w[t] = 1.0;
            let s = build_state(&f, &w, t).unwrap();
            let total: f64 = w.iter().sum();
            for k in 0..4 {
                let num: f64 = f.iter().zip(&w).map(|(fi, wi)| wi * fi[k]).sum::<f64>() - f[t][k];
                assert!((s[k] - num / (total - 1.0)).abs() < 1e-12);
                assert_eq!(s[4 + k], f[t][k]);
            }
        }
    }

    #[test]
    fn singleton_state_has_zero_context() {
        assert_eq!(build_state(&[vec![0.5, -0.5]], &[1.0], 0).unwrap(), vec![0.0, 0.0, 0.5, -0.5]);
    }

    #[test]
    fn reweighted_member_cannot_be_state_focus() {
        let f = vec![vec![1.0], vec![2.0]];
        assert!(matches!(build_state(&f, &[0.5, 1.0], 0), Err(Error::Usage(_))));
    }

    #[test]
    fn unit_action_is_a_no_op() {
        let (_, head) = model(3, 4, 1);
        let set = set_of(vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]]);
        let mut ep = Episode::new(&set, 2, vec![1, 0, 2], &head).unwrap();
        let r = ep.step(&head, 1.0).unwrap();
        assert_eq!(r.loss_delta, 0.0);
        assert_eq!(r.hinge, 0.0);
        assert_eq!(r.total(), 0.0);
        assert_eq!(ep.state().weights, vec![1.0, 1.0, 1.0]);
        assert_eq!(ep.state().step, 1);
    }

    #[test]
    fn hinge_contribution() {
        let (_, mut head) = model(2, 2, 1);
        head.lambda = 0.1;
        let set = set_of(vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        let mut ep = Episode::new(&set, 0, vec![0, 1], &head).unwrap();
        let before = ep.current_loss();
        let r = ep.step(&head, 0.5).unwrap();
        assert!((r.hinge - 0.05).abs() < 1e-15);
        let after = head.loss(&aggregate(&set.features(), &[0.5, 1.0]).unwrap(), 0).unwrap();
        assert_eq!(r.loss_delta, before - after);
    }

    #[test]
    fn bad_actions_abort_the_episode() {
        let (_, head) = model(2, 2, 1);
        let set = set_of(vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        for bad in [0.0, -1.0, f64::NAN, f64::INFINITY] {
            let mut ep = Episode::new(&set, 0, vec![0, 1], &head).unwrap();
            assert!(ep.step(&head, bad).is_err());
            assert!(ep.is_terminal());
            assert!(ep.step(&head, 1.0).is_err());
        }
    }

    #[test]
    fn episode_rejects_bad_order_and_label() {
        let (_, head) = model(2, 2, 1);
        let set = set_of(vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        assert!(Episode::new(&set, 0, vec![0, 0], &head).is_err());
        assert!(Episode::new(&set, 0, vec![0], &head).is_err());
        assert!(Episode::new(&set, 5, vec![0, 1], &head).is_err());
    }

    #[test]
    fn singleton_deterministic_episode() {
        let (ac, head) = model(2, 2, 3);
        let set = set_of(vec![vec![0.6, 0.8]]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let traj = run_episode(&set, &ac, &head, SampleMode::Deterministic, &mut rng).unwrap();
        assert_eq!(traj.len(), 1);
        assert!(traj.terminal);
        assert!((traj.final_weights[0] - (std::f64::consts::LN_2 + ACTION_FLOOR)).abs() < 1e-15);
    }

    #[test]
    fn fixed_seed_gives_identical_trajectories() {
        let ds = gen_synthetic(&SyntheticConfig { num_identities: 3, dim: 6, ..Default::default() }, 2).unwrap();
        let (ac, head) = model(6, 3, 4);
        let ac = perturbed(ac, 9);
        let run = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            run_episode(&ds.sets[0], &ac, &head, SampleMode::Stochastic, &mut rng).unwrap()
        };
        assert_eq!(run(5), run(5));
    }

    #[test]
    fn uniform_policy_gives_mean_pooling() {
        let ds = gen_synthetic(&SyntheticConfig { num_identities: 4, dim: 5, ..Default::default() }, 8).unwrap();
        let (ac, _) = model(5, 4, 4);
        for set in &ds.sets {
            let (w, agg) = infer_weights(set, &ac).unwrap();
            assert!(w.windows(2).all(|p| p[0] == p[1]));
            let mean = aggregate(&set.features(), &vec![1.0; set.len()]).unwrap();
            assert_eq!(agg, mean);
        }
    }

    #[test]
    fn swapping_identical_members_keeps_aggregate() {
        let (ac, _) = model(3, 2, 4);
        let ac = perturbed(ac, 1);
        let dup = vec![0.2, -0.4, 0.9];
        let a = set_of(vec![dup.clone(), vec![1.0, 0.0, 0.0], dup.clone(), vec![0.0, 0.5, 0.5]]);
        let mut b = a.clone();
        b.members.swap(0, 2);
        assert_eq!(infer_weights(&a, &ac).unwrap().1, infer_weights(&b, &ac).unwrap().1);
    }

    #[test]
    fn constant_unit_policy_without_hinge_earns_nothing() {
        let (_, mut head) = model(4, 3, 2);
        head.lambda = 0.0;
        let ds = gen_synthetic(&SyntheticConfig { num_identities: 3, dim: 4, ..Default::default() }, 1).unwrap();
        for set in &ds.sets {
            let mut ep = Episode::new(set, set.identity, (0..set.len()).collect(), &head).unwrap();
            let mut total = 0.0;
            while !ep.is_terminal() {
                total += ep.step(&head, 1.0).unwrap().total();
            }
            assert_eq!(total, 0.0);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]

        #[test]
        fn episode_invariants(seed in any::<u64>(), policy_seed in 0u64..1000) {
            let cfg = SyntheticConfig { num_identities: 3, sets_per_identity: 1, set_size_min: 1, set_size_max: 9, dim: 4, ..Default::default() };
            let ds = gen_synthetic(&cfg, seed).unwrap();
            let (ac, head) = model(4, 3, policy_seed);
            let ac = perturbed(ac, policy_seed + 1);
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
            for set in &ds.sets {
                let traj = run_episode(set, &ac, &head, SampleMode::Stochastic, &mut rng).unwrap();
                prop_assert_eq!(traj.len(), set.len());
                prop_assert!(traj.final_weights.iter().all(|&w| w > 0.0));

                // Loss terms telescope to initial minus final loss.
                let sum: f64 = traj.steps.iter().map(|s| s.reward - head.hinge(s.weight)).sum();
                prop_assert!((sum - (traj.initial_loss - traj.final_loss)).abs() <= 1e-9);

                // Stored states are recomputable from the weights at that step.
                let features = set.features();
                let mut w = vec![1.0; set.len()];
                for (k, step) in traj.steps.iter().enumerate() {
                    let member = traj.order[k];
                    let s = build_state(&features, &w, member).unwrap();
                    for (a, b) in s.iter().zip(&step.state_vec) {
                        prop_assert!((a - b).abs() <= 1e-12);
                    }
                    w[member] = step.weight;
                }
                prop_assert_eq!(&w, &traj.final_weights);
            }
        }
    }
}
