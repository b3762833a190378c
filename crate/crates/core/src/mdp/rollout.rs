use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::Env;
use crate::error::{Error, Result};
use crate::nn::Policy;
use crate::space::{Action, ActionBatch, State};

/// `M` rollouts of exactly `T` steps each, stored rollout-major: sample
/// `j·T + t` is step `t` of rollout `j`.
///
/// A rollout that finishes an episode early resets the environment and keeps
/// going; `dones` marks the last step of every episode, including episodes
/// cut by the environment's horizon cap.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutBatch {
    pub n_rollouts: usize,
    pub horizon: usize,
    pub states: Vec<State>,
    /// Network features of `states`, one row per sample.
    pub obs: Array2<f64>,
    pub actions: ActionBatch,
    pub rewards: Vec<f64>,
    pub next_states: Vec<State>,
    pub next_obs: Array2<f64>,
    pub log_probs: Vec<f64>,
    pub dones: Vec<bool>,
    /// Set where the episode entered a terminal state (not a time limit).
    pub terminated: Vec<bool>,
    /// State the sampling chain moves to after each step: the fresh initial
    /// state after a termination, `next_states` otherwise.
    pub continuation_obs: Array2<f64>,
    /// `s_1` of each rollout.
    pub initial_states: Vec<State>,
    pub initial_obs: Array2<f64>,
    /// Undiscounted returns of the episodes that finished inside the batch.
    pub episode_returns: Vec<f64>,
    /// Undiscounted return so far of each rollout's unfinished last episode.
    pub partial_returns: Vec<f64>,
}

struct Rollout {
    states: Vec<State>,
    actions: Vec<Action>,
    rewards: Vec<f64>,
    next_states: Vec<State>,
    log_probs: Vec<f64>,
    dones: Vec<bool>,
    terminated: Vec<bool>,
    continuations: Vec<State>,
    initial: State,
    episode_returns: Vec<f64>,
    partial_return: f64,
}

impl RolloutBatch {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    /// Rollout that sample `i` belongs to.
    pub fn rollout_of(&self, i: usize) -> usize {
        i / self.horizon
    }

    /// Largest gap between the stored behavior log-probs and the ones
    /// `policy` assigns now.
    pub fn max_log_prob_gap(&self, policy: &Policy) -> Result<f64> {
        let now = policy.log_probs(&self.obs, &self.actions)?;
        Ok(now
            .iter()
            .zip(&self.log_probs)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    /// Mean undiscounted return of completed episodes, or of the partial
    /// episodes when none finished.
    pub fn mean_episode_return(&self) -> f64 {
        let src = if self.episode_returns.is_empty() {
            &self.partial_returns
        } else {
            &self.episode_returns
        };
        src.iter().sum::<f64>() / src.len().max(1) as f64
    }

    fn assemble(env: &Env, policy: &Policy, horizon: usize, rollouts: Vec<Rollout>) -> Result<Self> {
        let n_rollouts = rollouts.len();
        let mut batch = RolloutBatch {
            n_rollouts,
            horizon,
            states: Vec::with_capacity(n_rollouts * horizon),
            obs: Array2::zeros((0, 0)),
            actions: ActionBatch::Discrete(Vec::new()),
            rewards: Vec::with_capacity(n_rollouts * horizon),
            next_states: Vec::with_capacity(n_rollouts * horizon),
            next_obs: Array2::zeros((0, 0)),
            log_probs: Vec::with_capacity(n_rollouts * horizon),
            dones: Vec::with_capacity(n_rollouts * horizon),
            terminated: Vec::with_capacity(n_rollouts * horizon),
            continuation_obs: Array2::zeros((0, 0)),
            initial_states: Vec::with_capacity(n_rollouts),
            initial_obs: Array2::zeros((0, 0)),
            episode_returns: Vec::new(),
            partial_returns: Vec::with_capacity(n_rollouts),
        };
        let mut actions = Vec::with_capacity(n_rollouts * horizon);
        let mut continuations = Vec::with_capacity(n_rollouts * horizon);
        for r in rollouts {
            batch.states.extend(r.states);
            actions.extend(r.actions);
            batch.rewards.extend(r.rewards);
            batch.next_states.extend(r.next_states);
            batch.log_probs.extend(r.log_probs);
            batch.dones.extend(r.dones);
            batch.terminated.extend(r.terminated);
            continuations.extend(r.continuations);
            batch.initial_states.push(r.initial);
            batch.episode_returns.extend(r.episode_returns);
            batch.partial_returns.push(r.partial_return);
        }
        batch.actions = ActionBatch::from_actions(&actions, policy.action_space())?;
        batch.obs = features(env, &batch.states);
        batch.next_obs = features(env, &batch.next_states);
        batch.continuation_obs = features(env, &continuations);
        batch.initial_obs = features(env, &batch.initial_states);
        Ok(batch)
    }
}

pub(crate) fn features(env: &Env, states: &[State]) -> Array2<f64> {
    let d = env.obs_dim();
    let mut m = Array2::zeros((states.len(), d));
    for (i, s) in states.iter().enumerate() {
        m.row_mut(i)
            .iter_mut()
            .zip(env.features(s))
            .for_each(|(x, y)| *x = y);
    }
    m
}

fn run_one(policy: &Policy, env: &Env, horizon: usize, rng: &mut ChaCha8Rng) -> Result<Rollout> {
    let cap = env.horizon_cap();
    let initial = env.reset(rng);
    let mut r = Rollout {
        states: Vec::with_capacity(horizon),
        actions: Vec::with_capacity(horizon),
        rewards: Vec::with_capacity(horizon),
        next_states: Vec::with_capacity(horizon),
        log_probs: Vec::with_capacity(horizon),
        dones: Vec::with_capacity(horizon),
        terminated: Vec::with_capacity(horizon),
        continuations: Vec::with_capacity(horizon),
        initial: initial.clone(),
        episode_returns: Vec::new(),
        partial_return: 0.0,
    };
    let mut state = initial;
    let mut episode_len = 0;
    for _ in 0..horizon {
        let dist = policy.distribution(&env.features(&state))?;
        let action = dist.sample(rng);
        let log_prob = dist.log_prob(&action);
        let out = env.step(&state, &action, rng)?;
        episode_len += 1;
        r.partial_return += out.reward;
        let done = out.done || episode_len >= cap;
        r.states.push(state);
        r.actions.push(action);
        r.rewards.push(out.reward);
        r.next_states.push(out.next_state.clone());
        r.log_probs.push(log_prob);
        r.dones.push(done);
        r.terminated.push(out.done);
        if done {
            r.episode_returns.push(r.partial_return);
            r.partial_return = 0.0;
            episode_len = 0;
            state = env.reset(rng);
            r.continuations.push(if out.done { state.clone() } else { out.next_state });
        } else {
            r.continuations.push(out.next_state.clone());
            state = out.next_state;
        }
    }
    Ok(r)
}

fn check_args(policy: &Policy, env: &Env, m: usize, t: usize) -> Result<()> {
    if m == 0 || t == 0 {
        return Err(Error::Input("M and T must be at least 1".into()));
    }
    if policy.obs_dim() != env.obs_dim() || policy.action_space() != env.action_space() {
        return Err(Error::Input("policy does not match the environment's spaces".into()));
    }
    Ok(())
}

/// Rollout `j` draws from ChaCha8 stream `j` keyed by one `u64` taken from
/// `rng`, so the result does not depend on execution order.
fn rollout_rng(key: u64, j: usize) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(key);
    r.set_stream(j as u64);
    r
}

pub fn collect_rollouts<R: Rng + ?Sized>(
    policy: &Policy,
    env: &Env,
    m: usize,
    t: usize,
    rng: &mut R,
) -> Result<RolloutBatch> {
    check_args(policy, env, m, t)?;
    let key: u64 = rng.random();
    let rollouts = (0..m)
        .map(|j| run_one(policy, env, t, &mut rollout_rng(key, j)))
        .collect::<Result<Vec<_>>>()?;
    RolloutBatch::assemble(env, policy, t, rollouts)
}

/// Same output as [`collect_rollouts`] for the same `rng` state, with the
/// rollouts run on the rayon pool.
pub fn collect_rollouts_parallel<R: Rng + ?Sized>(
    policy: &Policy,
    env: &Env,
    m: usize,
    t: usize,
    rng: &mut R,
) -> Result<RolloutBatch> {
    check_args(policy, env, m, t)?;
    let key: u64 = rng.random();
    let rollouts = (0..m)
        .into_par_iter()
        .map(|j| run_one(policy, env, t, &mut rollout_rng(key, j)))
        .collect::<Result<Vec<_>>>()?;
    RolloutBatch::assemble(env, policy, t, rollouts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{make_env, TabularMdp};
    use crate::nn::{Activation, MlpParams, PolicyHead};
    use std::collections::BTreeMap;

    fn tabular_policy(logits: Array2<f64>) -> Policy {
        let (s, a) = logits.dim();
        let mut net = MlpParams::zeros(&[s, a], Activation::Tanh);
        net.layers[0].weight = logits;
        Policy {
            net,
            head: PolicyHead::Categorical { n_actions: a },
        }
    }

    #[test]
    fn single_deterministic_transition() {
        let env = Env::Tabular {
            mdp: TabularMdp::flip([0.3, 0.0], 0.9).unwrap(),
            horizon_cap: 10,
        };
        let policy = tabular_policy(ndarray::array![[60.0, -60.0], [60.0, -60.0]]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let b = collect_rollouts(&policy, &env, 1, 1, &mut rng).unwrap();
        assert_eq!(b.states, vec![State::Discrete(0)]);
        assert_eq!(b.actions, ActionBatch::Discrete(vec![0]));
        assert_eq!(b.next_states, vec![State::Discrete(1)]);
        assert_eq!(b.rewards, vec![0.3]);
        assert_eq!(b.dones, vec![false]);
        assert_eq!(b.initial_states, vec![State::Discrete(0)]);
    }

    #[test]
    fn same_seed_same_batch_and_parallel_matches() {
        let env = make_env("point_mass", &BTreeMap::new()).unwrap();
        let policy = Policy::gaussian(2, 2, &[8], 0.0, &mut ChaCha8Rng::seed_from_u64(3));
        let a = collect_rollouts(&policy, &env, 3, 70, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = collect_rollouts(&policy, &env, 3, 70, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let c = collect_rollouts_parallel(&policy, &env, 3, 70, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, c);
        assert_eq!(a.len(), 210);
        assert!(a.max_log_prob_gap(&policy).unwrap() < 1e-9);
    }

    #[test]
    fn horizon_cap_and_resets_mark_done() {
        let env = make_env("point_mass", &[("horizon".to_string(), 5.0)].into_iter().collect()).unwrap();
        let policy = Policy::gaussian(2, 2, &[4], 0.0, &mut ChaCha8Rng::seed_from_u64(0));
        let b = collect_rollouts(&policy, &env, 2, 12, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let done_at: Vec<usize> = (0..b.len()).filter(|&i| b.dones[i]).collect();
        assert_eq!(done_at, vec![4, 9, 16, 21]);
        assert_eq!(b.episode_returns.len(), 4);
        assert_eq!(b.partial_returns.len(), 2);
    }

    #[test]
    fn uniform_policy_action_frequency() {
        let env = Env::Tabular {
            mdp: TabularMdp::flip([1.0, 0.0], 0.9).unwrap(),
            horizon_cap: 10,
        };
        let policy = tabular_policy(Array2::zeros((2, 2)));
        let b = collect_rollouts(&policy, &env, 10_000, 1, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let ActionBatch::Discrete(a) = &b.actions else { unreachable!() };
        let freq = a.iter().filter(|&&x| x == 0).count() as f64 / a.len() as f64;
        assert!((freq - 0.5).abs() < 0.02, "{freq}");
    }

    #[test]
    fn spaces_must_match() {
        let env = make_env("chain", &BTreeMap::new()).unwrap();
        let policy = tabular_policy(Array2::zeros((4, 2)));
        assert!(collect_rollouts(&policy, &env, 1, 1, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }
}
