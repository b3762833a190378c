//! Environments and on-policy rollout collection.

mod continuous;
mod rollout;
mod tabular;

use std::collections::BTreeMap;

use rand::Rng;

pub use continuous::ContinuousEnv;
pub use rollout::{collect_rollouts, collect_rollouts_parallel, RolloutBatch};
pub use tabular::TabularMdp;

use crate::error::{Error, Result};
use crate::space::{Action, ActionSpace, State};

pub const ENV_NAMES: [&str; 5] = ["chain", "gridworld", "random_mdp", "point_mass", "cartpole_analog"];

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub next_state: State,
    pub reward: f64,
    /// The episode terminated; time limits are handled by the rollout collector.
    pub done: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Env {
    Tabular { mdp: TabularMdp, horizon_cap: usize },
    Continuous(ContinuousEnv),
}

impl Env {
    pub fn obs_dim(&self) -> usize {
        match self {
            Env::Tabular { mdp, .. } => mdp.n_states(),
            Env::Continuous(c) => c.state_dim(),
        }
    }

    pub fn action_space(&self) -> ActionSpace {
        match self {
            Env::Tabular { mdp, .. } => ActionSpace::Discrete(mdp.n_actions()),
            Env::Continuous(c) => ActionSpace::Continuous(c.action_dim()),
        }
    }

    pub fn horizon_cap(&self) -> usize {
        match self {
            Env::Tabular { horizon_cap, .. } => *horizon_cap,
            Env::Continuous(c) => c.horizon_cap(),
        }
    }

    pub fn tabular(&self) -> Option<&TabularMdp> {
        match self {
            Env::Tabular { mdp, .. } => Some(mdp),
            Env::Continuous(_) => None,
        }
    }

    pub fn reset<R: Rng + ?Sized>(&self, rng: &mut R) -> State {
        match self {
            Env::Tabular { mdp, .. } => State::Discrete(mdp.sample_initial(rng)),
            Env::Continuous(c) => State::Continuous(c.reset(rng)),
        }
    }

    /// Observation vector fed to the networks: one-hot for tabular states.
    pub fn features(&self, state: &State) -> Vec<f64> {
        match state {
            State::Discrete(s) => {
                let mut v = vec![0.0; self.obs_dim()];
                v[*s] = 1.0;
                v
            }
            State::Continuous(x) => x.clone(),
        }
    }

    /// Tabular steps pay the expected reward `r(s, a)`. A terminal state is
    /// absorbing: stepping from it returns the same state, reward 0 and
    /// `done = true`.
    pub fn step<R: Rng + ?Sized>(&self, state: &State, action: &Action, rng: &mut R) -> Result<StepOutcome> {
        self.action_space().check(action)?;
        match (self, state, action) {
            (Env::Tabular { mdp, .. }, State::Discrete(s), Action::Discrete(a)) => {
                let s = *s;
                if s >= mdp.n_states() {
                    return Err(Error::Input(format!("state {s} out of range")));
                }
                if mdp.terminal[s] {
                    return Ok(StepOutcome {
                        next_state: State::Discrete(s),
                        reward: 0.0,
                        done: true,
                    });
                }
                let next = mdp.sample_next(s, *a, rng);
                Ok(StepOutcome {
                    next_state: State::Discrete(next),
                    reward: mdp.reward[[s, *a]],
                    done: mdp.terminal[next],
                })
            }
            (Env::Continuous(c), State::Continuous(x), Action::Continuous(a)) => {
                let (next, reward, done) = c.step(x, a)?;
                Ok(StepOutcome {
                    next_state: State::Continuous(next),
                    reward,
                    done,
                })
            }
            _ => Err(Error::Input("state kind does not match environment".into())),
        }
    }
}

fn param(params: &BTreeMap<String, f64>, key: &str, default: f64) -> f64 {
    params.get(key).copied().unwrap_or(default)
}

fn count_param(params: &BTreeMap<String, f64>, key: &str, default: usize) -> Result<usize> {
    let v = param(params, key, default as f64);
    if v < 1.0 || v.fract() != 0.0 || !v.is_finite() {
        return Err(Error::Config(format!("{key} must be a positive integer, got {v}")));
    }
    Ok(v as usize)
}

/// Build a named environment.
///
/// | name | params (defaults) |
/// |------|-------------------|
/// | `chain` | `n` (5), `slip` (0.0), `gamma` (0.99), `horizon` (100) |
/// | `gridworld` | `width` (4), `height` (4), `slip` (0.0), `gamma` (0.99), `horizon` (100) |
/// | `random_mdp` | `S` (4), `A` (2), `seed` (0), `gamma` (0.99), `horizon` (100) |
/// | `point_mass` | `dt` (0.1), `horizon` (50) |
/// | `cartpole_analog` | `horizon` (200) |
pub fn make_env(name: &str, params: &BTreeMap<String, f64>) -> Result<Env> {
    let gamma = param(params, "gamma", 0.99);
    match name {
        "chain" => Ok(Env::Tabular {
            mdp: TabularMdp::chain(count_param(params, "n", 5)?, param(params, "slip", 0.0), gamma)?,
            horizon_cap: count_param(params, "horizon", 100)?,
        }),
        "gridworld" => Ok(Env::Tabular {
            mdp: TabularMdp::gridworld(
                count_param(params, "width", 4)?,
                count_param(params, "height", 4)?,
                param(params, "slip", 0.0),
                gamma,
            )?,
            horizon_cap: count_param(params, "horizon", 100)?,
        }),
        "random_mdp" => {
            let seed = param(params, "seed", 0.0);
            if seed < 0.0 || seed.fract() != 0.0 {
                return Err(Error::Config(format!("seed must be a nonnegative integer, got {seed}")));
            }
            Ok(Env::Tabular {
                mdp: TabularMdp::random(count_param(params, "S", 4)?, count_param(params, "A", 2)?, seed as u64, gamma)?,
                horizon_cap: count_param(params, "horizon", 100)?,
            })
        }
        "point_mass" => {
            let dt = param(params, "dt", 0.1);
            if !(dt > 0.0 && dt.is_finite()) {
                return Err(Error::Config(format!("dt must be positive, got {dt}")));
            }
            Ok(Env::Continuous(ContinuousEnv::point_mass(dt, count_param(params, "horizon", 50)?)))
        }
        "cartpole_analog" => Ok(Env::Continuous(ContinuousEnv::cart_pole(count_param(params, "horizon", 200)?))),
        other => Err(Error::Config(format!(
            "unknown environment '{other}' (expected one of {})",
            ENV_NAMES.join(", ")
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn params(kv: &[(&str, f64)]) -> BTreeMap<String, f64> {
        kv.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    #[test]
    fn absorbing_chain_end() {
        let env = make_env("chain", &params(&[("n", 5.0)])).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for a in 0..2 {
            let out = env.step(&State::Discrete(4), &Action::Discrete(a), &mut rng).unwrap();
            assert_eq!(out, StepOutcome { next_state: State::Discrete(4), reward: 0.0, done: true });
        }
    }

    #[test]
    fn flip_transition() {
        let env = Env::Tabular {
            mdp: TabularMdp::flip([0.7, 0.2], 0.9).unwrap(),
            horizon_cap: 10,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = env.step(&State::Discrete(0), &Action::Discrete(0), &mut rng).unwrap();
        assert_eq!(out, StepOutcome { next_state: State::Discrete(1), reward: 0.7, done: false });
    }

    #[test]
    fn point_mass_step_through_env() {
        let env = make_env("point_mass", &params(&[("dt", 0.05)])).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = env
            .step(&State::Continuous(vec![1.0, 2.0]), &Action::Continuous(vec![-1.0, 0.5]), &mut rng)
            .unwrap();
        assert_eq!(out.next_state, State::Continuous(vec![1.0 - 0.05, 2.0 + 0.025]));
        assert_eq!(out.reward, -5.0);
    }

    #[test]
    fn invalid_actions_are_input_errors() {
        let env = make_env("chain", &BTreeMap::new()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let err = env.step(&State::Discrete(0), &Action::Discrete(2), &mut rng).unwrap_err();
        assert!(matches!(err, Error::Input(_)));
        let env = make_env("point_mass", &BTreeMap::new()).unwrap();
        let err = env
            .step(&State::Continuous(vec![0.0, 0.0]), &Action::Continuous(vec![f64::INFINITY, 0.0]), &mut rng)
            .unwrap_err();
        assert!(matches!(err, Error::Input(_)));
    }

    #[test]
    fn constructors() {
        let chain = make_env("chain", &params(&[("n", 5.0)])).unwrap();
        assert_eq!((chain.obs_dim(), chain.action_space()), (5, ActionSpace::Discrete(2)));
        let a = make_env("random_mdp", &params(&[("S", 4.0), ("A", 2.0), ("seed", 7.0)])).unwrap();
        let b = make_env("random_mdp", &params(&[("S", 4.0), ("A", 2.0), ("seed", 7.0)])).unwrap();
        assert_eq!(a, b);
        let grid = make_env("gridworld", &BTreeMap::new()).unwrap();
        let mdp = grid.tabular().unwrap();
        assert_eq!(mdp.n_states(), 16);
        assert!(mdp.max_row_sum_error() < 1e-12);
        let cp = make_env("cartpole_analog", &BTreeMap::new()).unwrap();
        assert_eq!((cp.obs_dim(), cp.action_space()), (4, ActionSpace::Continuous(1)));
    }

    #[test]
    fn unknown_env_is_config_error() {
        assert!(matches!(make_env("pong", &BTreeMap::new()), Err(Error::Config(_))));
        assert!(matches!(make_env("chain", &params(&[("n", 2.5)])), Err(Error::Config(_))));
    }
}
