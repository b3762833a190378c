use ndarray::{Array1, Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

const SUM_TOL: f64 = 1e-12;

/// Finite discounted MDP with expected rewards `r(s, a)`.
///
/// Terminal states are absorbing with zero reward; entering one ends an
/// episode when the MDP is sampled.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp {
    /// `P(s'|s,a)`, shape `[S, A, S]`.
    pub transition: Array3<f64>,
    /// `r(s,a)`, shape `[S, A]`.
    pub reward: Array2<f64>,
    pub initial_dist: Array1<f64>,
    pub discount: f64,
    pub terminal: Vec<bool>,
}

impl TabularMdp {
    pub fn new(
        transition: Array3<f64>,
        reward: Array2<f64>,
        initial_dist: Array1<f64>,
        discount: f64,
        terminal: Vec<bool>,
    ) -> Result<Self> {
        let mdp = Self {
            transition,
            reward,
            initial_dist,
            discount,
            terminal,
        };
        mdp.validate()?;
        Ok(mdp)
    }

    pub fn n_states(&self) -> usize {
        self.transition.dim().0
    }

    pub fn n_actions(&self) -> usize {
        self.transition.dim().1
    }

    pub fn validate(&self) -> Result<()> {
        let (s, a, s2) = self.transition.dim();
        if s == 0 || a == 0 {
            return Err(Error::Input("MDP needs at least one state and action".into()));
        }
        if s2 != s {
            return Err(Error::Input(format!("transition shape [{s}, {a}, {s2}] is not square in states")));
        }
        if self.reward.dim() != (s, a) {
            return Err(Error::Input("reward shape does not match [S, A]".into()));
        }
        if self.initial_dist.len() != s || self.terminal.len() != s {
            return Err(Error::Input("initial distribution or terminal mask has wrong length".into()));
        }
        if !(0.0..1.0).contains(&self.discount) {
            return Err(Error::Input(format!("discount {} outside [0, 1)", self.discount)));
        }
        if self.reward.iter().any(|r| !r.is_finite()) {
            return Err(Error::Input("non-finite reward".into()));
        }
        for si in 0..s {
            for ai in 0..a {
                let row = self.transition.slice(ndarray::s![si, ai, ..]);
                if row.iter().any(|&p| p < 0.0 || !p.is_finite()) {
                    return Err(Error::Input(format!("negative transition probability at ({si}, {ai})")));
                }
                if (row.sum() - 1.0).abs() > SUM_TOL {
                    return Err(Error::Input(format!("P(.|{si},{ai}) sums to {}", row.sum())));
                }
            }
        }
        if self.initial_dist.iter().any(|&p| p < 0.0) || (self.initial_dist.sum() - 1.0).abs() > SUM_TOL {
            return Err(Error::Input("initial distribution is not a probability vector".into()));
        }
        Ok(())
    }

    /// Largest `|Σ_{s'} P(s'|s,a) − 1|` over all `(s, a)`.
    pub fn max_row_sum_error(&self) -> f64 {
        let (s, a, _) = self.transition.dim();
        let mut worst: f64 = 0.0;
        for si in 0..s {
            for ai in 0..a {
                let sum = self.transition.slice(ndarray::s![si, ai, ..]).sum();
                worst = worst.max((sum - 1.0).abs());
            }
        }
        worst
    }

    pub fn sample_initial<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        sample_index(self.initial_dist.iter().copied(), rng)
    }

    pub fn sample_next<R: Rng + ?Sized>(&self, state: usize, action: usize, rng: &mut R) -> usize {
        sample_index(
            self.transition.slice(ndarray::s![state, action, ..]).iter().copied(),
            rng,
        )
    }

    /// Chain of `n` states with actions left (0) and right (1). With
    /// probability `slip` the opposite move happens. The right end is
    /// terminal; the reward `r(s,a)` is the probability of entering it.
    /// Episodes start in state 0.
    pub fn chain(n: usize, slip: f64, discount: f64) -> Result<Self> {
        if n < 2 {
            return Err(Error::Config("chain needs at least 2 states".into()));
        }
        if !(0.0..=1.0).contains(&slip) {
            return Err(Error::Config(format!("slip {slip} outside [0, 1]")));
        }
        let goal = n - 1;
        let mut p = Array3::zeros((n, 2, n));
        for s in 0..n {
            if s == goal {
                p[[s, 0, s]] = 1.0;
                p[[s, 1, s]] = 1.0;
                continue;
            }
            let left = s.saturating_sub(1);
            let right = s + 1;
            p[[s, 0, left]] += 1.0 - slip;
            p[[s, 0, right]] += slip;
            p[[s, 1, right]] += 1.0 - slip;
            p[[s, 1, left]] += slip;
        }
        let mut terminal = vec![false; n];
        terminal[goal] = true;
        let mut rho = Array1::zeros(n);
        rho[0] = 1.0;
        Self::with_goal_reward(p, rho, discount, terminal)
    }

    /// `width × height` grid with actions up, down, left, right. Moves into
    /// a wall leave the agent in place; with probability `slip` a uniformly
    /// random action is executed instead. Start at the top-left cell, goal
    /// (terminal) at the bottom-right; reward is the probability of
    /// entering the goal.
    pub fn gridworld(width: usize, height: usize, slip: f64, discount: f64) -> Result<Self> {
        if width * height < 2 {
            return Err(Error::Config("gridworld needs at least 2 cells".into()));
        }
        if !(0.0..=1.0).contains(&slip) {
            return Err(Error::Config(format!("slip {slip} outside [0, 1]")));
        }
        let n = width * height;
        let goal = n - 1;
        let mv = |s: usize, a: usize| -> usize {
            let (x, y) = (s % width, s / width);
            match a {
                0 if y > 0 => s - width,
                1 if y + 1 < height => s + width,
                2 if x > 0 => s - 1,
                3 if x + 1 < width => s + 1,
                _ => s,
            }
        };
        let mut p = Array3::zeros((n, 4, n));
        for s in 0..n {
            for a in 0..4 {
                if s == goal {
                    p[[s, a, s]] = 1.0;
                    continue;
                }
                p[[s, a, mv(s, a)]] += 1.0 - slip;
                for b in 0..4 {
                    p[[s, a, mv(s, b)]] += slip / 4.0;
                }
            }
        }
        let mut terminal = vec![false; n];
        terminal[goal] = true;
        let mut rho = Array1::zeros(n);
        rho[0] = 1.0;
        Self::with_goal_reward(p, rho, discount, terminal)
    }

    fn with_goal_reward(
        p: Array3<f64>,
        rho: Array1<f64>,
        discount: f64,
        terminal: Vec<bool>,
    ) -> Result<Self> {
        let (n, a, _) = p.dim();
        let mut r = Array2::zeros((n, a));
        for s in (0..n).filter(|&s| !terminal[s]) {
            for ai in 0..a {
                r[[s, ai]] = (0..n).filter(|&g| terminal[g]).map(|g| p[[s, ai, g]]).sum();
            }
        }
        let mut mdp = Self::new(p, r, rho, discount, terminal)?;
        mdp.renormalize();
        Ok(mdp)
    }

    /// Dense MDP with Dirichlet(1) transition rows and initial distribution
    /// and rewards uniform on `[0, 1)`. No terminal states.
    pub fn random(n_states: usize, n_actions: usize, seed: u64, discount: f64) -> Result<Self> {
        if n_states == 0 || n_actions == 0 {
            return Err(Error::Config("random_mdp needs positive state and action counts".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dirichlet = |k: usize, rng: &mut ChaCha8Rng| -> Vec<f64> {
            let draws: Vec<f64> = (0..k).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
            let total: f64 = draws.iter().sum();
            draws.into_iter().map(|x| x / total).collect()
        };
        let mut p = Array3::zeros((n_states, n_actions, n_states));
        for s in 0..n_states {
            for a in 0..n_actions {
                for (s2, v) in dirichlet(n_states, &mut rng).into_iter().enumerate() {
                    p[[s, a, s2]] = v;
                }
            }
        }
        let r = Array2::from_shape_simple_fn((n_states, n_actions), || rng.random::<f64>());
        let rho = Array1::from(dirichlet(n_states, &mut rng));
        let mut mdp = Self {
            transition: p,
            reward: r,
            initial_dist: rho,
            discount,
            terminal: vec![false; n_states],
        };
        mdp.renormalize();
        mdp.validate()?;
        Ok(mdp)
    }

    /// Two states; action 0 flips the state, action 1 stays. `r(s, a)` is
    /// `state_reward[s]` for both actions. Starts in state 0.
    pub fn flip(state_reward: [f64; 2], discount: f64) -> Result<Self> {
        let mut p = Array3::zeros((2, 2, 2));
        for s in 0..2 {
            p[[s, 0, 1 - s]] = 1.0;
            p[[s, 1, s]] = 1.0;
        }
        let r = Array2::from_shape_fn((2, 2), |(s, _)| state_reward[s]);
        Self::new(p, r, Array1::from(vec![1.0, 0.0]), discount, vec![false, false])
    }

    /// Push each probability row to sum to one to within rounding.
    fn renormalize(&mut self) {
        let (s, a, _) = self.transition.dim();
        for si in 0..s {
            for ai in 0..a {
                let mut row = self.transition.slice_mut(ndarray::s![si, ai, ..]);
                let total = row.sum();
                row.mapv_inplace(|x| x / total);
            }
        }
        let total = self.initial_dist.sum();
        self.initial_dist.mapv_inplace(|x| x / total);
    }
}

pub(crate) fn sample_index<R: Rng + ?Sized>(probs: impl Iterator<Item = f64>, rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, p) in probs.enumerate() {
        if p > 0.0 {
            last_positive = i;
        }
        acc += p;
        if u < acc {
            return i;
        }
    }
    last_positive
}
