use rand::Rng;

use crate::error::{Error, Result};

/// Continuous-state environments with explicit dynamics.
///
/// Point mass (2-D state `x`, 2-D action `a`):
///
/// ```text
/// a_c  = clip(a, −action_bound, action_bound)     (per component)
/// x'   = clip(x + dt · a_c, −position_bound, position_bound)
/// r    = −‖x‖²
/// x_0 ~ Uniform([−1, 1]²)
/// ```
///
/// Cart-pole analog (state `(x, ẋ, θ, θ̇)`, 1-D action `u`), Euler step `τ`:
///
/// ```text
/// F     = force_mag · clip(u, −1, 1)
/// tmp   = (F + m_p l θ̇² sin θ) / (m_c + m_p)
/// θ̈     = (g sin θ − cos θ · tmp) / (l (4/3 − m_p cos² θ / (m_c + m_p)))
/// ẍ     = tmp − m_p l θ̈ cos θ / (m_c + m_p)
/// r     = 1 per step
/// done  when |x| > 2.4 or |θ| > 12°
/// s_0 ~ Uniform([−0.05, 0.05]⁴)
/// ```
#[derive(Debug, Clone, PartialEq)]
pub enum ContinuousEnv {
    PointMass {
        dt: f64,
        action_bound: f64,
        position_bound: f64,
        horizon_cap: usize,
    },
    CartPole {
        tau: f64,
        force_mag: f64,
        horizon_cap: usize,
    },
}

const GRAVITY: f64 = 9.8;
const CART_MASS: f64 = 1.0;
const POLE_MASS: f64 = 0.1;
const POLE_HALF_LENGTH: f64 = 0.5;
const X_LIMIT: f64 = 2.4;
const THETA_LIMIT: f64 = 12.0 * std::f64::consts::PI / 180.0;

impl ContinuousEnv {
    pub fn point_mass(dt: f64, horizon_cap: usize) -> Self {
        ContinuousEnv::PointMass {
            dt,
            action_bound: 1.0,
            position_bound: 5.0,
            horizon_cap,
        }
    }

    pub fn cart_pole(horizon_cap: usize) -> Self {
        ContinuousEnv::CartPole {
            tau: 0.02,
            force_mag: 10.0,
            horizon_cap,
        }
    }

    pub fn state_dim(&self) -> usize {
        match self {
            ContinuousEnv::PointMass { .. } => 2,
            ContinuousEnv::CartPole { .. } => 4,
        }
    }

    pub fn action_dim(&self) -> usize {
        match self {
            ContinuousEnv::PointMass { .. } => 2,
            ContinuousEnv::CartPole { .. } => 1,
        }
    }

    pub fn horizon_cap(&self) -> usize {
        match self {
            ContinuousEnv::PointMass { horizon_cap, .. }
            | ContinuousEnv::CartPole { horizon_cap, .. } => *horizon_cap,
        }
    }

    pub fn reset<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        match self {
            ContinuousEnv::PointMass { .. } => (0..2).map(|_| rng.random_range(-1.0..=1.0)).collect(),
            ContinuousEnv::CartPole { .. } => (0..4).map(|_| rng.random_range(-0.05..=0.05)).collect(),
        }
    }

    /// Returns `(next_state, reward, terminated)`; time limits are applied by
    /// the caller.
    pub fn step(&self, state: &[f64], action: &[f64]) -> Result<(Vec<f64>, f64, bool)> {
        if state.len() != self.state_dim() || state.iter().any(|x| !x.is_finite()) {
            return Err(Error::Input("invalid continuous state".into()));
        }
        if action.len() != self.action_dim() || action.iter().any(|x| !x.is_finite()) {
            return Err(Error::Input("invalid continuous action".into()));
        }
        match *self {
            ContinuousEnv::PointMass {
                dt,
                action_bound,
                position_bound,
                ..
            } => {
                let reward = -state.iter().map(|x| x * x).sum::<f64>();
                let next = state
                    .iter()
                    .zip(action)
                    .map(|(x, a)| (x + dt * a.clamp(-action_bound, action_bound)).clamp(-position_bound, position_bound))
                    .collect();
                Ok((next, reward, false))
            }
            ContinuousEnv::CartPole { tau, force_mag, .. } => {
                let (x, x_dot, theta, theta_dot) = (state[0], state[1], state[2], state[3]);
                let force = force_mag * action[0].clamp(-1.0, 1.0);
                let total = CART_MASS + POLE_MASS;
                let (sin, cos) = theta.sin_cos();
                let tmp = (force + POLE_MASS * POLE_HALF_LENGTH * theta_dot * theta_dot * sin) / total;
                let theta_acc = (GRAVITY * sin - cos * tmp)
                    / (POLE_HALF_LENGTH * (4.0 / 3.0 - POLE_MASS * cos * cos / total));
                let x_acc = tmp - POLE_MASS * POLE_HALF_LENGTH * theta_acc * cos / total;
                let next = vec![
                    x + tau * x_dot,
                    x_dot + tau * x_acc,
                    theta + tau * theta_dot,
                    theta_dot + tau * theta_acc,
                ];
                let done = next[0].abs() > X_LIMIT || next[2].abs() > THETA_LIMIT;
                Ok((next, 1.0, done))
            }
        }
    }
}
