//! Clipped-surrogate PPO pieces: truncated GAE, value targets, the clipped
//! objective, value loss and entropy bonus.

use ndarray::Array2;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::nn::{Policy, PolicyVars};

/// Log-ratios beyond this magnitude drop the sample from the surrogate.
pub const MAX_LOG_RATIO: f64 = 20.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClipConfig {
    pub epsilon: f64,
    pub gae_lambda: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
}

impl ClipConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::Config(format!("clip epsilon {} outside (0, 1)", self.epsilon)));
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return Err(Error::Config(format!("gae_lambda {} outside [0, 1]", self.gae_lambda)));
        }
        if !(self.entropy_coef.is_finite() && self.value_coef.is_finite()) {
            return Err(Error::Config("entropy and value coefficients must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdvantageBatch {
    /// Advantages as consumed by the surrogate (normalized when `stats` is set).
    pub advantages: Vec<f64>,
    /// Advantages before normalization.
    pub raw_advantages: Vec<f64>,
    pub value_targets: Vec<f64>,
    /// `(mean, std)` of the raw advantages when normalization was applied.
    pub stats: Option<(f64, f64)>,
}

/// Truncated GAE over rollout-major samples (`horizon` steps per rollout).
///
/// `δ_t = r_t + γ V(s_{t+1}) (1 − done_t) − V(s_t)` and
/// `Â_t = δ_t + γλ (1 − done_t) Â_{t+1}`, with the recursion cut at the end
/// of each rollout. Targets are `y_t = Â_t + V(s_t)`.
pub fn gae(
    rewards: &[f64],
    values: &[f64],
    next_values: &[f64],
    dones: &[bool],
    horizon: usize,
    gamma: f64,
    gae_lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = rewards.len();
    if values.len() != n || next_values.len() != n || dones.len() != n {
        return Err(Error::Input("GAE inputs differ in length".into()));
    }
    if horizon == 0 || !n.is_multiple_of(horizon) {
        return Err(Error::Input(format!("{n} samples do not split into rollouts of {horizon}")));
    }
    let mut adv = vec![0.0; n];
    for start in (0..n).step_by(horizon) {
        let mut running = 0.0;
        for i in (start..start + horizon).rev() {
            let live = if dones[i] { 0.0 } else { 1.0 };
            let delta = rewards[i] + gamma * next_values[i] * live - values[i];
            running = delta + gamma * gae_lambda * live * running;
            adv[i] = running;
        }
    }
    let targets = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((adv, targets))
}

/// Shift and scale to zero mean, unit (population) standard deviation.
pub fn normalize(values: &[f64]) -> (Vec<f64>, f64, f64) {
    let n = values.len().max(1) as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    let scale = if std > 1e-12 { std } else { 1.0 };
    (values.iter().map(|x| (x - mean) / scale).collect(), mean, std)
}

/// Advantages and value targets for a batch given state values.
#[allow(clippy::too_many_arguments)]
pub fn gae_advantages(
    rewards: &[f64],
    values: &[f64],
    next_values: &[f64],
    dones: &[bool],
    horizon: usize,
    gamma: f64,
    gae_lambda: f64,
    normalize_advantages: bool,
) -> Result<AdvantageBatch> {
    let (raw, value_targets) = gae(rewards, values, next_values, dones, horizon, gamma, gae_lambda)?;
    if raw.iter().chain(&value_targets).any(|x| !x.is_finite()) {
        return Err(Error::Numerical("non-finite advantage".into()));
    }
    let (advantages, stats) = if normalize_advantages {
        let (a, mean, std) = normalize(&raw);
        (a, Some((mean, std)))
    } else {
        (raw.clone(), None)
    };
    Ok(AdvantageBatch {
        advantages,
        raw_advantages: raw,
        value_targets,
        stats,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SurrogateStats {
    /// Fraction of included samples with `|κ − 1| > ε`.
    pub clip_fraction: f64,
    /// Samples dropped because `|log κ| > MAX_LOG_RATIO`.
    pub excluded: usize,
}

/// `mean min{Â κ, Â clip(κ, 1−ε, 1+ε)}` (or `mean Â κ` when `clip` is
/// false) over `n×1` current log-probs, as a quantity to maximize.
pub fn clipped_surrogate(
    tape: &mut Tape,
    log_probs: Var,
    old_log_probs: &[f64],
    advantages: &[f64],
    epsilon: f64,
    clip: bool,
) -> (Var, SurrogateStats) {
    let n = old_log_probs.len();
    let old = tape.constant(Array2::from_shape_vec((n, 1), old_log_probs.to_vec()).expect("column"));
    let log_ratio = tape.sub(log_probs, old);
    let mask: Vec<f64> = tape
        .value(log_ratio)
        .iter()
        .map(|&l| if l.abs() <= MAX_LOG_RATIO { 1.0 } else { 0.0 })
        .collect();
    let included = mask.iter().sum::<f64>();
    let bounded = tape.clip(log_ratio, -2.0 * MAX_LOG_RATIO, 2.0 * MAX_LOG_RATIO);
    let ratio = tape.exp(bounded);
    let adv = tape.constant(Array2::from_shape_vec((n, 1), advantages.to_vec()).expect("column"));
    let unclipped = tape.mul(adv, ratio);
    let per_sample = if clip {
        let clipped_ratio = tape.clip(ratio, 1.0 - epsilon, 1.0 + epsilon);
        let clipped = tape.mul(adv, clipped_ratio);
        tape.minimum(unclipped, clipped)
    } else {
        unclipped
    };
    let m = tape.constant(Array2::from_shape_vec((n, 1), mask.clone()).expect("column"));
    let kept = tape.mul(per_sample, m);
    let total = tape.sum(kept);
    let objective = tape.scale(total, 1.0 / included.max(1.0));
    let clipped_count = tape
        .value(ratio)
        .iter()
        .zip(&mask)
        .filter(|(r, m)| **m > 0.0 && (**r - 1.0).abs() > epsilon)
        .count();
    let stats = SurrogateStats {
        clip_fraction: clipped_count as f64 / included.max(1.0),
        excluded: n - included as usize,
    };
    (objective, stats)
}

/// `mean (V(s) − y)²` over an `n×1` prediction column.
pub fn value_loss(tape: &mut Tape, predictions: Var, targets: &[f64]) -> Var {
    let y = tape.constant(Array2::from_shape_vec((targets.len(), 1), targets.to_vec()).expect("column"));
    let diff = tape.sub(predictions, y);
    let sq = tape.square(diff);
    tape.mean(sq)
}

/// Mean policy entropy over the rows of `states`.
pub fn entropy_bonus(tape: &mut Tape, policy: &Policy, vars: &PolicyVars, states: Var) -> Var {
    let h = policy.entropy_taped(tape, vars, states);
    tape.mean(h)
}
