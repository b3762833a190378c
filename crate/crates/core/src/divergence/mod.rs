//! φ-divergences, their conjugates, and discriminator losses that estimate
//! `D_φ(μ^{π'} ‖ μ^{π})` from samples of `μ^{π}` only.
//!
//! With `f = g − γ P^{π'} g` the expectation of `f` under `μ^{π'}` equals
//! `(1−γ) E_{s∼ρ, a∼π'}[g(s,a)]`, so the variational bound
//! `sup_f E_{μ'}[f] − E_{μ}[φ*(f)]` becomes
//!
//! ```text
//! (1−γ) E_{ρ,π'}[g] − E_{μ}[φ*(g(s,a) − γ g(s',a'))]
//! ```
//!
//! The losses below are the negation of that objective, minimized over `g`.
//! Applying the same substitution to the Donsker-Varadhan bound
//! `sup_f E_{μ'}[f] − log E_{μ}[e^f]` gives
//!
//! ```text
//! L_DV = log E_{μ}[exp(g(s,a) − γ g(s',a'))] − (1−γ) E_{ρ,π'}[g]
//! ```

pub mod exact;

use ndarray::{Array2, Axis};
use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::mdp::RolloutBatch;
use crate::nn::{Activation, MlpParams, MlpVars, Policy};
use crate::space::{one_hot, ActionBatch, ActionSpace};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DivergenceKind {
    /// `φ(t) = t log t`
    Kl,
    /// `φ(t) = (t − 1)²`
    ChiSquared,
    /// `φ(t) = |t − 1|`. The conjugate is only finite on `|t| ≤ 1/2`, so
    /// discriminator residuals are squashed through `tanh(·)/2` and the
    /// estimate targets half the `L1` distance. Experimental.
    TotalVariation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Representation {
    VariationalDice,
    DonskerVaradhan,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DivergenceSpec {
    pub kind: DivergenceKind,
    pub representation: Representation,
}

impl DivergenceKind {
    pub fn phi(self, t: f64) -> f64 {
        match self {
            DivergenceKind::Kl if t == 0.0 => 0.0,
            DivergenceKind::Kl => t * t.ln(),
            DivergenceKind::ChiSquared => (t - 1.0) * (t - 1.0),
            DivergenceKind::TotalVariation => (t - 1.0).abs(),
        }
    }

    /// `lim_{t→∞} φ(t)/t`, the cost of mass where the reference is zero.
    pub fn recession_slope(self) -> f64 {
        match self {
            DivergenceKind::Kl | DivergenceKind::ChiSquared => f64::INFINITY,
            DivergenceKind::TotalVariation => 1.0,
        }
    }

    /// `φ*(t) = sup_u {t·u − φ(u)}`; `+∞` outside the domain.
    pub fn conjugate(self, t: f64) -> f64 {
        match self {
            DivergenceKind::Kl => (t - 1.0).exp(),
            DivergenceKind::ChiSquared => t + 0.25 * t * t,
            DivergenceKind::TotalVariation if t.abs() <= 0.5 => t,
            DivergenceKind::TotalVariation => f64::INFINITY,
        }
    }

    pub fn conjugate_derivative(self, t: f64) -> f64 {
        match self {
            DivergenceKind::Kl => (t - 1.0).exp(),
            DivergenceKind::ChiSquared => 1.0 + 0.5 * t,
            DivergenceKind::TotalVariation if t.abs() <= 0.5 => 1.0,
            DivergenceKind::TotalVariation => f64::INFINITY,
        }
    }

    /// Taped `φ*` applied elementwise. Total variation expects residuals
    /// already squashed into its domain.
    pub fn conjugate_taped(self, tape: &mut Tape, t: Var) -> Var {
        match self {
            DivergenceKind::Kl => {
                let shifted = tape.add_scalar(t, -1.0);
                tape.exp(shifted)
            }
            DivergenceKind::ChiSquared => {
                let sq = tape.square(t);
                let quarter = tape.scale(sq, 0.25);
                tape.add(t, quarter)
            }
            DivergenceKind::TotalVariation => t,
        }
    }
}

impl DivergenceSpec {
    pub fn new(kind: DivergenceKind, representation: Representation) -> Result<Self> {
        if representation == Representation::DonskerVaradhan && kind != DivergenceKind::Kl {
            return Err(Error::Config("the Donsker-Varadhan representation is only defined for KL".into()));
        }
        Ok(Self { kind, representation })
    }

    pub fn kl_dice() -> Self {
        Self { kind: DivergenceKind::Kl, representation: Representation::VariationalDice }
    }

    pub fn kl_dv() -> Self {
        Self { kind: DivergenceKind::Kl, representation: Representation::DonskerVaradhan }
    }

    pub fn chi2() -> Self {
        Self { kind: DivergenceKind::ChiSquared, representation: Representation::VariationalDice }
    }

    /// Residual `g(s,a) − γ g(s',a')` as it enters the conjugate.
    pub fn squash_residual(&self, tape: &mut Tape, residual: Var) -> Var {
        if self.kind == DivergenceKind::TotalVariation {
            let t = tape.tanh(residual);
            tape.scale(t, 0.5)
        } else {
            residual
        }
    }

    /// Derivative of `φ*(squash(r))` with respect to the raw residual `r`.
    pub fn conjugate_derivative_raw(&self, residual: f64) -> f64 {
        if self.kind == DivergenceKind::TotalVariation {
            let t = residual.tanh();
            0.5 * (1.0 - t * t)
        } else {
            self.kind.conjugate_derivative(residual)
        }
    }

    pub fn squash_value(&self, residual: f64) -> f64 {
        if self.kind == DivergenceKind::TotalVariation {
            0.5 * residual.tanh()
        } else {
            residual
        }
    }
}

/// Discriminator output values for one loss evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscriminatorBatchTerms {
    /// `g(s_1^{(j)}, a')` with `a' ∼ π(·|s_1^{(j)})`.
    pub initial_term: Vec<f64>,
    /// `g(s_t, a_t) − γ g(s_{t+1}, a'_{t+1})` with `a'_{t+1} ∼ π(·|s_{t+1})`.
    pub bellman_residuals: Vec<f64>,
}

/// Loss over already-evaluated discriminator columns.
///
/// `g_sa`, `g_next` are `n×1`; `g_init` is `k×1`. Optional weights are
/// probability vectors (`1×n` and `1×k` rows) replacing the sample means,
/// which is how exact expectations are plugged in. Rows with zero weight must
/// be removed by the caller for the Donsker-Varadhan form.
pub fn dice_objective(
    tape: &mut Tape,
    spec: DivergenceSpec,
    gamma: f64,
    g_sa: Var,
    g_next: Var,
    g_init: Var,
    weights: Option<(&Array2<f64>, &Array2<f64>)>,
) -> Var {
    let disc_next = tape.scale(g_next, gamma);
    let raw = tape.sub(g_sa, disc_next);
    let residual = spec.squash_residual(tape, raw);
    let (sample_term, init_mean) = match weights {
        None => {
            let s = match spec.representation {
                Representation::VariationalDice => {
                    let c = spec.kind.conjugate_taped(tape, residual);
                    tape.mean(c)
                }
                Representation::DonskerVaradhan => tape.log_mean_exp(residual),
            };
            (s, tape.mean(g_init))
        }
        Some((w_sa, w_init)) => {
            let w = tape.constant(w_sa.clone());
            let s = match spec.representation {
                Representation::VariationalDice => {
                    let c = spec.kind.conjugate_taped(tape, residual);
                    tape.matmul(w, c)
                }
                Representation::DonskerVaradhan => {
                    // log Σ w e^x = log mean e^{x + log w} + log n
                    let n = w_sa.len() as f64;
                    let logw = tape.constant(w_sa.t().mapv(f64::ln));
                    let shifted = tape.add(residual, logw);
                    let lme = tape.log_mean_exp(shifted);
                    tape.add_scalar(lme, n.ln())
                }
            };
            let wi = tape.constant(w_init.clone());
            (s, tape.matmul(wi, g_init))
        }
    };
    let init_term = tape.scale(init_mean, 1.0 - gamma);
    tape.sub(sample_term, init_term)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DiscriminatorInput {
    /// State features concatenated with action features (one-hot for
    /// discrete actions).
    #[default]
    Concat,
    /// One-hot over `(s, a)` pairs; needs one-hot states and discrete actions.
    /// With no hidden layers this is a table with one entry per pair.
    Joint,
}

/// The witness `g_ψ(s, a)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Discriminator {
    pub net: MlpParams,
    pub input: DiscriminatorInput,
    pub action_space: ActionSpace,
}

impl Discriminator {
    pub fn new<R: Rng + ?Sized>(
        obs_dim: usize,
        action_space: ActionSpace,
        hidden: &[usize],
        input: DiscriminatorInput,
        rng: &mut R,
    ) -> Self {
        let mut sizes = vec![Self::input_width(obs_dim, action_space, input)];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        let net = if hidden.is_empty() {
            MlpParams::zeros(&sizes, Activation::Tanh)
        } else {
            MlpParams::new(&sizes, Activation::Tanh, 1.0, rng)
        };
        Self { net, input, action_space }
    }

    /// Zero-initialized table over `(s, a)` pairs.
    pub fn table(n_states: usize, n_actions: usize) -> Self {
        Self {
            net: MlpParams::zeros(&[n_states * n_actions, 1], Activation::Tanh),
            input: DiscriminatorInput::Joint,
            action_space: ActionSpace::Discrete(n_actions),
        }
    }

    fn input_width(obs_dim: usize, action_space: ActionSpace, input: DiscriminatorInput) -> usize {
        match input {
            DiscriminatorInput::Concat => obs_dim + action_space.feature_dim(),
            DiscriminatorInput::Joint => obs_dim * action_space.feature_dim(),
        }
    }

    pub fn register(&self, tape: &mut Tape) -> MlpVars {
        self.net.register(tape)
    }

    /// Network input for fixed states and actions.
    pub fn encode(&self, obs: &Array2<f64>, actions: &ActionBatch) -> Result<Array2<f64>> {
        if obs.nrows() != actions.len() {
            return Err(Error::Input("state and action counts differ".into()));
        }
        match self.input {
            DiscriminatorInput::Concat => {
                let af = actions.features(self.action_space);
                Ok(ndarray::concatenate(Axis(1), &[obs.view(), af.view()]).expect("equal row counts"))
            }
            DiscriminatorInput::Joint => {
                let ActionBatch::Discrete(acts) = actions else {
                    return Err(Error::Input("joint discriminator input needs discrete actions".into()));
                };
                let n_actions = self.action_space.feature_dim();
                let idx: Vec<usize> = obs
                    .rows()
                    .into_iter()
                    .zip(acts)
                    .map(|(row, &a)| {
                        let s = row.iter().position(|&x| x == 1.0).unwrap_or(0);
                        s * n_actions + a
                    })
                    .collect();
                Ok(one_hot(&idx, obs.ncols() * n_actions))
            }
        }
    }

    /// `g` on a taped input, `n×1`.
    pub fn apply(&self, tape: &mut Tape, vars: &MlpVars, input: Var) -> Var {
        self.net.apply(tape, vars, input)
    }

    /// `g(s, a)` for fixed inputs.
    pub fn values(&self, obs: &Array2<f64>, actions: &ActionBatch) -> Result<Vec<f64>> {
        let x = self.encode(obs, actions)?;
        Ok(self.net.forward(&x)?.iter().copied().collect())
    }

    /// Flat `(s, a)` table of a joint discriminator, shape `[S, A]`.
    pub fn table_values(&self, n_states: usize) -> Result<Array2<f64>> {
        if self.input != DiscriminatorInput::Joint {
            return Err(Error::Input("table view needs the joint input encoding".into()));
        }
        let n_actions = self.action_space.feature_dim();
        let eye = Array2::eye(n_states * n_actions);
        let out = self.net.forward(&eye)?;
        Ok(out.into_shape_with_order((n_states, n_actions)).expect("S·A outputs"))
    }
}

/// How initial-state actions are paired with the `M·T` residual terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InitialActionMode {
    /// One fresh `a' ∼ π(·|s_1^{(j)})` for every `(j, t)` term.
    #[default]
    PerSample,
    /// One `a'` per rollout, shared by its `T` terms.
    PerRollout,
}

/// States at which `π` is sampled for one discriminator loss evaluation:
/// `next_obs` (one per sample) and the initial states (one per sample or per
/// rollout).
pub fn initial_obs_rows(batch: &RolloutBatch, mode: InitialActionMode) -> Array2<f64> {
    match mode {
        InitialActionMode::PerRollout => batch.initial_obs.clone(),
        InitialActionMode::PerSample => {
            let idx: Vec<usize> = (0..batch.len()).map(|i| batch.rollout_of(i)).collect();
            batch.initial_obs.select(Axis(0), &idx)
        }
    }
}

/// Which `a'` enters the residual `g(s,a) − γ g(s',a')`.
///
/// A single sampled `a'` inside the nonlinear conjugate biases the loss
/// (by Jensen's inequality); averaging `g(s', ·)` over `π(·|s')` removes the
/// part of that bias due to the action draw.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ResidualMode {
    /// The sampled `a'`.
    #[default]
    Shared,
    /// On the score path, a second independent draw inside the conjugate;
    /// the discriminator loss treats it like `Shared`.
    Independent,
    /// `Σ_{a'} π(a'|s') g(s', a')`; discrete actions only.
    Expected,
}

/// Freshly sampled policy actions used by one evaluation of the losses.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicySamples {
    pub next_actions: ActionBatch,
    pub init_obs: Array2<f64>,
    pub init_actions: ActionBatch,
    /// `π(·|s')` rows when the residual averages over `a'`.
    pub next_probs: Option<Array2<f64>>,
}

impl PolicySamples {
    pub fn draw<R: Rng + ?Sized>(
        policy: &Policy,
        next_obs: &Array2<f64>,
        init_obs: Array2<f64>,
        rng: &mut R,
    ) -> Result<Self> {
        let next_actions = policy.sample_batch(next_obs, rng)?;
        let init_actions = policy.sample_batch(&init_obs, rng)?;
        Ok(Self { next_actions, init_obs, init_actions, next_probs: None })
    }

    /// Like [`PolicySamples::draw`] (same draws from `rng`), adding the
    /// next-state action probabilities for [`ResidualMode::Expected`].
    pub fn draw_with<R: Rng + ?Sized>(
        policy: &Policy,
        next_obs: &Array2<f64>,
        init_obs: Array2<f64>,
        mode: ResidualMode,
        rng: &mut R,
    ) -> Result<Self> {
        let mut samples = Self::draw(policy, next_obs, init_obs, rng)?;
        if mode == ResidualMode::Expected {
            samples.next_probs = Some(action_probabilities(policy, next_obs)?);
        }
        Ok(samples)
    }
}

/// `π(a|s)` for every row of `obs`, `n×A`.
pub fn action_probabilities(policy: &Policy, obs: &Array2<f64>) -> Result<Array2<f64>> {
    let ActionSpace::Discrete(n_actions) = policy.action_space() else {
        return Err(Error::Capability("averaging over next actions needs a discrete action space".into()));
    };
    let dists = policy.distributions(obs)?;
    let mut probs = Array2::zeros((obs.nrows(), n_actions));
    for (i, d) in dists.iter().enumerate() {
        if let crate::nn::Distribution::Categorical(p) = d {
            for (b, &pb) in p.iter().enumerate() {
                probs[[i, b]] = pb;
            }
        }
    }
    Ok(probs)
}

/// `Σ_b p[:, b] g(s', b)` as a taped `n×1` column.
fn expected_next_value(
    tape: &mut Tape,
    disc: &Discriminator,
    vars: &MlpVars,
    next_obs: &Array2<f64>,
    probs: &Array2<f64>,
) -> Result<Var> {
    let n = next_obs.nrows();
    let mut total: Option<Var> = None;
    for b in 0..probs.ncols() {
        let x = tape.constant(disc.encode(next_obs, &ActionBatch::Discrete(vec![b; n]))?);
        let g = disc.apply(tape, vars, x);
        let w = tape.constant(probs.column(b).to_owned().insert_axis(Axis(1)));
        let term = tape.mul(g, w);
        total = Some(match total {
            Some(t) => tape.add(t, term),
            None => term,
        });
    }
    total.ok_or_else(|| Error::Input("no actions".into()))
}

/// Samples `(s_t, a_t, s_{t+1})` and the states used for the `a'` draws.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionSample {
    pub obs: Array2<f64>,
    pub actions: ActionBatch,
    pub next_obs: Array2<f64>,
}

impl TransitionSample {
    /// Uses the sampling chain's continuation as `s'`, so a terminal
    /// transition leads back to an initial state the way the data does.
    pub fn from_batch(batch: &RolloutBatch) -> Self {
        Self {
            obs: batch.obs.clone(),
            actions: batch.actions.clone(),
            next_obs: batch.continuation_obs.clone(),
        }
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        Self {
            obs: self.obs.select(Axis(0), idx),
            actions: self.actions.select(idx),
            next_obs: self.next_obs.select(Axis(0), idx),
        }
    }
}

/// Discriminator loss on a tape with fixed `a'` samples. Returns the loss
/// and the discriminator's handles.
pub fn discriminator_loss_taped(
    tape: &mut Tape,
    disc: &Discriminator,
    data: &TransitionSample,
    samples: &PolicySamples,
    gamma: f64,
    spec: DivergenceSpec,
) -> Result<(Var, MlpVars)> {
    if data.obs.nrows() == 0 || samples.init_obs.nrows() == 0 {
        return Err(Error::Input("empty batch".into()));
    }
    let vars = disc.register(tape);
    let x_sa = tape.constant(disc.encode(&data.obs, &data.actions)?);
    let x_next = tape.constant(disc.encode(&data.next_obs, &samples.next_actions)?);
    let x_init = tape.constant(disc.encode(&samples.init_obs, &samples.init_actions)?);
    let g_sa = disc.apply(tape, &vars, x_sa);
    let g_next = match &samples.next_probs {
        Some(p) => expected_next_value(tape, disc, &vars, &data.next_obs, p)?,
        None => disc.apply(tape, &vars, x_next),
    };
    let g_init = disc.apply(tape, &vars, x_init);
    Ok((dice_objective(tape, spec, gamma, g_sa, g_next, g_init, None), vars))
}

/// Loss value and `ψ`-gradient (flat, in `MlpParams::to_flat` order).
pub fn discriminator_loss_and_grad(
    disc: &Discriminator,
    data: &TransitionSample,
    samples: &PolicySamples,
    gamma: f64,
    spec: DivergenceSpec,
) -> Result<(f64, Vec<f64>)> {
    let mut tape = Tape::new();
    let (loss, vars) = discriminator_loss_taped(&mut tape, disc, data, samples, gamma, spec)?;
    let grads = tape.backward(loss);
    Ok((tape.scalar(loss), vars.flat_grad(&tape, &grads)))
}

/// How the sampled losses pair policy actions with the batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SampleOptions {
    pub initial: InitialActionMode,
    pub residual: ResidualMode,
}

/// Discriminator loss for a variational spec, drawing fresh `a'` samples.
pub fn dice_discriminator_loss<R: Rng + ?Sized>(
    disc: &Discriminator,
    batch: &RolloutBatch,
    policy: &Policy,
    gamma: f64,
    spec: DivergenceSpec,
    opts: SampleOptions,
    rng: &mut R,
) -> Result<f64> {
    if spec.representation != Representation::VariationalDice {
        return Err(Error::Config("expected the variational representation".into()));
    }
    sampled_loss(disc, batch, policy, gamma, spec, opts, rng)
}

/// Donsker-Varadhan loss for KL, drawing fresh `a'` samples.
pub fn donsker_varadhan_loss<R: Rng + ?Sized>(
    disc: &Discriminator,
    batch: &RolloutBatch,
    policy: &Policy,
    gamma: f64,
    opts: SampleOptions,
    rng: &mut R,
) -> Result<f64> {
    sampled_loss(disc, batch, policy, gamma, DivergenceSpec::kl_dv(), opts, rng)
}

fn sampled_loss<R: Rng + ?Sized>(
    disc: &Discriminator,
    batch: &RolloutBatch,
    policy: &Policy,
    gamma: f64,
    spec: DivergenceSpec,
    opts: SampleOptions,
    rng: &mut R,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Input("empty batch".into()));
    }
    let init = initial_obs_rows(batch, opts.initial);
    let data = TransitionSample::from_batch(batch);
    let samples = PolicySamples::draw_with(policy, &data.next_obs, init, opts.residual, rng)?;
    let mut tape = Tape::new();
    let (loss, _) = discriminator_loss_taped(&mut tape, disc, &data, &samples, gamma, spec)?;
    Ok(tape.scalar(loss))
}

/// Negated discriminator loss: a lower bound on the divergence when `g` is
/// not optimal, so it may be negative.
pub fn divergence_estimate<R: Rng + ?Sized>(
    disc: &Discriminator,
    batch: &RolloutBatch,
    policy: &Policy,
    gamma: f64,
    spec: DivergenceSpec,
    opts: SampleOptions,
    rng: &mut R,
) -> Result<f64> {
    Ok(-sampled_loss(disc, batch, policy, gamma, spec, opts, rng)?)
}

/// Per-sample terms of one evaluation with fixed `a'` samples.
pub fn batch_terms(
    disc: &Discriminator,
    data: &TransitionSample,
    samples: &PolicySamples,
    gamma: f64,
) -> Result<DiscriminatorBatchTerms> {
    let g_sa = disc.values(&data.obs, &data.actions)?;
    let g_next = match &samples.next_probs {
        Some(p) => {
            let mut acc = vec![0.0; data.next_obs.nrows()];
            for b in 0..p.ncols() {
                let gb = disc.values(&data.next_obs, &ActionBatch::Discrete(vec![b; acc.len()]))?;
                for (i, v) in acc.iter_mut().enumerate() {
                    *v += p[[i, b]] * gb[i];
                }
            }
            acc
        }
        None => disc.values(&data.next_obs, &samples.next_actions)?,
    };
    let initial_term = disc.values(&samples.init_obs, &samples.init_actions)?;
    Ok(DiscriminatorBatchTerms {
        initial_term,
        bellman_residuals: g_sa.iter().zip(&g_next).map(|(a, b)| a - gamma * b).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    const KINDS: [DivergenceKind; 3] =
        [DivergenceKind::Kl, DivergenceKind::ChiSquared, DivergenceKind::TotalVariation];

    #[test]
    fn conjugate_examples() {
        assert_eq!(DivergenceKind::Kl.conjugate(1.0), 1.0);
        assert_eq!(DivergenceKind::ChiSquared.conjugate(0.0), 0.0);
        assert_eq!(DivergenceKind::TotalVariation.conjugate(0.4), 0.4);
        assert_eq!(DivergenceKind::TotalVariation.conjugate(0.6), f64::INFINITY);
        assert_eq!(DivergenceKind::Kl.conjugate_derivative(1.0), 1.0);
    }

    #[test]
    fn generators_are_convex_and_vanish_at_one() {
        for kind in KINDS {
            assert_eq!(kind.phi(1.0), 0.0);
            for i in 1..200 {
                let a = i as f64 * 0.05;
                let b = a * 1.7 + 0.3;
                let mid = kind.phi(0.5 * (a + b));
                assert!(mid <= 0.5 * (kind.phi(a) + kind.phi(b)) + 1e-9, "{kind:?} at {a}, {b}");
            }
        }
    }

    #[test]
    fn conjugates_match_grid_maximization() {
        let grid: Vec<f64> = (0..=200_000).map(|i| 1e-4 + (20.0 - 1e-4) * i as f64 / 200_000.0).collect();
        for kind in KINDS {
            for k in 0..=50 {
                let t = -2.0 + 5.0 * k as f64 / 50.0;
                let exact = kind.conjugate(t);
                if !exact.is_finite() {
                    continue;
                }
                let brute = grid.iter().map(|&u| t * u - kind.phi(u)).fold(f64::NEG_INFINITY, f64::max);
                // The KL maximizer e^{t−1} must lie inside the grid.
                if kind == DivergenceKind::Kl && (t - 1.0).exp() > 20.0 {
                    continue;
                }
                assert!((exact - brute).abs() < 1e-4, "{kind:?} t={t}: {exact} vs {brute}");
            }
        }
    }

    #[test]
    fn dv_only_for_kl() {
        assert!(DivergenceSpec::new(DivergenceKind::ChiSquared, Representation::DonskerVaradhan).is_err());
        assert!(DivergenceSpec::new(DivergenceKind::Kl, Representation::DonskerVaradhan).is_ok());
    }

    fn constant_columns(tape: &mut Tape, c: f64, n: usize) -> (Var, Var, Var) {
        let a = tape.leaf(Array2::from_elem((n, 1), c));
        let b = tape.leaf(Array2::from_elem((n, 1), c));
        let i = tape.leaf(Array2::from_elem((n, 1), c));
        (a, b, i)
    }

    #[test]
    fn constant_witness_kl() {
        let gamma = 0.9;
        for (c, expected) in [
            (0.0, (-1.0f64).exp()),
            (1.0 / (1.0 - gamma), 0.0),
        ] {
            let mut tape = Tape::new();
            let (a, b, i) = constant_columns(&mut tape, c, 7);
            let loss = dice_objective(&mut tape, DivergenceSpec::kl_dice(), gamma, a, b, i, None);
            let want = ((1.0 - gamma) * c - 1.0).exp() - (1.0 - gamma) * c;
            assert!((tape.scalar(loss) - want).abs() < 1e-12);
            assert!((tape.scalar(loss) - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_witness_dv_is_zero() {
        let mut tape = Tape::new();
        let (a, b, i) = constant_columns(&mut tape, 3.7, 5);
        let loss = dice_objective(&mut tape, DivergenceSpec::kl_dv(), 0.8, a, b, i, None);
        assert!(tape.scalar(loss).abs() < 1e-12);
    }

    #[test]
    fn zero_discount_is_plain_variational_form() {
        let mut tape = Tape::new();
        let g_sa = tape.leaf(array![[0.2], [-0.4], [1.1]]);
        let g_next = tape.leaf(array![[5.0], [6.0], [7.0]]);
        let g_init = tape.leaf(array![[0.3], [0.9], [-0.2]]);
        let loss = dice_objective(&mut tape, DivergenceSpec::chi2(), 0.0, g_sa, g_next, g_init, None);
        let conj: f64 = [0.2f64, -0.4, 1.1].iter().map(|&t| t + t * t / 4.0).sum::<f64>() / 3.0;
        let want = conj - (0.3 + 0.9 - 0.2) / 3.0;
        assert!((tape.scalar(loss) - want).abs() < 1e-12);
    }

    #[test]
    fn weighted_dv_matches_direct_sum() {
        let mut tape = Tape::new();
        let g_sa = tape.leaf(array![[0.2], [-0.4], [1.1]]);
        let g_next = tape.leaf(array![[0.5], [0.1], [-0.3]]);
        let g_init = tape.leaf(array![[0.3], [0.9]]);
        let w = array![[0.2, 0.5, 0.3]];
        let wi = array![[0.4, 0.6]];
        let gamma = 0.7;
        let loss = dice_objective(&mut tape, DivergenceSpec::kl_dv(), gamma, g_sa, g_next, g_init, Some((&w, &wi)));
        let res = [0.2 - gamma * 0.5, -0.4 - gamma * 0.1, 1.1 + gamma * 0.3];
        let lse = (0.2 * res[0].exp() + 0.5 * res[1].exp() + 0.3 * res[2].exp()).ln();
        let want = lse - (1.0 - gamma) * (0.4 * 0.3 + 0.6 * 0.9);
        assert!((tape.scalar(loss) - want).abs() < 1e-12);
    }

    #[test]
    fn joint_encoding_is_pair_one_hot() {
        let d = Discriminator::table(3, 2);
        let obs = one_hot(&[2, 0], 3);
        let x = d.encode(&obs, &ActionBatch::Discrete(vec![1, 0])).unwrap();
        assert_eq!(x, one_hot(&[5, 0], 6));
        let mut t = Discriminator::table(3, 2);
        t.net.layers[0].weight = Array2::from_shape_fn((6, 1), |(i, _)| i as f64);
        assert_eq!(t.table_values(3).unwrap(), array![[0.0, 1.0], [2.0, 3.0], [4.0, 5.0]]);
    }

    #[test]
    fn tv_residuals_stay_in_domain() {
        let spec = DivergenceSpec { kind: DivergenceKind::TotalVariation, representation: Representation::VariationalDice };
        for r in [-100.0, -0.3, 0.0, 2.0, 1e6] {
            let s = spec.squash_value(r);
            assert!(s.abs() <= 0.5);
            assert!(DivergenceKind::TotalVariation.conjugate(s).is_finite());
        }
    }
}
