//! The divergence regularizer: inner discriminator updates, the adaptive
//! weight λ, and the two policy-gradient paths through the regularizer.
//!
//! The policy maximizes `L_clip + c_H·H + λ·R`, where `R` is
//!
//! * reparametrized path: the discriminator loss `L_D(ψ, θ)` with `a'`
//!   written as `mean_θ(s) + σ_θ ⊙ ξ`, so the gradient flows through the
//!   sampled actions;
//! * score-function path: `−(1/n) Σ [(1−γ) g₁ log π_θ(a'|s_1) +
//!   γ φ*'(res) g₂ log π_θ(a'_{t+1}|s_{t+1})]` with `g₁`, `g₂` and the
//!   residual held constant;
//! * all-actions path (categorical policies): the score-function surrogate
//!   with the expectation over `a'` summed exactly,
//!   `−(1/n) Σ_i Σ_b π_θ(b|s_i) w_ib`, which has the same expected gradient
//!   and none of the variance from sampling `a'`.
//!
//! All three have `∇_θ R ≈ −∇_θ D` at fixed `g`.

use ndarray::{Array2, Axis};
use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::divergence::{
    action_probabilities, discriminator_loss_and_grad, dice_objective, DivergenceSpec, Discriminator, InitialActionMode, PolicySamples,
    Representation, ResidualMode, TransitionSample,
};
use crate::error::{Error, Result};
use crate::mdp::RolloutBatch;
use crate::nn::{Policy, PolicyHead, PolicyKind, PolicyVars};
use crate::optim::Optimizer;
use crate::ppo::{clipped_surrogate, entropy_bonus, SurrogateStats};
use crate::space::ActionBatch;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LambdaMode {
    Fixed(f64),
    /// Percentile `p ∈ (0, 100]` of the batch's advantages.
    Adaptive(f64),
}

impl LambdaMode {
    /// Parses `fixed:X` or `adaptive:P`.
    pub fn parse(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("lambda mode '{s}' is not fixed:X or adaptive:P"));
        let (mode, value) = s.split_once(':').ok_or_else(bad)?;
        let x: f64 = value.trim().parse().map_err(|_| bad())?;
        let m = match mode.trim() {
            "fixed" => LambdaMode::Fixed(x),
            "adaptive" => LambdaMode::Adaptive(x),
            _ => return Err(bad()),
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            LambdaMode::Fixed(x) if !(x >= 0.0 && x.is_finite()) => {
                Err(Error::Config(format!("fixed lambda {x} must be finite and ≥ 0")))
            }
            LambdaMode::Adaptive(p) if !(p > 0.0 && p <= 100.0) => {
                Err(Error::Config(format!("percentile {p} outside (0, 100]")))
            }
            _ => Ok(()),
        }
    }
}

impl std::fmt::Display for LambdaMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LambdaMode::Fixed(x) => write!(f, "fixed:{x}"),
            LambdaMode::Adaptive(p) => write!(f, "adaptive:{p}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GradientPath {
    #[default]
    Auto,
    Reparam,
    ScoreFunction,
    AllActions,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegularizerConfig {
    pub lambda_mode: LambdaMode,
    /// Take the percentile of signed advantages instead of `|Â|`.
    pub signed_percentile: bool,
    pub divergence: DivergenceSpec,
    /// Discriminator steps per epoch (`K`).
    pub k_steps: usize,
    /// Discriminator learning rate as a multiple of the policy's (`c_ψ`).
    pub lr_multiplier: f64,
    pub gradient_path: GradientPath,
    pub initial_actions: InitialActionMode,
    pub residual_mode: ResidualMode,
}

impl Default for RegularizerConfig {
    fn default() -> Self {
        Self {
            lambda_mode: LambdaMode::Adaptive(90.0),
            signed_percentile: false,
            divergence: DivergenceSpec::kl_dv(),
            k_steps: 5,
            lr_multiplier: 10.0,
            gradient_path: GradientPath::Auto,
            initial_actions: InitialActionMode::PerSample,
            residual_mode: ResidualMode::Shared,
        }
    }
}

impl RegularizerConfig {
    pub fn validate(&self) -> Result<()> {
        self.lambda_mode.validate()?;
        DivergenceSpec::new(self.divergence.kind, self.divergence.representation)?;
        if self.k_steps == 0 {
            return Err(Error::Config("discriminator steps K must be ≥ 1".into()));
        }
        if !(self.lr_multiplier > 0.0 && self.lr_multiplier.is_finite()) {
            return Err(Error::Config("discriminator learning-rate multiplier must be > 0".into()));
        }
        Ok(())
    }
}

/// Nearest-rank `p`-th percentile of `|Â|` (or of `Â` when `signed`), taken
/// over the advantages as the surrogate sees them.
pub fn adaptive_lambda(advantages: &[f64], percentile: f64, signed: bool) -> Result<f64> {
    if advantages.is_empty() {
        return Err(Error::Input("no advantages".into()));
    }
    if !(percentile > 0.0 && percentile <= 100.0) {
        return Err(Error::Config(format!("percentile {percentile} outside (0, 100]")));
    }
    let mut v: Vec<f64> = advantages
        .iter()
        .map(|&a| if signed { a } else { a.abs() })
        .collect();
    v.sort_by(f64::total_cmp);
    let rank = ((percentile / 100.0) * v.len() as f64).ceil() as usize;
    Ok(v[rank.clamp(1, v.len()) - 1])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResolvedPath {
    Reparam,
    ScoreFunction,
    AllActions,
}

pub fn choose_gradient_path(kind: PolicyKind, requested: GradientPath) -> ResolvedPath {
    match (requested, kind) {
        (GradientPath::Reparam, _) => ResolvedPath::Reparam,
        (GradientPath::ScoreFunction, _) => ResolvedPath::ScoreFunction,
        (GradientPath::AllActions, _) => ResolvedPath::AllActions,
        (GradientPath::Auto, PolicyKind::Gaussian) => ResolvedPath::Reparam,
        (GradientPath::Auto, PolicyKind::Categorical) => ResolvedPath::AllActions,
    }
}

/// Initial-state rows paired with the samples `idx` of `batch`.
pub fn initial_rows_for(batch: &RolloutBatch, idx: &[usize], mode: InitialActionMode) -> Array2<f64> {
    let rows: Vec<usize> = match mode {
        InitialActionMode::PerSample => idx.iter().map(|&i| batch.rollout_of(i)).collect(),
        InitialActionMode::PerRollout => {
            let mut r: Vec<usize> = idx.iter().map(|&i| batch.rollout_of(i)).collect();
            r.sort_unstable();
            r.dedup();
            r
        }
    };
    batch.initial_obs.select(Axis(0), &rows)
}

/// `K` descent steps on the discriminator loss, each with fresh `a'`
/// samples. Returns the loss before every step.
#[allow(clippy::too_many_arguments)]
pub fn discriminator_loop<R: Rng + ?Sized>(
    disc: &mut Discriminator,
    opt: &mut Optimizer,
    data: &TransitionSample,
    init_obs: &Array2<f64>,
    policy: &Policy,
    spec: DivergenceSpec,
    gamma: f64,
    k_steps: usize,
    residual: ResidualMode,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let mut losses = Vec::with_capacity(k_steps);
    for step in 0..k_steps {
        let samples = PolicySamples::draw_with(policy, &data.next_obs, init_obs.clone(), residual, rng)?;
        let (loss, grad) = discriminator_loss_and_grad(disc, data, &samples, gamma, spec)?;
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Numerical(format!("discriminator loss {loss} at inner step {step}")));
        }
        losses.push(loss);
        let mut flat = disc.net.to_flat();
        opt.step(&mut flat, &grad);
        disc.net.set_flat(&flat);
    }
    Ok(losses)
}

/// Regularizer inputs for one policy step.
#[derive(Debug, Clone, Copy)]
pub struct RegTerm<'a> {
    pub disc: &'a Discriminator,
    pub data: &'a TransitionSample,
    pub init_obs: &'a Array2<f64>,
    pub lambda: f64,
    pub spec: DivergenceSpec,
    pub gamma: f64,
    pub path: ResolvedPath,
    pub residual_mode: ResidualMode,
}

/// `L_D(ψ, θ)` with reparametrized `a'`; depends on `θ` through the actions.
pub fn reparam_reg_term(
    tape: &mut Tape,
    policy: &Policy,
    pvars: &PolicyVars,
    term: &RegTerm,
    noise_next: &Array2<f64>,
    noise_init: &Array2<f64>,
) -> Result<Var> {
    let disc = term.disc;
    let dvars = disc.register(tape);
    let x_sa = tape.constant(disc.encode(&term.data.obs, &term.data.actions)?);
    let s_next = tape.constant(term.data.next_obs.clone());
    let a_next = policy.reparam_taped(tape, pvars, s_next, noise_next)?;
    let x_next = tape.concat_cols(s_next, a_next);
    let s_init = tape.constant(term.init_obs.clone());
    let a_init = policy.reparam_taped(tape, pvars, s_init, noise_init)?;
    let x_init = tape.concat_cols(s_init, a_init);
    let g_sa = disc.apply(tape, &dvars, x_sa);
    let g_next = disc.apply(tape, &dvars, x_next);
    let g_init = disc.apply(tape, &dvars, x_init);
    Ok(dice_objective(tape, term.spec, term.gamma, g_sa, g_next, g_init, None))
}

/// Fixed coefficients of the score-function surrogate.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreCoefficients {
    pub init_actions: ActionBatch,
    /// `(1−γ) g(s_1, a')`.
    pub init_weights: Vec<f64>,
    pub next_actions: ActionBatch,
    /// `γ φ*'(res) g(s', a')`, or the Donsker-Varadhan analogue.
    pub next_weights: Vec<f64>,
}

/// Sample `a'` and compute the constant weights of the score surrogate.
pub fn score_coefficients<R: Rng + ?Sized>(policy: &Policy, term: &RegTerm, rng: &mut R) -> Result<ScoreCoefficients> {
    let disc = term.disc;
    let data = term.data;
    let gamma = term.gamma;
    let samples = PolicySamples::draw(policy, &data.next_obs, term.init_obs.clone(), rng)?;
    let g_sa = disc.values(&data.obs, &data.actions)?;
    let g_next = disc.values(&data.next_obs, &samples.next_actions)?;
    let g_init = disc.values(&samples.init_obs, &samples.init_actions)?;
    let g_inner: Vec<f64> = match term.residual_mode {
        ResidualMode::Shared => g_next.clone(),
        ResidualMode::Independent => {
            let other = policy.sample_batch(&data.next_obs, rng)?;
            disc.values(&data.next_obs, &other)?
        }
        ResidualMode::Expected => {
            let probs = action_probabilities(policy, &data.next_obs)?;
            let mut avg = vec![0.0; probs.nrows()];
            for b in 0..probs.ncols() {
                let gb = disc.values(&data.next_obs, &ActionBatch::Discrete(vec![b; avg.len()]))?;
                for (i, v) in avg.iter_mut().enumerate() {
                    *v += probs[[i, b]] * gb[i];
                }
            }
            avg
        }
    };
    let residuals: Vec<f64> = g_sa.iter().zip(&g_inner).map(|(a, b)| a - gamma * b).collect();
    let slopes: Vec<f64> = match term.spec.representation {
        Representation::VariationalDice => residuals.iter().map(|&r| term.spec.conjugate_derivative_raw(r)).collect(),
        Representation::DonskerVaradhan => {
            let max = residuals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = residuals.iter().map(|r| (r - max).exp()).collect();
            let mean = e.iter().sum::<f64>() / e.len() as f64;
            e.into_iter().map(|x| x / mean).collect()
        }
    };
    Ok(ScoreCoefficients {
        init_actions: samples.init_actions,
        init_weights: g_init.iter().map(|g| (1.0 - gamma) * g).collect(),
        next_actions: samples.next_actions,
        next_weights: slopes.iter().zip(&g_next).map(|(s, g)| gamma * s * g).collect(),
    })
}

/// `−[mean(w₁ log π(a'|s_1)) + mean(w₂ log π(a'|s'))]` on the tape.
pub fn score_reg_term(
    tape: &mut Tape,
    policy: &Policy,
    pvars: &PolicyVars,
    term: &RegTerm,
    coef: &ScoreCoefficients,
) -> Var {
    let s_init = tape.constant(term.init_obs.clone());
    let lp_init = policy.log_prob_taped(tape, pvars, s_init, &coef.init_actions);
    let w_init = tape.constant(column(&coef.init_weights));
    let a = tape.mul(lp_init, w_init);
    let a = tape.mean(a);
    let s_next = tape.constant(term.data.next_obs.clone());
    let lp_next = policy.log_prob_taped(tape, pvars, s_next, &coef.next_actions);
    let w_next = tape.constant(column(&coef.next_weights));
    let b = tape.mul(lp_next, w_next);
    let b = tape.mean(b);
    let total = tape.add(a, b);
    tape.neg(total)
}

/// Weights of the all-actions surrogate; entry `(i, b)` multiplies
/// `π_θ(b|s_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AllActionWeights {
    /// `(1−γ) g(s_1, b)`.
    pub init: Array2<f64>,
    /// `γ φ*'(res) g(s', b)` averaged over whatever `res` depends on
    /// besides `b`.
    pub next: Array2<f64>,
}

fn values_per_action(disc: &Discriminator, obs: &Array2<f64>, n_actions: usize) -> Result<Array2<f64>> {
    let mut out = Array2::zeros((obs.nrows(), n_actions));
    for b in 0..n_actions {
        let g = disc.values(obs, &ActionBatch::Discrete(vec![b; obs.nrows()]))?;
        out.column_mut(b).assign(&ndarray::Array1::from(g));
    }
    Ok(out)
}

pub fn all_action_weights(policy: &Policy, term: &RegTerm) -> Result<AllActionWeights> {
    let PolicyHead::Categorical { n_actions } = policy.head else {
        return Err(Error::Capability("the all-actions path needs a categorical policy".into()));
    };
    let (disc, data, gamma) = (term.disc, term.data, term.gamma);
    let g_sa = disc.values(&data.obs, &data.actions)?;
    let g_next = values_per_action(disc, &data.next_obs, n_actions)?;
    let g_init = values_per_action(disc, term.init_obs, n_actions)?;
    let probs = action_probabilities(policy, &data.next_obs)?;
    let n = g_sa.len();

    let mut res = Array2::zeros((n, n_actions));
    for i in 0..n {
        let expected: f64 = (0..n_actions).map(|b| probs[[i, b]] * g_next[[i, b]]).sum();
        for b in 0..n_actions {
            res[[i, b]] = match term.residual_mode {
                ResidualMode::Expected => g_sa[i] - gamma * expected,
                ResidualMode::Shared | ResidualMode::Independent => g_sa[i] - gamma * g_next[[i, b]],
            };
        }
    }
    let mut slope = match term.spec.representation {
        Representation::VariationalDice => res.mapv(|r| term.spec.conjugate_derivative_raw(r)),
        Representation::DonskerVaradhan => {
            let max = res.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let e = res.mapv(|r| (r - max).exp());
            let norm = match term.residual_mode {
                ResidualMode::Expected => e.column(0).sum() / n as f64,
                _ => (&e * &probs).sum() / n as f64,
            };
            e / norm
        }
    };
    if term.residual_mode == ResidualMode::Independent {
        for i in 0..n {
            let avg: f64 = (0..n_actions).map(|c| probs[[i, c]] * slope[[i, c]]).sum();
            slope.row_mut(i).fill(avg);
        }
    }
    Ok(AllActionWeights {
        init: g_init.mapv(|g| (1.0 - gamma) * g),
        next: slope * g_next * gamma,
    })
}

fn expected_weighted(tape: &mut Tape, policy: &Policy, pvars: &PolicyVars, obs: &Array2<f64>, w: &Array2<f64>) -> Var {
    let s = tape.constant(obs.clone());
    let logits = policy.net.apply(tape, &pvars.net, s);
    let lsm = tape.log_softmax(logits);
    let p = tape.exp(lsm);
    let w = tape.constant(w.clone());
    let pw = tape.mul(p, w);
    let total = tape.sum(pw);
    tape.scale(total, 1.0 / obs.nrows() as f64)
}

/// `−(1/n) Σ_i Σ_b π_θ(b|s_i) w_ib` over the initial and next states.
pub fn all_actions_reg_term(
    tape: &mut Tape,
    policy: &Policy,
    pvars: &PolicyVars,
    term: &RegTerm,
    w: &AllActionWeights,
) -> Var {
    let a = expected_weighted(tape, policy, pvars, term.init_obs, &w.init);
    let b = expected_weighted(tape, policy, pvars, &term.data.next_obs, &w.next);
    let total = tape.add(a, b);
    tape.neg(total)
}

fn column(v: &[f64]) -> Array2<f64> {
    Array2::from_shape_vec((v.len(), 1), v.to_vec()).expect("column")
}

/// Inputs of one clipped-surrogate policy step.
#[derive(Debug, Clone, Copy)]
pub struct PolicyStep<'a> {
    pub obs: &'a Array2<f64>,
    pub actions: &'a ActionBatch,
    pub old_log_probs: &'a [f64],
    pub advantages: &'a [f64],
    pub epsilon: f64,
    pub clip: bool,
    pub entropy_coef: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyObjective {
    /// `L_clip + c_H·H + λ·R`, to be maximized.
    pub objective: f64,
    pub surrogate: f64,
    pub entropy: f64,
    /// `R` (zero when the regularizer is off).
    pub reg_value: f64,
    /// Gradient of `objective` in `Policy::to_flat` order.
    pub grad: Vec<f64>,
    pub stats: SurrogateStats,
}

/// Builds the full policy objective and its gradient. When `reg` is `None`
/// or has `λ = 0` the regularizer is left off the tape entirely and `rng`
/// is not touched.
pub fn policy_objective<R: Rng + ?Sized>(
    policy: &Policy,
    step: &PolicyStep,
    reg: Option<&RegTerm>,
    rng: &mut R,
) -> Result<PolicyObjective> {
    let mut tape = Tape::new();
    let pvars = policy.register(&mut tape);
    let s = tape.constant(step.obs.clone());
    let lp = policy.log_prob_taped(&mut tape, &pvars, s, step.actions);
    let (surr, stats) = clipped_surrogate(&mut tape, lp, step.old_log_probs, step.advantages, step.epsilon, step.clip);
    let h = entropy_bonus(&mut tape, policy, &pvars, s);
    let h_term = tape.scale(h, step.entropy_coef);
    let mut objective = tape.add(surr, h_term);
    let mut reg_value = 0.0;
    if let Some(term) = reg.filter(|t| t.lambda != 0.0) {
        let r = match term.path {
            ResolvedPath::Reparam => {
                let noise_next = policy.reparam_noise(term.data.next_obs.nrows(), rng)?;
                let noise_init = policy.reparam_noise(term.init_obs.nrows(), rng)?;
                reparam_reg_term(&mut tape, policy, &pvars, term, &noise_next, &noise_init)?
            }
            ResolvedPath::ScoreFunction => {
                let coef = score_coefficients(policy, term, rng)?;
                score_reg_term(&mut tape, policy, &pvars, term, &coef)
            }
            ResolvedPath::AllActions => {
                let w = all_action_weights(policy, term)?;
                all_actions_reg_term(&mut tape, policy, &pvars, term, &w)
            }
        };
        reg_value = tape.scalar(r);
        let weighted = tape.scale(r, term.lambda);
        objective = tape.add(objective, weighted);
    }
    let grads = tape.backward(objective);
    let grad = policy.flat_grad(&pvars, &tape, &grads);
    Ok(PolicyObjective {
        objective: tape.scalar(objective),
        surrogate: tape.scalar(surr),
        entropy: tape.scalar(h),
        reg_value,
        grad,
        stats,
    })
}
