//! Exact quantities on small tabular MDPs: values, discounted visitation
//! distributions, performance, φ-divergences between visitations, and the
//! performance-difference identity and lower bound built from them.
//!
//! `d` and `μ` are normalized (they sum to one) and `J(π) = (1−γ) ρᵀ V^π`.

use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, Array2, Axis};
use rand::Rng;

use crate::divergence::DivergenceKind;
use crate::error::{Error, Result};
use crate::mdp::TabularMdp;
use crate::nn::{Activation, MlpParams, Policy, PolicyHead};

/// Largest `S·A` the oracle accepts.
pub const MAX_PAIRS: usize = 4096;
const SOLVE_TOL: f64 = 1e-10;
const FAIL_TOL: f64 = 1e-8;

/// Stochastic matrix `π(a|s)`, shape `[S, A]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularPolicy {
    pub probs: Array2<f64>,
}

impl TabularPolicy {
    pub fn new(probs: Array2<f64>) -> Result<Self> {
        for (s, row) in probs.rows().into_iter().enumerate() {
            if row.iter().any(|&p| p < 0.0 || !p.is_finite()) || (row.sum() - 1.0).abs() > 1e-12 {
                return Err(Error::Input(format!("policy row {s} is not a probability vector")));
            }
        }
        Ok(Self { probs })
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        Self {
            probs: Array2::from_elem((n_states, n_actions), 1.0 / n_actions as f64),
        }
    }

    pub fn deterministic(actions: &[usize], n_actions: usize) -> Self {
        let mut probs = Array2::zeros((actions.len(), n_actions));
        for (s, &a) in actions.iter().enumerate() {
            probs[[s, a]] = 1.0;
        }
        Self { probs }
    }

    /// Rows drawn from a flat Dirichlet; every entry is positive almost surely.
    pub fn random<R: Rng + ?Sized>(n_states: usize, n_actions: usize, rng: &mut R) -> Self {
        let mut probs = Array2::from_shape_simple_fn((n_states, n_actions), || -(1.0 - rng.random::<f64>()).ln());
        for mut row in probs.rows_mut() {
            let total = row.sum();
            row.mapv_inplace(|x| x / total);
        }
        Self { probs }
    }

    /// Row-wise softmax of a logit table.
    pub fn softmax(logits: &Array2<f64>) -> Self {
        let mut probs = logits.clone();
        for mut row in probs.rows_mut() {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            row.mapv_inplace(|x| (x - max).exp());
            let total = row.sum();
            row.mapv_inplace(|x| x / total);
        }
        Self { probs }
    }

    /// Action probabilities of a categorical network evaluated at every
    /// one-hot state.
    pub fn from_policy(policy: &Policy, n_states: usize) -> Result<Self> {
        if !matches!(policy.head, PolicyHead::Categorical { .. }) || policy.obs_dim() != n_states {
            return Err(Error::Input("need a categorical policy over one-hot states".into()));
        }
        let logits = policy.net.forward(&Array2::eye(n_states))?;
        Ok(Self::softmax(&logits))
    }

    /// Categorical policy over one-hot states with logits `log π`; zero
    /// probabilities become a logit of −1e3.
    pub fn to_policy(&self) -> Policy {
        let (s_n, a_n) = self.probs.dim();
        let mut net = MlpParams::zeros(&[s_n, a_n], Activation::Tanh);
        net.layers[0].weight = self.probs.mapv(|p| if p > 0.0 { p.ln() } else { -1e3 });
        Policy { net, head: PolicyHead::Categorical { n_actions: a_n } }
    }

    pub fn n_states(&self) -> usize {
        self.probs.nrows()
    }

    pub fn n_actions(&self) -> usize {
        self.probs.ncols()
    }

    /// Greedy with respect to `q`; ties go to the lowest action index.
    pub fn greedy(q: &Array2<f64>) -> Self {
        let actions: Vec<usize> = q
            .rows()
            .into_iter()
            .map(|row| {
                let best = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                row.iter().position(|&x| x >= best - 1e-12).expect("non-empty row")
            })
            .collect();
        Self::deterministic(&actions, q.ncols())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExactQuantities {
    pub value: Array1<f64>,
    pub qvalue: Array2<f64>,
    pub advantage: Array2<f64>,
    pub state_visitation: Array1<f64>,
    pub sa_visitation: Array2<f64>,
    pub performance: f64,
}

fn check_pair(mdp: &TabularMdp, pi: &TabularPolicy) -> Result<()> {
    if pi.n_states() != mdp.n_states() || pi.n_actions() != mdp.n_actions() {
        return Err(Error::Input("policy shape does not match the MDP".into()));
    }
    if mdp.n_states() * mdp.n_actions() > MAX_PAIRS {
        return Err(Error::Input(format!(
            "oracle limited to S·A ≤ {MAX_PAIRS}, got {}",
            mdp.n_states() * mdp.n_actions()
        )));
    }
    Ok(())
}

/// `P_π(s'|s) = Σ_a π(a|s) P(s'|s,a)`.
pub fn state_transition(mdp: &TabularMdp, pi: &TabularPolicy) -> Array2<f64> {
    let n = mdp.n_states();
    let mut p = Array2::zeros((n, n));
    for s in 0..n {
        for a in 0..mdp.n_actions() {
            let w = pi.probs[[s, a]];
            if w != 0.0 {
                p.row_mut(s).scaled_add(w, &mdp.transition.index_axis(Axis(0), s).index_axis(Axis(0), a));
            }
        }
    }
    p
}

/// `r_π(s) = Σ_a π(a|s) r(s,a)`.
pub fn policy_reward(mdp: &TabularMdp, pi: &TabularPolicy) -> Array1<f64> {
    (&mdp.reward * &pi.probs).sum_axis(Axis(1))
}

/// Solve `(I − γ M) x = b` densely, polish with fixed-point sweeps if the
/// residual is above tolerance, and fail if it stays above `FAIL_TOL`.
fn solve_discounted(m: &Array2<f64>, gamma: f64, b: &Array1<f64>) -> Result<Array1<f64>> {
    let n = b.len();
    let a = DMatrix::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.0 } - gamma * m[[i, j]]);
    let rhs = DVector::from_iterator(n, b.iter().copied());
    let mut x = match a.lu().solve(&rhs) {
        Some(sol) => Array1::from_iter(sol.iter().copied()),
        None => Array1::zeros(n),
    };
    let residual = |x: &Array1<f64>| (b + &(gamma * m.dot(x)) - x).iter().fold(0.0f64, |acc, r| acc.max(r.abs()));
    let mut res = residual(&x);
    let mut sweeps = 0;
    while (res.is_nan() || res >= SOLVE_TOL) && sweeps < 100_000 {
        x = b + &(gamma * m.dot(&x));
        res = residual(&x);
        sweeps += 1;
    }
    if res.is_nan() || res >= FAIL_TOL {
        return Err(Error::Numerical(format!("linear solve residual {res:e}")));
    }
    Ok(x)
}

/// `V^π`, `Q^π` and `A^π = Q^π − V^π`.
pub fn exact_value(mdp: &TabularMdp, pi: &TabularPolicy) -> Result<(Array1<f64>, Array2<f64>, Array2<f64>)> {
    check_pair(mdp, pi)?;
    let v = solve_discounted(&state_transition(mdp, pi), mdp.discount, &policy_reward(mdp, pi))?;
    let (n, na) = (mdp.n_states(), mdp.n_actions());
    let mut q = mdp.reward.clone();
    for s in 0..n {
        for a in 0..na {
            let next = mdp.transition.index_axis(Axis(0), s).index_axis(Axis(0), a).dot(&v);
            q[[s, a]] += mdp.discount * next;
        }
    }
    let adv = &q - &v.view().insert_axis(Axis(1));
    Ok((v, q, adv))
}

/// Largest violation of `V = r_π + γ P_π V`.
pub fn value_residual(mdp: &TabularMdp, pi: &TabularPolicy, v: &Array1<f64>) -> f64 {
    let rhs = policy_reward(mdp, pi) + mdp.discount * state_transition(mdp, pi).dot(v);
    (&rhs - v).iter().fold(0.0, |acc, r| acc.max(r.abs()))
}

/// Normalized discounted visitations `d^π_ρ` and `μ^π_ρ(s,a) = d(s) π(a|s)`.
pub fn exact_visitation(mdp: &TabularMdp, pi: &TabularPolicy) -> Result<(Array1<f64>, Array2<f64>)> {
    check_pair(mdp, pi)?;
    let pt = state_transition(mdp, pi).t().to_owned();
    let d = solve_discounted(&pt, mdp.discount, &((1.0 - mdp.discount) * &mdp.initial_dist))?;
    let mu = &pi.probs * &d.view().insert_axis(Axis(1));
    let res = visitation_residual(mdp, pi, &mu);
    if res.is_nan() || res >= FAIL_TOL {
        return Err(Error::Numerical(format!("visitation fixed-point residual {res:e}")));
    }
    Ok((d, mu))
}

/// Largest violation of
/// `μ(s',a') = (1−γ) ρ(s') π(a'|s') + γ π(a'|s') Σ_{s,a} P(s'|s,a) μ(s,a)`.
pub fn visitation_residual(mdp: &TabularMdp, pi: &TabularPolicy, mu: &Array2<f64>) -> f64 {
    let (n, na) = (mdp.n_states(), mdp.n_actions());
    let mut inflow = Array1::<f64>::zeros(n);
    for s in 0..n {
        for a in 0..na {
            let m = mu[[s, a]];
            if m != 0.0 {
                inflow.scaled_add(m, &mdp.transition.index_axis(Axis(0), s).index_axis(Axis(0), a));
            }
        }
    }
    let mut worst: f64 = 0.0;
    for s2 in 0..n {
        let base = (1.0 - mdp.discount) * mdp.initial_dist[s2] + mdp.discount * inflow[s2];
        for a2 in 0..na {
            worst = worst.max((mu[[s2, a2]] - pi.probs[[s2, a2]] * base).abs());
        }
    }
    worst
}

/// `J(π) = (1−γ) ρᵀ V^π`.
pub fn exact_performance(mdp: &TabularMdp, pi: &TabularPolicy) -> Result<f64> {
    let (v, _, _) = exact_value(mdp, pi)?;
    Ok((1.0 - mdp.discount) * mdp.initial_dist.dot(&v))
}

/// `J` through the visitation: `Σ μ(s,a) r(s,a)`.
pub fn exact_performance_dual(mdp: &TabularMdp, pi: &TabularPolicy) -> Result<f64> {
    let (_, mu) = exact_visitation(mdp, pi)?;
    Ok((&mu * &mdp.reward).sum())
}

pub fn exact_quantities(mdp: &TabularMdp, pi: &TabularPolicy) -> Result<ExactQuantities> {
    let (value, qvalue, advantage) = exact_value(mdp, pi)?;
    let (state_visitation, sa_visitation) = exact_visitation(mdp, pi)?;
    let performance = (1.0 - mdp.discount) * mdp.initial_dist.dot(&value);
    Ok(ExactQuantities {
        value,
        qvalue,
        advantage,
        state_visitation,
        sa_visitation,
        performance,
    })
}

/// Which distribution sits inside `φ` in [`exact_phi_divergence`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ArgumentOrder {
    /// `Σ μ'(x) φ(μ(x)/μ'(x))`: expectation under the target of `φ` of the
    /// base-to-target ratio. For KL this is `KL(μ ‖ μ')`, the reverse of the
    /// usual reading of `D(μ' ‖ μ)`.
    #[default]
    TargetWeighted,
    /// `Σ μ(x) φ(μ'(x)/μ(x))`. For KL this is `Σ μ' log(μ'/μ)`. The
    /// discriminator losses estimate this form.
    BaseWeighted,
}

/// `Σ_x w(x) φ(n(x)/w(x))` with the limiting conventions `0·φ(0/0) = 0`
/// and `0·φ(n/0) = n · lim φ(t)/t`.
fn csiszar(kind: DivergenceKind, weight: &[f64], numer: &[f64]) -> f64 {
    let mut total = 0.0;
    for (&w, &n) in weight.iter().zip(numer) {
        total += if w > 0.0 {
            w * kind.phi(n / w)
        } else if n > 0.0 {
            n * kind.recession_slope()
        } else {
            0.0
        };
    }
    total
}

/// Exact `D_φ` between two distributions of equal length. Returns `+∞`
/// when the divergence is infinite because of a support mismatch.
///
/// Total variation here is the un-halved `Σ|μ' − μ|`; see
/// [`total_variation`] for the halved distance.
pub fn exact_phi_divergence(
    target: &[f64],
    base: &[f64],
    kind: DivergenceKind,
    order: ArgumentOrder,
) -> Result<f64> {
    if target.len() != base.len() {
        return Err(Error::Input("distributions differ in length".into()));
    }
    for p in [target, base] {
        if p.iter().any(|&x| x < 0.0 || !x.is_finite()) || (p.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Input("argument is not a probability vector".into()));
        }
    }
    Ok(match order {
        ArgumentOrder::TargetWeighted => csiszar(kind, target, base),
        ArgumentOrder::BaseWeighted => csiszar(kind, base, target),
    })
}

/// `½ Σ |p − q|` when `halved`, else `Σ |p − q|`.
pub fn total_variation(p: &[f64], q: &[f64], halved: bool) -> f64 {
    let l1: f64 = p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum();
    if halved {
        0.5 * l1
    } else {
        l1
    }
}

/// `(J(π') − J(π), Σ_s d^{π'}(s) Σ_a π'(a|s) A^π(s,a))`.
pub fn performance_difference(mdp: &TabularMdp, pi: &TabularPolicy, pi_new: &TabularPolicy) -> Result<(f64, f64)> {
    let (_, _, adv) = exact_value(mdp, pi)?;
    let (d_new, _) = exact_visitation(mdp, pi_new)?;
    let lhs = exact_performance(mdp, pi_new)? - exact_performance(mdp, pi)?;
    let expected_adv = (&pi_new.probs * &adv).sum_axis(Axis(1));
    Ok((lhs, d_new.dot(&expected_adv)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct LowerBoundReport {
    pub j_new: f64,
    /// `L_π(π') = J(π) + Σ_s d^π(s) Σ_a π'(a|s) A^π(s,a)`.
    pub surrogate: f64,
    /// `max_s |Σ_a π'(a|s) A^π(s,a)|`.
    pub epsilon: f64,
    /// Un-halved TV between state visitations.
    pub tv_d: f64,
    /// Un-halved TV between state-action visitations.
    pub tv_mu: f64,
    /// `(2γ/(1−γ)) E_{s∼d^π} Σ_a |π'(a|s) − π(a|s)|`.
    pub tv_action_bound: f64,
    /// `Σ μ' log(μ'/μ)`.
    pub kl_mu: f64,
    pub bound_holds: bool,
    pub visitation_order_holds: bool,
    pub action_bound_holds: bool,
    /// `½ Σ|μ' − μ| ≤ sqrt(KL/2)`.
    pub pinsker_holds: bool,
}

impl LowerBoundReport {
    pub fn all_hold(&self) -> bool {
        self.bound_holds && self.visitation_order_holds && self.action_bound_holds && self.pinsker_holds
    }
}

pub fn lower_bound_check(mdp: &TabularMdp, pi: &TabularPolicy, pi_new: &TabularPolicy) -> Result<LowerBoundReport> {
    const SLACK: f64 = 1e-10;
    let (_, _, adv) = exact_value(mdp, pi)?;
    let (d, mu) = exact_visitation(mdp, pi)?;
    let (d_new, mu_new) = exact_visitation(mdp, pi_new)?;
    let j = exact_performance(mdp, pi)?;
    let j_new = exact_performance(mdp, pi_new)?;
    let expected_adv = (&pi_new.probs * &adv).sum_axis(Axis(1));
    let surrogate = j + d.dot(&expected_adv);
    let epsilon = expected_adv.iter().fold(0.0f64, |acc, x| acc.max(x.abs()));
    let flat = |a: &Array2<f64>| a.iter().copied().collect::<Vec<f64>>();
    let tv_d = total_variation(d_new.as_slice().expect("contiguous"), d.as_slice().expect("contiguous"), false);
    let tv_mu = total_variation(&flat(&mu_new), &flat(&mu), false);
    let action_tv: Array1<f64> = (&pi_new.probs - &pi.probs).mapv(f64::abs).sum_axis(Axis(1));
    let gamma = mdp.discount;
    let tv_action_bound = 2.0 * gamma / (1.0 - gamma) * d.dot(&action_tv);
    let kl_mu = exact_phi_divergence(&flat(&mu_new), &flat(&mu), DivergenceKind::Kl, ArgumentOrder::BaseWeighted)?;
    Ok(LowerBoundReport {
        j_new,
        surrogate,
        epsilon,
        tv_d,
        tv_mu,
        tv_action_bound,
        kl_mu,
        bound_holds: j_new >= surrogate - epsilon * tv_d - SLACK,
        visitation_order_holds: tv_d <= tv_mu + SLACK,
        action_bound_holds: tv_d <= tv_action_bound + SLACK,
        pinsker_holds: 0.5 * tv_mu <= (kl_mu / 2.0).sqrt() + SLACK,
    })
}

/// One exact improvement step: among `candidates`, pick the maximizer of
/// `L_π(π') − ε^π(π') · TV_d(π', π)`. Returns the index of the chosen
/// candidate and `(J(π), J(chosen))`.
pub fn improvement_step(
    mdp: &TabularMdp,
    pi: &TabularPolicy,
    candidates: &[TabularPolicy],
) -> Result<(usize, f64, f64)> {
    let mut best = (0, f64::NEG_INFINITY, 0.0);
    for (i, c) in candidates.iter().enumerate() {
        let r = lower_bound_check(mdp, pi, c)?;
        let objective = r.surrogate - r.epsilon * r.tv_d;
        if objective > best.1 {
            best = (i, objective, r.j_new);
        }
    }
    Ok((best.0, exact_performance(mdp, pi)?, best.2))
}

/// Policy iteration from the uniform policy.
pub fn optimal_policy(mdp: &TabularMdp) -> Result<(TabularPolicy, f64)> {
    let mut pi = TabularPolicy::uniform(mdp.n_states(), mdp.n_actions());
    for _ in 0..10_000 {
        let (_, q, _) = exact_value(mdp, &pi)?;
        let next = TabularPolicy::greedy(&q);
        if next == pi {
            let j = exact_performance(mdp, &pi)?;
            return Ok((pi, j));
        }
        pi = next;
    }
    Err(Error::Numerical("policy iteration did not converge".into()))
}

/// Expected undiscounted return over the first `horizon` steps, which is
/// what a capped episode collects. Terminal states pay nothing.
pub fn expected_episode_return(mdp: &TabularMdp, pi: &TabularPolicy, horizon: usize) -> Result<f64> {
    check_pair(mdp, pi)?;
    let p = state_transition(mdp, pi);
    let r = policy_reward(mdp, pi);
    let mut dist = mdp.initial_dist.clone();
    let mut total = 0.0;
    for _ in 0..horizon {
        total += dist.dot(&r);
        dist = p.t().dot(&dist);
    }
    Ok(total)
}
