//! The discriminator objective on exact expectations over a tabular MDP,
//! with `g` a table over `(s, a)` pairs.
//!
//! Samples `(s, a) ∼ μ^π` are replaced by the weights `μ^π(s, a)`, the next
//! pair `(s', a')` by the operator `P^{π'}` and the initial pair by
//! `ρ ⊗ π'`. Minimizing over `g` and negating gives the estimate that the
//! sampled loss targets.

use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, Array2, Axis};

use rand::Rng;
use rand_distr::{Distribution, weighted::WeightedIndex};

use super::{dice_objective, DivergenceSpec, Discriminator, Representation, TransitionSample};
use crate::space::{one_hot, ActionBatch};
use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::mdp::TabularMdp;
use crate::oracle::{exact_visitation, TabularPolicy};

#[derive(Debug, Clone, PartialEq)]
pub struct ExactDiceProblem {
    pub n_states: usize,
    pub n_actions: usize,
    pub gamma: f64,
    /// Flat `(s, a)` indices with positive behavior mass.
    pub support: Vec<usize>,
    /// Behavior weights on `support`, `1×k`.
    pub weights: Array2<f64>,
    /// Rows of `P^{π'}` on `support`, `k×n`.
    pub next_op: Array2<f64>,
    /// `ρ(s) π'(a|s)`, `1×n`.
    pub init_weights: Array2<f64>,
}

impl ExactDiceProblem {
    /// Objective whose optimum estimates `D(μ^{target} ‖ μ^{behavior})`.
    pub fn new(mdp: &TabularMdp, behavior: &TabularPolicy, target: &TabularPolicy) -> Result<Self> {
        let (_, mu) = exact_visitation(mdp, behavior)?;
        if target.probs.dim() != mu.dim() {
            return Err(Error::Input("target policy shape differs from the MDP".into()));
        }
        let (s_n, a_n) = mu.dim();
        let n = s_n * a_n;
        let flat_mu: Vec<f64> = mu.iter().copied().collect();
        let support: Vec<usize> = (0..n).filter(|&i| flat_mu[i] > 0.0).collect();
        let weights = Array2::from_shape_fn((1, support.len()), |(_, j)| flat_mu[support[j]]);
        let mut next_op = Array2::zeros((support.len(), n));
        for (row, &i) in support.iter().enumerate() {
            let (s, a) = (i / a_n, i % a_n);
            for s2 in 0..s_n {
                let p = mdp.transition[[s, a, s2]];
                if p == 0.0 {
                    continue;
                }
                for a2 in 0..a_n {
                    next_op[[row, s2 * a_n + a2]] += p * target.probs[[s2, a2]];
                }
            }
        }
        let init_weights =
            Array2::from_shape_fn((1, n), |(_, i)| mdp.initial_dist[i / a_n] * target.probs[[i / a_n, i % a_n]]);
        Ok(Self { n_states: s_n, n_actions: a_n, gamma: mdp.discount, support, weights, next_op, init_weights })
    }

    pub fn n_pairs(&self) -> usize {
        self.n_states * self.n_actions
    }

    /// Loss and gradient at the table `g` (length `S·A`), built with the
    /// same objective as the sampled loss.
    pub fn loss_and_grad(&self, spec: DivergenceSpec, g: &[f64]) -> (f64, Vec<f64>) {
        let n = self.n_pairs();
        let select = Array2::from_shape_fn((self.support.len(), n), |(r, c)| f64::from(self.support[r] == c));
        let mut tape = Tape::new();
        let gv = tape.leaf(Array2::from_shape_vec((n, 1), g.to_vec()).expect("table length"));
        let sel = tape.constant(select);
        let g_sa = tape.matmul(sel, gv);
        let next = tape.constant(self.next_op.clone());
        let g_next = tape.matmul(next, gv);
        let loss = dice_objective(
            &mut tape,
            spec,
            self.gamma,
            g_sa,
            g_next,
            gv,
            Some((&self.weights, &self.init_weights)),
        );
        let grads = tape.backward(loss);
        (tape.scalar(loss), grads.get_or_zeros(&tape, gv).iter().copied().collect())
    }

    pub fn loss(&self, spec: DivergenceSpec, g: &[f64]) -> f64 {
        self.loss_and_grad(spec, g).0
    }

    /// Damped Newton on the table with a finite-difference Hessian of the
    /// taped gradient and a backtracking line search.
    pub fn fit(&self, spec: DivergenceSpec, max_iter: usize, tol: f64) -> Result<ExactDiceFit> {
        let n = self.n_pairs();
        let mut g = vec![0.0; n];
        let (mut loss, mut grad) = self.loss_and_grad(spec, &g);
        let mut iterations = 0;
        while iterations < max_iter && max_abs(&grad) > tol {
            iterations += 1;
            let h = 1e-6;
            let mut hess = DMatrix::zeros(n, n);
            for j in 0..n {
                let mut gp = g.clone();
                gp[j] += h;
                let mut gm = g.clone();
                gm[j] -= h;
                let (_, dp) = self.loss_and_grad(spec, &gp);
                let (_, dm) = self.loss_and_grad(spec, &gm);
                for i in 0..n {
                    hess[(i, j)] = (dp[i] - dm[i]) / (2.0 * h);
                }
            }
            let hess = 0.5 * (&hess + hess.transpose());
            let damping = 1e-10 * (1.0 + hess.diagonal().abs().max());
            let rhs = DVector::from_iterator(n, grad.iter().map(|x| -x));
            let step = (hess + DMatrix::identity(n, n) * damping)
                .lu()
                .solve(&rhs)
                .map(|s| s.iter().copied().collect::<Vec<f64>>())
                .filter(|s| s.iter().all(|x| x.is_finite()))
                .unwrap_or_else(|| grad.iter().map(|x| -x).collect());
            let slope: f64 = step.iter().zip(&grad).map(|(s, d)| s * d).sum();
            let step = if slope < 0.0 { step } else { grad.iter().map(|x| -x).collect() };
            let slope: f64 = step.iter().zip(&grad).map(|(s, d)| s * d).sum();
            let mut t = 1.0;
            loop {
                let trial: Vec<f64> = g.iter().zip(&step).map(|(a, s)| a + t * s).collect();
                let (l, d) = self.loss_and_grad(spec, &trial);
                if l.is_finite() && l <= loss + 1e-4 * t * slope {
                    g = trial;
                    loss = l;
                    grad = d;
                    break;
                }
                t *= 0.5;
                if t < 1e-12 {
                    return Ok(ExactDiceFit { grad_norm: max_abs(&grad), g, loss, iterations });
                }
            }
        }
        if !loss.is_finite() {
            return Err(Error::Numerical(format!("exact discriminator loss {loss}")));
        }
        Ok(ExactDiceFit { grad_norm: max_abs(&grad), g, loss, iterations })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExactDiceFit {
    /// Table `g(s, a)` in flat `s·A + a` order.
    pub g: Vec<f64>,
    pub loss: f64,
    pub iterations: usize,
    pub grad_norm: f64,
}

impl ExactDiceFit {
    pub fn estimate(&self) -> f64 {
        -self.loss
    }

    /// A joint-input table discriminator holding `g`.
    pub fn discriminator(&self, n_states: usize, n_actions: usize) -> Discriminator {
        let mut d = Discriminator::table(n_states, n_actions);
        d.net.layers[0].weight = Array2::from_shape_vec((self.g.len(), 1), self.g.clone()).expect("table length");
        d
    }

    pub fn table(&self, n_actions: usize) -> Array2<f64> {
        Array2::from_shape_vec((self.g.len() / n_actions, n_actions), self.g.clone()).expect("table length")
    }
}

/// Closed-form optimal table for the variational form:
/// `g* = (I − γ P^{π'})^{-1} φ'(μ'/μ)`, which needs `μ > 0` everywhere.
pub fn closed_form_table(
    mdp: &TabularMdp,
    behavior: &TabularPolicy,
    target: &TabularPolicy,
    spec: DivergenceSpec,
) -> Result<Array1<f64>> {
    if spec.representation != Representation::VariationalDice {
        return Err(Error::Config("closed form is for the variational representation".into()));
    }
    let (_, mu) = exact_visitation(mdp, behavior)?;
    let (_, mu_t) = exact_visitation(mdp, target)?;
    if mu.iter().any(|&m| m <= 0.0) {
        return Err(Error::Input("behavior visitation must be positive everywhere".into()));
    }
    let problem = ExactDiceProblem::new(mdp, behavior, target)?;
    let n = problem.n_pairs();
    let f: Vec<f64> = mu
        .iter()
        .zip(mu_t.iter())
        .map(|(&m, &mt)| {
            let u = mt / m;
            match spec.kind {
                super::DivergenceKind::Kl => u.ln() + 1.0,
                super::DivergenceKind::ChiSquared => 2.0 * (u - 1.0),
                super::DivergenceKind::TotalVariation => 0.5 * (u - 1.0).signum(),
            }
        })
        .collect();
    let a = DMatrix::from_fn(n, n, |i, j| f64::from(i == j) - problem.gamma * problem.next_op[[i, j]]);
    let sol = a
        .lu()
        .solve(&DVector::from_vec(f))
        .ok_or_else(|| Error::Numerical("singular Bellman system".into()))?;
    Ok(Array1::from_iter(sol.iter().copied()))
}

/// `n` iid transitions with `(s, a) ∼ μ^{behavior}`, `s' ∼ P(·|s,a)`, and
/// `n` iid initial states `s_1 ∼ ρ`, all one-hot encoded.
pub fn sample_from_visitation<R: Rng + ?Sized>(
    mdp: &TabularMdp,
    behavior: &TabularPolicy,
    n: usize,
    rng: &mut R,
) -> Result<(TransitionSample, Array2<f64>)> {
    let (_, mu) = exact_visitation(mdp, behavior)?;
    let (s_n, a_n) = mu.dim();
    let pairs = WeightedIndex::new(mu.iter().map(|&m| m.max(0.0))).map_err(|e| Error::Numerical(e.to_string()))?;
    let (mut s, mut a, mut s2, mut s1) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for _ in 0..n {
        let i = pairs.sample(rng);
        s.push(i / a_n);
        a.push(i % a_n);
        s2.push(mdp.sample_next(i / a_n, i % a_n, rng));
        s1.push(mdp.sample_initial(rng));
    }
    let data = TransitionSample { obs: one_hot(&s, s_n), actions: ActionBatch::Discrete(a), next_obs: one_hot(&s2, s_n) };
    Ok((data, one_hot(&s1, s_n)))
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// Flat `μ` as a row-major vector.
pub fn flat(mu: &Array2<f64>) -> Vec<f64> {
    mu.axis_iter(Axis(0)).flat_map(|r| r.to_vec()).collect()
}
