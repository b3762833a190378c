//! Quick self-checks of the exact tabular computations and the analytic
//! gradients, run by the `verify` subcommand.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Tape;
use crate::divergence::exact::{flat, ExactDiceProblem};
use crate::divergence::DivergenceSpec;
use crate::error::Result;
use crate::mdp::TabularMdp;
use crate::nn::{grad_check, Activation, MlpParams, Policy};
use crate::oracle::{
    exact_phi_divergence, exact_visitation, lower_bound_check, performance_difference, visitation_residual,
    ArgumentOrder, TabularPolicy,
};
use crate::ppo::value_loss;
use crate::regularizer::{policy_objective, PolicyStep};
use crate::space::ActionBatch;

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, passed: bool, detail: String) -> Check {
    Check { name, passed, detail }
}

pub fn builtin_mdps() -> Result<Vec<(&'static str, TabularMdp)>> {
    Ok(vec![
        ("chain", TabularMdp::chain(5, 0.0, 0.99)?),
        ("chain slip", TabularMdp::chain(5, 0.2, 0.9)?),
        ("gridworld", TabularMdp::gridworld(4, 4, 0.0, 0.99)?),
        ("gridworld slip", TabularMdp::gridworld(3, 3, 0.1, 0.95)?),
        ("random_mdp", TabularMdp::random(4, 2, 0, 0.99)?),
        ("flip", TabularMdp::flip([1.0, 0.0], 0.9)?),
    ])
}

/// Random `(mdp, π, π')` with `S ≤ 6`, `A ≤ 3`.
pub fn random_triple<R: Rng + ?Sized>(rng: &mut R) -> Result<(TabularMdp, TabularPolicy, TabularPolicy)> {
    let s = rng.random_range(2..=6);
    let a = rng.random_range(2..=3);
    let gamma = rng.random_range(0.5..0.99);
    let mdp = TabularMdp::random(s, a, rng.random(), gamma)?;
    let pi = TabularPolicy::random(s, a, rng);
    let pi_new = TabularPolicy::random(s, a, rng);
    Ok((mdp, pi, pi_new))
}

fn visitation_checks(out: &mut Vec<Check>) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut worst: f64 = 0.0;
    for (_, mdp) in builtin_mdps()? {
        for pi in [
            TabularPolicy::uniform(mdp.n_states(), mdp.n_actions()),
            TabularPolicy::random(mdp.n_states(), mdp.n_actions(), &mut rng),
        ] {
            let (_, mu) = exact_visitation(&mdp, &pi)?;
            worst = worst.max(visitation_residual(&mdp, &pi, &mu));
        }
    }
    out.push(check("visitation fixed point", worst < 1e-10, format!("max residual {worst:.2e}")));
    Ok(())
}

fn triple_checks(out: &mut Vec<Check>) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut pd_err: f64 = 0.0;
    let mut bound_fail = 0;
    for _ in 0..100 {
        let (mdp, pi, pi_new) = random_triple(&mut rng)?;
        let (lhs, rhs) = performance_difference(&mdp, &pi, &pi_new)?;
        pd_err = pd_err.max((lhs - rhs).abs());
        if !lower_bound_check(&mdp, &pi, &pi_new)?.all_hold() {
            bound_fail += 1;
        }
    }
    out.push(check("performance difference", pd_err < 1e-8, format!("max error {pd_err:.2e} over 100 triples")));
    out.push(check("lower bound chain", bound_fail == 0, format!("{bound_fail} of 100 triples violate")));
    Ok(())
}

fn dice_checks(out: &mut Vec<Check>) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    let mut zero: f64 = 0.0;
    for seed in 0..3 {
        let mdp = TabularMdp::random(4, 3, seed, 0.9)?;
        let pi = TabularPolicy::random(4, 3, &mut rng);
        let pi_new = TabularPolicy::random(4, 3, &mut rng);
        let (_, mu) = exact_visitation(&mdp, &pi)?;
        let (_, mu_new) = exact_visitation(&mdp, &pi_new)?;
        let same = ExactDiceProblem::new(&mdp, &pi, &pi)?;
        let problem = ExactDiceProblem::new(&mdp, &pi, &pi_new)?;
        for spec in [DivergenceSpec::kl_dice(), DivergenceSpec::kl_dv(), DivergenceSpec::chi2()] {
            let truth = exact_phi_divergence(&flat(&mu_new), &flat(&mu), spec.kind, ArgumentOrder::BaseWeighted)?;
            worst = worst.max((problem.fit(spec, 100, 1e-11)?.estimate() - truth).abs());
            zero = zero.max(same.fit(spec, 100, 1e-11)?.estimate().abs());
        }
    }
    out.push(check("exact discriminator estimate", worst < 1e-3, format!("max error {worst:.2e}")));
    out.push(check("zero divergence", zero < 0.02, format!("max |estimate| {zero:.2e}")));
    Ok(())
}

fn gradient_checks(out: &mut Vec<Check>) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;

    let mdp = TabularMdp::random(3, 2, 4, 0.9)?;
    let problem = ExactDiceProblem::new(&mdp, &TabularPolicy::random(3, 2, &mut rng), &TabularPolicy::random(3, 2, &mut rng))?;
    let g0: Vec<f64> = (0..problem.n_pairs()).map(|_| rng.random_range(-1.0..1.0)).collect();
    for spec in [DivergenceSpec::kl_dice(), DivergenceSpec::kl_dv(), DivergenceSpec::chi2()] {
        let r = grad_check(|g| Ok(problem.loss_and_grad(spec, g)), &g0, 1e-6)?;
        worst = worst.max(r.max_relative_error);
    }

    let net = MlpParams::new(&[3, 4, 1], Activation::Tanh, 1.0, &mut rng);
    let x = Array2::from_shape_fn((6, 3), |_| rng.random_range(-1.0..1.0));
    let y: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
    let value = |p: &[f64]| {
        let mut n = net.clone();
        n.set_flat(p);
        let mut tape = Tape::new();
        let vars = n.register(&mut tape);
        let s = tape.constant(x.clone());
        let pred = n.apply(&mut tape, &vars, s);
        let l = value_loss(&mut tape, pred, &y);
        let grads = tape.backward(l);
        Ok((tape.scalar(l), vars.flat_grad(&tape, &grads)))
    };
    worst = worst.max(grad_check(value, &net.to_flat(), 1e-6)?.max_relative_error);

    let policy = Policy::categorical(3, 2, &[4], &mut rng);
    let actions = ActionBatch::Discrete((0..6).map(|i| i % 2).collect());
    let old: Vec<f64> = policy.log_probs(&x, &actions)?.iter().map(|l| l + rng.random_range(-0.3..0.3)).collect();
    let adv: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
    let surrogate = |p: &[f64]| {
        let mut pol = policy.clone();
        pol.set_flat(p);
        let step = PolicyStep {
            obs: &x,
            actions: &actions,
            old_log_probs: &old,
            advantages: &adv,
            epsilon: 0.2,
            clip: true,
            entropy_coef: 0.01,
        };
        let o = policy_objective(&pol, &step, None, &mut ChaCha8Rng::seed_from_u64(0))?;
        Ok((-o.objective, o.grad.iter().map(|g| -g).collect()))
    };
    worst = worst.max(grad_check(surrogate, &policy.to_flat(), 1e-6)?.max_relative_error);

    out.push(check("analytic gradients", worst <= 1e-3, format!("max relative error {worst:.2e}")));
    Ok(())
}

/// Run every check; an error in one group is reported as a failed check.
pub fn run_checks() -> Vec<Check> {
    let mut out = Vec::new();
    type Group = fn(&mut Vec<Check>) -> Result<()>;
    let groups: [(&'static str, Group); 4] = [
        ("visitation", visitation_checks),
        ("identities", triple_checks),
        ("discriminator", dice_checks),
        ("gradients", gradient_checks),
    ];
    for (name, group) in groups {
        if let Err(e) = group(&mut out) {
            out.push(check(name, false, e.to_string()));
        }
    }
    out
}
