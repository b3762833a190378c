//! The training loop: rollouts, advantages, discriminator steps, and the
//! per-minibatch value and policy updates.

use std::time::Instant;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{Algo, LrSchedule, TrainConfig};
use crate::autodiff::Tape;
use crate::divergence::{initial_obs_rows, Discriminator, TransitionSample};
use crate::error::{Error, Result};
use crate::mdp::{collect_rollouts, collect_rollouts_parallel, Env, RolloutBatch};
use crate::nn::{Activation, MlpParams, Policy};
use crate::optim::{clip_grad_norm, Optimizer};
use crate::ppo::{gae_advantages, value_loss};
use crate::regularizer::{
    adaptive_lambda, choose_gradient_path, discriminator_loop, initial_rows_for, policy_objective, LambdaMode,
    PolicyStep, RegTerm,
};
use crate::space::{ActionSpace, State};

/// Independent random streams derived from the run seed.
#[derive(Debug, Clone, Copy)]
pub enum Stream {
    Init = 0,
    Rollout = 1,
    Shuffle = 2,
    Discriminator = 3,
    Regularizer = 4,
    DiscriminatorInit = 5,
    Eval = 6,
}

pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream as u64);
    r
}

/// One line of the metrics CSV.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsRow {
    pub iteration: usize,
    pub env_steps: usize,
    pub mean_episode_return: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub divergence_estimate: f64,
    pub lambda_used: f64,
    pub clip_fraction: f64,
    pub entropy: f64,
    pub wall_ms: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalResult {
    pub mean: f64,
    pub stderr: f64,
    pub episodes: usize,
    /// Set when a single episode leaves the standard error undefined
    /// (reported as 0).
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub iteration: usize,
    pub env_steps: usize,
    pub result: EvalResult,
}

/// Mean and standard error of undiscounted episode returns. Episodes end
/// at `done` or at the environment's horizon cap.
pub fn evaluate<R: Rng + ?Sized>(
    policy: &Policy,
    env: &Env,
    episodes: usize,
    greedy: bool,
    rng: &mut R,
) -> Result<EvalResult> {
    if episodes == 0 {
        return Err(Error::Input("need at least one episode".into()));
    }
    let mut returns = Vec::with_capacity(episodes);
    for _ in 0..episodes {
        let mut state: State = env.reset(rng);
        let mut total = 0.0;
        for _ in 0..env.horizon_cap() {
            let d = policy.distribution(&env.features(&state))?;
            let action = if greedy { d.mode() } else { d.sample(rng) };
            let out = env.step(&state, &action, rng)?;
            total += out.reward;
            state = out.next_state;
            if out.done {
                break;
            }
        }
        returns.push(total);
    }
    let (mean, stderr) = mean_stderr(&returns);
    Ok(EvalResult { mean, stderr, episodes, degenerate: episodes == 1 })
}

/// Sample mean and standard error (`s / √n`, with `s` the `n − 1`
/// standard deviation); the error is 0 for fewer than two values.
pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Everything a run produces.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub config: TrainConfig,
    pub policy: Policy,
    pub value: MlpParams,
    pub discriminator: Option<Discriminator>,
    pub metrics: Vec<MetricsRow>,
    pub evaluations: Vec<EvalRow>,
    pub final_eval: Option<EvalResult>,
    /// Set when a non-finite quantity stopped the run; parameters are the
    /// last finite ones and the last metrics row is the diagnostic row.
    pub failure: Option<String>,
}

fn value_net<R: Rng + ?Sized>(obs_dim: usize, hidden: &[usize], rng: &mut R) -> MlpParams {
    let mut sizes = vec![obs_dim];
    sizes.extend_from_slice(hidden);
    sizes.push(1);
    MlpParams::new(&sizes, Activation::Tanh, 1.0, rng)
}

fn values(value: &MlpParams, obs: &Array2<f64>) -> Result<Vec<f64>> {
    Ok(value.forward(obs)?.iter().copied().collect())
}

/// Even split of `perm` into `k` contiguous chunks.
fn minibatches(perm: &[usize], k: usize) -> Vec<&[usize]> {
    let n = perm.len();
    (0..k).map(|i| &perm[i * n / k..(i + 1) * n / k]).filter(|c| !c.is_empty()).collect()
}

struct Accum {
    sum: f64,
    n: usize,
}

impl Accum {
    fn new() -> Self {
        Self { sum: 0.0, n: 0 }
    }
    fn push(&mut self, x: f64) {
        self.sum += x;
        self.n += 1;
    }
    fn mean(&self) -> f64 {
        if self.n == 0 {
            f64::NAN
        } else {
            self.sum / self.n as f64
        }
    }
}

/// Run the configured training loop. Configuration problems are errors; a
/// non-finite loss or parameter ends the run early with `failure` set.
pub fn train(cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let env = cfg.make_env()?;
    let space = env.action_space();
    let obs_dim = env.obs_dim();
    let dice = cfg.algo == Algo::PpoDice;
    let reg = cfg.regularizer;

    let mut init_rng = stream_rng(cfg.seed, Stream::Init);
    let mut policy = match space {
        ActionSpace::Discrete(n) => Policy::categorical(obs_dim, n, &cfg.hidden, &mut init_rng),
        ActionSpace::Continuous(d) => Policy::gaussian(obs_dim, d, &cfg.hidden, cfg.init_log_std, &mut init_rng),
    };
    let path = choose_gradient_path(policy.kind(), reg.gradient_path);
    let mut value = value_net(obs_dim, &cfg.hidden, &mut init_rng);
    let mut disc = if dice {
        let mut r = stream_rng(cfg.seed, Stream::DiscriminatorInit);
        Some(Discriminator::new(obs_dim, space, &cfg.disc_hidden, cfg.disc_input, &mut r))
    } else {
        None
    };

    let mut rollout_rng = stream_rng(cfg.seed, Stream::Rollout);
    let mut shuffle_rng = stream_rng(cfg.seed, Stream::Shuffle);
    let mut disc_rng = stream_rng(cfg.seed, Stream::Discriminator);
    let mut reg_rng = stream_rng(cfg.seed, Stream::Regularizer);
    let mut eval_rng = stream_rng(cfg.seed, Stream::Eval);

    let mut policy_opt = Optimizer::adam(policy.n_params(), cfg.learning_rate);
    let mut value_opt = Optimizer::adam(value.n_params(), cfg.learning_rate);
    let mut disc_opt = disc
        .as_ref()
        .map(|d| Optimizer::adam(d.net.n_params(), cfg.learning_rate * reg.lr_multiplier));

    let iterations = cfg.iterations();
    let mut metrics = Vec::with_capacity(iterations);
    let mut evaluations = Vec::new();
    let mut failure = None;

    'outer: for it in 1..=iterations {
        let started = Instant::now();
        let lr = match cfg.lr_schedule {
            LrSchedule::Constant => cfg.learning_rate,
            LrSchedule::Linear => cfg.learning_rate * (1.0 - (it - 1) as f64 / iterations as f64),
        };
        policy_opt.set_lr(lr);
        value_opt.set_lr(lr);
        if let Some(o) = disc_opt.as_mut() {
            o.set_lr(lr * reg.lr_multiplier);
        }

        let batch: RolloutBatch = if cfg.parallel_rollouts {
            collect_rollouts_parallel(&policy, &env, cfg.n_rollouts, cfg.horizon, &mut rollout_rng)?
        } else {
            collect_rollouts(&policy, &env, cfg.n_rollouts, cfg.horizon, &mut rollout_rng)?
        };
        let v = values(&value, &batch.obs)?;
        let v_next = values(&value, &batch.next_obs)?;
        let mut row = MetricsRow {
            iteration: it,
            env_steps: it * cfg.batch_size(),
            mean_episode_return: batch.mean_episode_return(),
            policy_loss: f64::NAN,
            value_loss: f64::NAN,
            divergence_estimate: f64::NAN,
            lambda_used: 0.0,
            clip_fraction: f64::NAN,
            entropy: f64::NAN,
            wall_ms: 0,
        };
        let adv = match gae_advantages(
            &batch.rewards,
            &v,
            &v_next,
            &batch.dones,
            cfg.horizon,
            cfg.gamma,
            cfg.gae_lambda,
            cfg.normalize_advantages,
        ) {
            Ok(a) => a,
            Err(Error::Numerical(msg)) => {
                failure = Some(format!("iteration {it}: {msg}"));
                metrics.push(row);
                break;
            }
            Err(e) => return Err(e),
        };
        let lambda = if dice {
            match reg.lambda_mode {
                LambdaMode::Fixed(x) => x,
                LambdaMode::Adaptive(p) => adaptive_lambda(&adv.advantages, p, reg.signed_percentile)?,
            }
        } else {
            0.0
        };
        row.lambda_used = lambda;

        let data = TransitionSample::from_batch(&batch);
        let n = batch.len();
        let mut perm: Vec<usize> = (0..n).collect();
        let (mut pl, mut vl, mut cf, mut ent) = (Accum::new(), Accum::new(), Accum::new(), Accum::new());
        for _epoch in 0..cfg.epochs {
            if let (Some(d), Some(opt)) = (disc.as_mut(), disc_opt.as_mut()) {
                let init = initial_obs_rows(&batch, reg.initial_actions);
                let before = d.clone();
                match discriminator_loop(
                    d,
                    opt,
                    &data,
                    &init,
                    &policy,
                    reg.divergence,
                    cfg.gamma,
                    reg.k_steps,
                    reg.residual_mode,
                    &mut disc_rng,
                ) {
                    Ok(losses) => {
                        row.divergence_estimate = -losses.iter().sum::<f64>() / losses.len() as f64;
                    }
                    Err(Error::Numerical(msg)) => {
                        *d = before;
                        failure = Some(format!("iteration {it}: {msg}"));
                        break;
                    }
                    Err(e) => return Err(e),
                }
                if !d.net.is_finite() {
                    *d = before;
                    failure = Some(format!("iteration {it}: non-finite discriminator parameters"));
                    break;
                }
            }
            perm.shuffle(&mut shuffle_rng);
            for idx in minibatches(&perm, cfg.minibatches) {
                let obs = batch.obs.select(Axis(0), idx);
                let targets: Vec<f64> = idx.iter().map(|&i| adv.value_targets[i]).collect();

                let mut tape = Tape::new();
                let vars = value.register(&mut tape);
                let s = tape.constant(obs.clone());
                let pred = value.apply(&mut tape, &vars, s);
                let loss = value_loss(&mut tape, pred, &targets);
                let grads = tape.backward(loss);
                let loss_value = tape.scalar(loss);
                let mut g: Vec<f64> = vars.flat_grad(&tape, &grads).iter().map(|x| x * cfg.value_coef).collect();
                if !loss_value.is_finite() || g.iter().any(|x| !x.is_finite()) {
                    failure = Some(format!("iteration {it}: value loss {loss_value}"));
                    break;
                }
                clip_grad_norm(&mut g, cfg.max_grad_norm);
                let mut flat = value.to_flat();
                value_opt.step(&mut flat, &g);
                value.set_flat(&flat);
                vl.push(loss_value);

                let actions = batch.actions.select(idx);
                let old: Vec<f64> = idx.iter().map(|&i| batch.log_probs[i]).collect();
                let a: Vec<f64> = idx.iter().map(|&i| adv.advantages[i]).collect();
                let step = PolicyStep {
                    obs: &obs,
                    actions: &actions,
                    old_log_probs: &old,
                    advantages: &a,
                    epsilon: cfg.clip_epsilon,
                    clip: cfg.clip_action_loss,
                    entropy_coef: cfg.entropy_coef,
                };
                let mb_data;
                let mb_init;
                let term = match disc.as_ref() {
                    Some(d) => {
                        mb_data = data.select(idx);
                        mb_init = initial_rows_for(&batch, idx, reg.initial_actions);
                        Some(RegTerm {
                            disc: d,
                            data: &mb_data,
                            init_obs: &mb_init,
                            lambda,
                            spec: reg.divergence,
                            gamma: cfg.gamma,
                            path,
                            residual_mode: reg.residual_mode,
                        })
                    }
                    None => None,
                };
                let out = policy_objective(&policy, &step, term.as_ref(), &mut reg_rng)?;
                if !out.objective.is_finite() || out.grad.iter().any(|x| !x.is_finite()) {
                    failure = Some(format!("iteration {it}: policy objective {}", out.objective));
                    break;
                }
                let mut g: Vec<f64> = out.grad.iter().map(|x| -x).collect();
                clip_grad_norm(&mut g, cfg.max_grad_norm);
                let before = policy.clone();
                let mut flat = policy.to_flat();
                policy_opt.step(&mut flat, &g);
                policy.set_flat(&flat);
                if !policy.is_finite() {
                    policy = before;
                    failure = Some(format!("iteration {it}: non-finite policy parameters"));
                    break;
                }
                pl.push(-out.objective);
                cf.push(out.stats.clip_fraction);
                ent.push(out.entropy);
            }
            if failure.is_some() {
                break;
            }
        }
        row.policy_loss = pl.mean();
        row.value_loss = vl.mean();
        row.clip_fraction = cf.mean();
        row.entropy = ent.mean();
        if !dice {
            row.divergence_estimate = f64::NAN;
        }
        if cfg.log_wall_time {
            row.wall_ms = started.elapsed().as_millis() as u64;
        }
        metrics.push(row);
        if failure.is_some() {
            break 'outer;
        }
        if cfg.eval_interval > 0 && it % cfg.eval_interval == 0 {
            let result = evaluate(&policy, &env, cfg.eval_episodes, cfg.eval_greedy, &mut eval_rng)?;
            evaluations.push(EvalRow { iteration: it, env_steps: row.env_steps, result });
        }
    }
    let final_eval = if failure.is_none() {
        Some(evaluate(&policy, &env, cfg.eval_episodes, cfg.eval_greedy, &mut eval_rng)?)
    } else {
        None
    };
    Ok(TrainOutcome {
        config: cfg.clone(),
        policy,
        value,
        discriminator: disc,
        metrics,
        evaluations,
        final_eval,
        failure,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minibatch_split_is_even_and_complete() {
        let perm: Vec<usize> = (0..10).collect();
        let parts = minibatches(&perm, 4);
        assert_eq!(parts.iter().map(|p| p.len()).collect::<Vec<_>>(), vec![2, 3, 2, 3]);
        assert_eq!(parts.concat(), perm);
    }

    #[test]
    fn stderr_conventions() {
        assert_eq!(mean_stderr(&[3.0]), (3.0, 0.0));
        let (m, se) = mean_stderr(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((se - (5.0f64 / 3.0 / 4.0).sqrt()).abs() < 1e-15);
    }

    fn small(extra: &str) -> TrainConfig {
        TrainConfig::parse(&format!(
            "env = chain\nenv.horizon = 20\nn_rollouts = 2\nhorizon = 16\ntotal_steps = 96\nepochs = 2\nminibatches = 2\nhidden = 8\ndisc_hidden = 8\n{extra}"
        ))
        .unwrap()
    }

    #[test]
    fn runs_and_counts_steps() {
        let out = train(&small("")).unwrap();
        assert!(out.failure.is_none());
        assert_eq!(out.metrics.len(), 3);
        for (i, r) in out.metrics.iter().enumerate() {
            assert_eq!(r.env_steps, (i + 1) * 32);
            assert!(r.divergence_estimate.is_finite() && r.lambda_used >= 0.0);
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let a = train(&small("seed = 3")).unwrap();
        let b = train(&small("seed = 3\nparallel_rollouts = false")).unwrap();
        assert_eq!(a.metrics, b.metrics);
        assert_eq!(a.policy, b.policy);
    }

    #[test]
    fn zero_lambda_matches_ppo() {
        let a = train(&small("algo = ppo")).unwrap();
        let b = train(&small("algo = ppo_dice\nlambda_mode = fixed:0")).unwrap();
        assert_eq!(a.policy, b.policy);
        for (x, y) in a.metrics.iter().zip(&b.metrics) {
            assert_eq!(
                (x.mean_episode_return.to_bits(), x.policy_loss.to_bits(), x.value_loss.to_bits(), x.entropy.to_bits()),
                (y.mean_episode_return.to_bits(), y.policy_loss.to_bits(), y.value_loss.to_bits(), y.entropy.to_bits())
            );
        }
    }

    #[test]
    fn continuous_reparam_path_runs() {
        let cfg = TrainConfig::parse(
            "env = point_mass\nenv.horizon = 10\nhorizon = 20\ntotal_steps = 40\nepochs = 1\nminibatches = 2\nhidden = 4\ndisc_hidden = 4\n",
        )
        .unwrap();
        let out = train(&cfg).unwrap();
        assert!(out.failure.is_none());
        assert_eq!(out.metrics.len(), 2);
    }
}
