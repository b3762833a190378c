use std::f64::consts::PI;

use ndarray::{Array2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;

use super::{Activation, MlpParams, MlpVars};
use crate::autodiff::{Gradients, Tape, Var};
use crate::error::{Error, Result};
use crate::space::{Action, ActionBatch, ActionSpace};

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;

/// Output distribution attached to the policy network.
#[derive(Debug, Clone, PartialEq)]
pub enum PolicyHead {
    /// Network outputs logits.
    Categorical { n_actions: usize },
    /// Network outputs the mean; the log standard deviation is a free,
    /// state-independent vector, clamped to `[LOG_STD_MIN, LOG_STD_MAX]`
    /// wherever it is used.
    Gaussian { log_std: Vec<f64> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolicyKind {
    Categorical,
    Gaussian,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Distribution {
    Categorical(Vec<f64>),
    Gaussian { mean: Vec<f64>, std: Vec<f64> },
}

impl Distribution {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Action {
        match self {
            Distribution::Categorical(p) => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for (i, &pi) in p.iter().enumerate() {
                    acc += pi;
                    if u < acc {
                        return Action::Discrete(i);
                    }
                }
                Action::Discrete(p.len() - 1)
            }
            Distribution::Gaussian { mean, std } => Action::Continuous(
                mean.iter()
                    .zip(std)
                    .map(|(m, s)| m + s * rng.sample::<f64, _>(StandardNormal))
                    .collect(),
            ),
        }
    }

    /// Most likely action: the arg-max class or the mean.
    pub fn mode(&self) -> Action {
        match self {
            Distribution::Categorical(p) => Action::Discrete(
                p.iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |best, (i, &x)| if x > best.1 { (i, x) } else { best })
                    .0,
            ),
            Distribution::Gaussian { mean, .. } => Action::Continuous(mean.clone()),
        }
    }

    /// Log-density without building a tape. Mismatched action kinds give
    /// negative infinity.
    pub fn log_prob(&self, action: &Action) -> f64 {
        match (self, action) {
            (Distribution::Categorical(p), Action::Discrete(a)) => {
                p.get(*a).map_or(f64::NEG_INFINITY, |x| x.ln())
            }
            (Distribution::Gaussian { mean, std }, Action::Continuous(a)) if a.len() == mean.len() => {
                let mut lp = -0.5 * mean.len() as f64 * (2.0 * PI).ln();
                for ((x, m), s) in a.iter().zip(mean).zip(std) {
                    let z = (x - m) / s;
                    lp -= 0.5 * z * z + s.ln();
                }
                lp
            }
            _ => f64::NEG_INFINITY,
        }
    }
}

/// Stochastic policy `π_θ(a|s)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    pub net: MlpParams,
    pub head: PolicyHead,
}

#[derive(Debug, Clone)]
pub struct PolicyVars {
    pub net: MlpVars,
    pub log_std: Option<Var>,
}

fn clamp_log_std(x: f64) -> f64 {
    x.clamp(LOG_STD_MIN, LOG_STD_MAX)
}

fn layer_sizes(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    let mut s = vec![input];
    s.extend_from_slice(hidden);
    s.push(output);
    s
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

impl Policy {
    pub fn categorical<R: Rng + ?Sized>(
        obs_dim: usize,
        n_actions: usize,
        hidden: &[usize],
        rng: &mut R,
    ) -> Self {
        let sizes = layer_sizes(obs_dim, hidden, n_actions);
        Self {
            net: MlpParams::new(&sizes, Activation::Tanh, 0.01, rng),
            head: PolicyHead::Categorical { n_actions },
        }
    }

    pub fn gaussian<R: Rng + ?Sized>(
        obs_dim: usize,
        action_dim: usize,
        hidden: &[usize],
        init_log_std: f64,
        rng: &mut R,
    ) -> Self {
        let sizes = layer_sizes(obs_dim, hidden, action_dim);
        Self {
            net: MlpParams::new(&sizes, Activation::Tanh, 0.01, rng),
            head: PolicyHead::Gaussian {
                log_std: vec![init_log_std; action_dim],
            },
        }
    }

    pub fn kind(&self) -> PolicyKind {
        match self.head {
            PolicyHead::Categorical { .. } => PolicyKind::Categorical,
            PolicyHead::Gaussian { .. } => PolicyKind::Gaussian,
        }
    }

    pub fn action_space(&self) -> ActionSpace {
        match &self.head {
            PolicyHead::Categorical { n_actions } => ActionSpace::Discrete(*n_actions),
            PolicyHead::Gaussian { log_std } => ActionSpace::Continuous(log_std.len()),
        }
    }

    pub fn obs_dim(&self) -> usize {
        self.net.input_dim()
    }

    pub fn n_params(&self) -> usize {
        self.to_flat().len()
    }

    /// Network parameters followed by the log standard deviation (if any).
    pub fn to_flat(&self) -> Vec<f64> {
        let mut flat = self.net.to_flat();
        if let PolicyHead::Gaussian { log_std } = &self.head {
            flat.extend_from_slice(log_std);
        }
        flat
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        let n = self.net.n_params();
        self.net.set_flat(&flat[..n]);
        if let PolicyHead::Gaussian { log_std } = &mut self.head {
            log_std.copy_from_slice(&flat[n..]);
        } else {
            assert_eq!(flat.len(), n, "flat parameter length");
        }
    }

    pub fn is_finite(&self) -> bool {
        let head_ok = match &self.head {
            PolicyHead::Categorical { .. } => true,
            PolicyHead::Gaussian { log_std } => log_std.iter().all(|x| x.is_finite()),
        };
        head_ok && self.net.is_finite()
    }

    pub fn clamped_log_std(&self) -> Option<Vec<f64>> {
        match &self.head {
            PolicyHead::Gaussian { log_std } => Some(log_std.iter().map(|&x| clamp_log_std(x)).collect()),
            PolicyHead::Categorical { .. } => None,
        }
    }

    fn state_row(&self, state: &[f64]) -> Result<Array2<f64>> {
        if state.len() != self.obs_dim() {
            return Err(Error::Input(format!(
                "state has {} features, policy expects {}",
                state.len(),
                self.obs_dim()
            )));
        }
        Ok(Array2::from_shape_vec((1, state.len()), state.to_vec()).expect("row shape"))
    }

    /// One distribution per row of `states`.
    pub fn distributions(&self, states: &Array2<f64>) -> Result<Vec<Distribution>> {
        let out = self.net.forward(states)?;
        Ok(match &self.head {
            PolicyHead::Categorical { .. } => out
                .rows()
                .into_iter()
                .map(|r| Distribution::Categorical(softmax(&r.to_vec())))
                .collect(),
            PolicyHead::Gaussian { log_std } => {
                let std: Vec<f64> = log_std.iter().map(|&l| clamp_log_std(l).exp()).collect();
                out.rows()
                    .into_iter()
                    .map(|r| Distribution::Gaussian {
                        mean: r.to_vec(),
                        std: std.clone(),
                    })
                    .collect()
            }
        })
    }

    pub fn distribution(&self, state: &[f64]) -> Result<Distribution> {
        let row = self.state_row(state)?;
        Ok(self.distributions(&row)?.remove(0))
    }

    /// `log π(a|s)` for one state-action pair.
    pub fn log_prob(&self, state: &[f64], action: &Action) -> Result<f64> {
        self.action_space().check(action)?;
        let row = self.state_row(state)?;
        let batch = ActionBatch::from_actions(std::slice::from_ref(action), self.action_space())?;
        Ok(self.log_probs(&row, &batch)?[0])
    }

    pub fn log_probs(&self, states: &Array2<f64>, actions: &ActionBatch) -> Result<Vec<f64>> {
        if states.iter().any(|x| !x.is_finite()) {
            return Err(Error::Input("non-finite state".into()));
        }
        if let ActionBatch::Continuous(m) = actions {
            if m.iter().any(|x| !x.is_finite()) {
                return Err(Error::Input("non-finite action".into()));
            }
        }
        if states.nrows() != actions.len() {
            return Err(Error::Input("state and action counts differ".into()));
        }
        if states.ncols() != self.obs_dim() {
            return Err(Error::Input("state width does not match policy".into()));
        }
        let mut tape = Tape::new();
        let vars = self.register(&mut tape);
        let s = tape.constant(states.clone());
        let lp = self.log_prob_taped(&mut tape, &vars, s, actions);
        Ok(tape.value(lp).iter().copied().collect())
    }

    pub fn sample<R: Rng + ?Sized>(&self, state: &[f64], rng: &mut R) -> Result<(Action, f64)> {
        let row = self.state_row(state)?;
        let action = self.sample_batch(&row, rng)?.get(0);
        let lp = self.log_prob(state, &action)?;
        Ok((action, lp))
    }

    /// Draw one action per row of `states`.
    pub fn sample_batch<R: Rng + ?Sized>(
        &self,
        states: &Array2<f64>,
        rng: &mut R,
    ) -> Result<ActionBatch> {
        let dists = self.distributions(states)?;
        let actions: Vec<Action> = dists.iter().map(|d| d.sample(rng)).collect();
        ActionBatch::from_actions(&actions, self.action_space())
    }

    /// Standard normal noise for [`Policy::reparam_taped`], one row per state.
    pub fn reparam_noise<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Array2<f64>> {
        match &self.head {
            PolicyHead::Gaussian { log_std } => Ok(Array2::from_shape_simple_fn(
                (n, log_std.len()),
                || rng.sample(StandardNormal),
            )),
            PolicyHead::Categorical { .. } => Err(Error::Capability(
                "categorical policies cannot be reparametrized; use the score-function path".into(),
            )),
        }
    }

    /// `mean(s) + σ ⊙ ξ` with `ξ ~ N(0, I)`; returns the action and the noise.
    pub fn reparam_sample<R: Rng + ?Sized>(
        &self,
        state: &[f64],
        rng: &mut R,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        let noise = self.reparam_noise(1, rng)?;
        let row = self.state_row(state)?;
        let mut tape = Tape::new();
        let vars = self.register(&mut tape);
        let s = tape.constant(row);
        let a = self.reparam_taped(&mut tape, &vars, s, &noise)?;
        Ok((tape.value(a).iter().copied().collect(), noise.iter().copied().collect()))
    }

    pub fn register(&self, tape: &mut Tape) -> PolicyVars {
        let net = self.net.register(tape);
        let log_std = match &self.head {
            PolicyHead::Gaussian { log_std } => Some(tape.leaf(
                Array2::from_shape_vec((1, log_std.len()), log_std.clone()).expect("row shape"),
            )),
            PolicyHead::Categorical { .. } => None,
        };
        PolicyVars { net, log_std }
    }

    pub fn flat_grad(&self, vars: &PolicyVars, tape: &Tape, grads: &Gradients) -> Vec<f64> {
        let mut g = vars.net.flat_grad(tape, grads);
        if let Some(ls) = vars.log_std {
            g.extend(grads.get_or_zeros(tape, ls).iter());
        }
        g
    }

    fn clamped_log_std_var(&self, tape: &mut Tape, vars: &PolicyVars) -> Var {
        let ls = vars.log_std.expect("gaussian policy registers log_std");
        tape.clip(ls, LOG_STD_MIN, LOG_STD_MAX)
    }

    /// `log π(a|s)` per row, `n×1`.
    pub fn log_prob_taped(
        &self,
        tape: &mut Tape,
        vars: &PolicyVars,
        states: Var,
        actions: &ActionBatch,
    ) -> Var {
        let out = self.net.apply(tape, &vars.net, states);
        match (&self.head, actions) {
            (PolicyHead::Categorical { .. }, ActionBatch::Discrete(idx)) => {
                let lsm = tape.log_softmax(out);
                tape.gather(lsm, idx)
            }
            (PolicyHead::Gaussian { log_std }, ActionBatch::Continuous(a)) => {
                let a = tape.constant(a.clone());
                self.gaussian_log_density(tape, vars, a, out, log_std.len())
            }
            _ => panic!("action batch kind does not match policy head"),
        }
    }

    /// Diagonal normal log-density of `actions` around `mean`, `n×1`.
    fn gaussian_log_density(
        &self,
        tape: &mut Tape,
        vars: &PolicyVars,
        actions: Var,
        mean: Var,
        dim: usize,
    ) -> Var {
        let ls = self.clamped_log_std_var(tape, vars);
        let neg_ls = tape.neg(ls);
        let inv_std = tape.exp(neg_ls);
        let diff = tape.sub(actions, mean);
        let z = tape.mul(diff, inv_std);
        let z2 = tape.square(z);
        let quad = tape.sum_cols(z2);
        let half_quad = tape.scale(quad, -0.5);
        let ls_total = tape.sum(ls);
        let lp = tape.sub(half_quad, ls_total);
        tape.add_scalar(lp, -0.5 * dim as f64 * (2.0 * PI).ln())
    }

    /// Reparametrized actions `mean(s) + σ ⊙ noise`, `n×d`.
    pub fn reparam_taped(
        &self,
        tape: &mut Tape,
        vars: &PolicyVars,
        states: Var,
        noise: &Array2<f64>,
    ) -> Result<Var> {
        if self.kind() == PolicyKind::Categorical {
            return Err(Error::Capability(
                "categorical policies cannot be reparametrized; use the score-function path".into(),
            ));
        }
        let mean = self.net.apply(tape, &vars.net, states);
        let ls = self.clamped_log_std_var(tape, vars);
        let std = tape.exp(ls);
        let xi = tape.constant(noise.clone());
        let scaled = tape.mul(xi, std);
        Ok(tape.add(mean, scaled))
    }

    /// Entropy per state, `n×1`.
    pub fn entropy_taped(&self, tape: &mut Tape, vars: &PolicyVars, states: Var) -> Var {
        match &self.head {
            PolicyHead::Categorical { .. } => {
                let out = self.net.apply(tape, &vars.net, states);
                let lsm = tape.log_softmax(out);
                let p = tape.exp(lsm);
                let plogp = tape.mul(p, lsm);
                let s = tape.sum_cols(plogp);
                tape.neg(s)
            }
            PolicyHead::Gaussian { log_std } => {
                let n = tape.shape(states).0;
                let ls = self.clamped_log_std_var(tape, vars);
                let total = tape.sum(ls);
                let h = tape.add_scalar(total, 0.5 * log_std.len() as f64 * (1.0 + (2.0 * PI).ln()));
                let ones = tape.constant(Array2::ones((n, 1)));
                tape.mul(ones, h)
            }
        }
    }

    pub fn entropy(&self, states: &Array2<f64>) -> Result<Vec<f64>> {
        if states.ncols() != self.obs_dim() {
            return Err(Error::Input("state width does not match policy".into()));
        }
        let mut tape = Tape::new();
        let vars = self.register(&mut tape);
        let s = tape.constant(states.clone());
        let h = self.entropy_taped(&mut tape, &vars, s);
        Ok(tape.value(h).iter().copied().collect())
    }

    /// Network tensors followed by the `1×d` log standard deviation.
    pub fn to_tensors(&self) -> Vec<Array2<f64>> {
        let mut t = self.net.to_tensors();
        if let PolicyHead::Gaussian { log_std } = &self.head {
            t.push(Array2::from_shape_vec((1, log_std.len()), log_std.clone()).expect("row shape"));
        }
        t
    }

    pub fn from_tensors(tensors: &[Array2<f64>], kind: PolicyKind) -> Result<Self> {
        match kind {
            PolicyKind::Categorical => {
                let net = MlpParams::from_tensors(tensors, Activation::Tanh)?;
                let n_actions = net.output_dim();
                Ok(Self {
                    net,
                    head: PolicyHead::Categorical { n_actions },
                })
            }
            PolicyKind::Gaussian => {
                let (ls, rest) = tensors
                    .split_last()
                    .ok_or_else(|| Error::Input("empty tensor list".into()))?;
                let net = MlpParams::from_tensors(rest, Activation::Tanh)?;
                if ls.nrows() != 1 || ls.ncols() != net.output_dim() {
                    return Err(Error::Input("log-std shape does not match network output".into()));
                }
                Ok(Self {
                    net,
                    head: PolicyHead::Gaussian {
                        log_std: ls.index_axis(Axis(0), 0).to_vec(),
                    },
                })
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::grad_check;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn uniform_categorical(n: usize) -> Policy {
        Policy {
            net: MlpParams::zeros(&[2, n], Activation::Tanh),
            head: PolicyHead::Categorical { n_actions: n },
        }
    }

    fn unit_gaussian() -> Policy {
        Policy {
            net: MlpParams::zeros(&[1, 1], Activation::Tanh),
            head: PolicyHead::Gaussian { log_std: vec![0.0] },
        }
    }

    #[test]
    fn uniform_categorical_log_prob() {
        let p = uniform_categorical(4);
        let lp = p.log_prob(&[0.3, 0.1], &Action::Discrete(2)).unwrap();
        assert!((lp - 0.25f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn gaussian_peak_log_density() {
        let p = unit_gaussian();
        let lp = p.log_prob(&[0.0], &Action::Continuous(vec![0.0])).unwrap();
        assert!((lp + 0.5 * (2.0 * PI).ln()).abs() < 1e-15);
    }

    #[test]
    fn categorical_probabilities_normalize_even_for_extreme_logits() {
        let mut p = uniform_categorical(3);
        p.net.layers[0].bias = array![[50.0, -50.0, 0.0]];
        let total: f64 = (0..3)
            .map(|a| p.log_prob(&[0.0, 0.0], &Action::Discrete(a)).unwrap().exp())
            .sum();
        assert!((total - 1.0).abs() < 1e-9);
        match p.distribution(&[0.0, 0.0]).unwrap() {
            Distribution::Categorical(probs) => {
                assert!(probs.iter().all(|x| (0.0..=1.0).contains(x)));
                assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
            _ => unreachable!(),
        }
    }

    #[test]
    fn non_finite_inputs_rejected() {
        let p = unit_gaussian();
        assert!(p.log_prob(&[f64::NAN], &Action::Continuous(vec![0.0])).is_err());
        assert!(p.log_prob(&[0.0], &Action::Continuous(vec![f64::INFINITY])).is_err());
        let c = uniform_categorical(2);
        assert!(c.log_prob(&[0.0, 0.0], &Action::Discrete(2)).is_err());
    }

    #[test]
    fn log_std_is_clamped() {
        let mut p = unit_gaussian();
        p.head = PolicyHead::Gaussian { log_std: vec![10.0] };
        assert_eq!(p.clamped_log_std().unwrap(), vec![LOG_STD_MAX]);
        p.head = PolicyHead::Gaussian { log_std: vec![-9.0] };
        assert_eq!(p.clamped_log_std().unwrap(), vec![LOG_STD_MIN]);
    }

    #[test]
    fn tiny_sigma_sample_equals_mean() {
        let mut p = unit_gaussian();
        p.net.layers[0].bias = array![[1.5]];
        p.head = PolicyHead::Gaussian { log_std: vec![-40.0] };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        // Clamped at e^-5; the deviation is bounded by a few multiples of it.
        let (a, _) = p.reparam_sample(&[0.0], &mut rng).unwrap();
        assert!((a[0] - 1.5).abs() < 5.0 * LOG_STD_MIN.exp());
    }

    #[test]
    fn categorical_sampling_frequencies() {
        let mut p = uniform_categorical(2);
        p.net.layers[0].bias = array![[0.7f64.ln(), 0.3f64.ln()]];
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 100_000;
        let zeros = (0..n)
            .filter(|_| p.sample(&[0.0, 0.0], &mut rng).unwrap().0 == Action::Discrete(0))
            .count();
        assert!((zeros as f64 / n as f64 - 0.7).abs() < 0.01);
    }

    #[test]
    fn reparam_on_categorical_is_a_capability_error() {
        let p = uniform_categorical(2);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(p.reparam_sample(&[0.0, 0.0], &mut rng), Err(Error::Capability(_))));
    }

    #[test]
    fn reparam_derivative_wrt_mean_is_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = Policy::gaussian(2, 2, &[], -0.3, &mut rng);
        let noise = array![[0.7, -1.2]];
        let mut tape = Tape::new();
        let vars = p.register(&mut tape);
        let s = tape.leaf(array![[0.0, 0.0]]);
        let a = p.reparam_taped(&mut tape, &vars, s, &noise).unwrap();
        // The bias of the single linear layer is the mean at s = 0.
        for k in 0..2 {
            let pick = tape.gather(a, &[k]);
            let loss = tape.sum(pick);
            let g = tape.backward(loss);
            let db = g.get_or_zeros(&tape, vars.net.biases[0]);
            assert_eq!(db[[0, k]], 1.0);
            assert_eq!(db[[0, 1 - k]], 0.0);
        }
    }

    #[test]
    fn entropy_closed_forms() {
        let c = uniform_categorical(4);
        let h = c.entropy(&array![[0.0, 0.0]]).unwrap();
        assert!((h[0] - 4f64.ln()).abs() < 1e-12);
        let g = unit_gaussian();
        let h = g.entropy(&array![[0.0]]).unwrap();
        assert!((h[0] - 0.5 * (2.0 * PI * std::f64::consts::E).ln()).abs() < 1e-12);
    }

    #[test]
    fn gaussian_entropy_increases_with_log_std() {
        let mut p = unit_gaussian();
        let mut last = f64::NEG_INFINITY;
        for ls in [-2.0, -1.0, 0.0, 1.0] {
            p.head = PolicyHead::Gaussian { log_std: vec![ls] };
            let h = p.entropy(&array![[0.0]]).unwrap()[0];
            assert!(h > last);
            last = h;
        }
    }

    #[test]
    fn sharper_logits_lower_entropy() {
        let mut p = uniform_categorical(3);
        let mut last = f64::INFINITY;
        for scale in [0.0, 0.5, 1.0, 3.0] {
            p.net.layers[0].bias = array![[scale, 0.0, -scale]];
            let h = p.entropy(&array![[0.0, 0.0]]).unwrap()[0];
            assert!(h < last);
            last = h;
        }
    }

    #[test]
    fn gaussian_log_prob_gradient_matches_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let p = Policy::gaussian(3, 2, &[4], -0.5, &mut rng);
        let states = array![[0.1, -0.4, 0.8], [1.0, 0.2, -0.3]];
        let actions = ActionBatch::Continuous(array![[0.3, -0.2], [-0.5, 0.9]]);
        let build = |flat: &[f64]| {
            let mut q = p.clone();
            q.set_flat(flat);
            let mut tape = Tape::new();
            let vars = q.register(&mut tape);
            let s = tape.leaf(states.clone());
            let lp = q.log_prob_taped(&mut tape, &vars, s, &actions);
            let h = q.entropy_taped(&mut tape, &vars, s);
            let both = tape.add(lp, h);
            let loss = tape.mean(both);
            let g = tape.backward(loss);
            Ok((tape.scalar(loss), q.flat_grad(&vars, &tape, &g)))
        };
        let report = grad_check(build, &p.to_flat(), 1e-6).unwrap();
        assert!(report.max_relative_error < 1e-6, "{report:?}");
    }

    #[test]
    fn tensor_roundtrip_preserves_policy() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let g = Policy::gaussian(2, 3, &[5], -0.2, &mut rng);
        assert_eq!(Policy::from_tensors(&g.to_tensors(), PolicyKind::Gaussian).unwrap(), g);
        let c = Policy::categorical(2, 3, &[5], &mut rng);
        assert_eq!(Policy::from_tensors(&c.to_tensors(), PolicyKind::Categorical).unwrap(), c);
    }
}
