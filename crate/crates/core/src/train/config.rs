//! Flat `key = value` run configuration.
//!
//! Lines are `key = value`; `#` starts a comment. Environment parameters
//! use an `env.` prefix (`env.n = 5`). Keys left out take defaults that
//! depend on the environment's action space: continuous environments get
//! the continuous-control settings and discrete ones the discrete settings.
//!
//! | key | continuous | discrete |
//! |-----|-----------|----------|
//! | `learning_rate` | 3e-4 | 2.5e-4 |
//! | `clip_epsilon` | 0.2 | 0.1 |
//! | `epochs` | 10 | 4 |
//! | `minibatches` | 4 | 4 |
//! | `n_rollouts` | 1 | 8 |
//! | `horizon` | 2048 | 128 |
//! | `entropy_coef` | 0 | 0.01 |
//! | `total_steps` | 1000000 | 102400 |
//!
//! Shared defaults: `gamma` 0.99, `gae_lambda` 0.95, `value_coef` 0.5,
//! `max_grad_norm` 0.5, `lambda_mode` adaptive:90, `disc_steps` 5,
//! `disc_lr_multiplier` 10, `divergence` kl with the Donsker-Varadhan
//! representation (chi2 uses the variational one).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::divergence::{DiscriminatorInput, DivergenceKind, DivergenceSpec, InitialActionMode, Representation, ResidualMode};
use crate::error::{Error, Result};
use crate::mdp::{make_env, Env};
use crate::regularizer::{GradientPath, LambdaMode, RegularizerConfig};
use crate::space::ActionSpace;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algo {
    Ppo,
    PpoDice,
}

impl Algo {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "ppo" => Ok(Algo::Ppo),
            "ppo_dice" => Ok(Algo::PpoDice),
            _ => Err(Error::Config(format!("algo '{s}' is not ppo or ppo_dice"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Algo::Ppo => "ppo",
            Algo::PpoDice => "ppo_dice",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LrSchedule {
    Constant,
    /// Linear decay to zero over the run.
    Linear,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub env: String,
    pub env_params: BTreeMap<String, f64>,
    pub algo: Algo,
    pub seed: u64,
    pub total_steps: usize,
    /// `M`, rollouts per iteration.
    pub n_rollouts: usize,
    /// `T`, steps per rollout.
    pub horizon: usize,
    /// `N`, passes over the batch per iteration.
    pub epochs: usize,
    pub minibatches: usize,
    pub learning_rate: f64,
    pub lr_schedule: LrSchedule,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip_epsilon: f64,
    pub entropy_coef: f64,
    /// Scales the value loss before its (separate) optimizer step.
    pub value_coef: f64,
    /// Global gradient-norm clip per update; 0 disables it.
    pub max_grad_norm: f64,
    pub normalize_advantages: bool,
    pub clip_action_loss: bool,
    pub regularizer: RegularizerConfig,
    pub hidden: Vec<usize>,
    pub disc_hidden: Vec<usize>,
    pub disc_input: DiscriminatorInput,
    pub init_log_std: f64,
    /// Evaluate every this many iterations (0: only after training).
    pub eval_interval: usize,
    pub eval_episodes: usize,
    /// Evaluate with the most likely action instead of sampling.
    pub eval_greedy: bool,
    pub out: Option<PathBuf>,
    pub log_wall_time: bool,
    pub parallel_rollouts: bool,
}

/// Keys accepted besides `env.*`.
pub const KEYS: &[&str] = &[
    "env",
    "algo",
    "seed",
    "total_steps",
    "n_rollouts",
    "horizon",
    "epochs",
    "minibatches",
    "learning_rate",
    "lr_schedule",
    "gamma",
    "gae_lambda",
    "clip_epsilon",
    "entropy_coef",
    "value_coef",
    "max_grad_norm",
    "normalize_advantages",
    "clip_action_loss",
    "lambda_mode",
    "lambda_signed_percentile",
    "divergence",
    "representation",
    "disc_steps",
    "disc_lr_multiplier",
    "gradient_path",
    "residual_mode",
    "initial_action_mode",
    "hidden",
    "disc_hidden",
    "disc_input",
    "init_log_std",
    "eval_interval",
    "eval_episodes",
    "eval_greedy",
    "out",
    "log_wall_time",
    "parallel_rollouts",
];

/// Parse `key = value` lines into a map. Later lines win.
pub fn parse_pairs(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key = value, got '{raw}'", n + 1)))?;
        let k = k.trim();
        if k.is_empty() {
            return Err(Error::Config(format!("line {}: empty key", n + 1)));
        }
        map.insert(k.to_string(), v.trim().to_string());
    }
    Ok(map)
}

pub fn read_pairs(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_pairs(&text)
}

struct Pairs<'a> {
    map: &'a BTreeMap<String, String>,
}

impl Pairs<'_> {
    fn raw(&self, key: &str) -> Option<&str> {
        self.map.get(key).map(String::as_str)
    }

    fn num<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T> {
        match self.raw(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|_| Error::Config(format!("{key}: cannot parse '{v}'"))),
        }
    }

    fn flag(&self, key: &str, default: bool) -> Result<bool> {
        match self.raw(key) {
            None => Ok(default),
            Some("true" | "1" | "yes") => Ok(true),
            Some("false" | "0" | "no") => Ok(false),
            Some(v) => Err(Error::Config(format!("{key}: expected true or false, got '{v}'"))),
        }
    }

    fn sizes(&self, key: &str, default: &[usize]) -> Result<Vec<usize>> {
        match self.raw(key) {
            None => Ok(default.to_vec()),
            Some("" | "none") => Ok(Vec::new()),
            Some(v) => v
                .split(',')
                .map(|x| {
                    x.trim()
                        .parse::<usize>()
                        .ok()
                        .filter(|&n| n > 0)
                        .ok_or_else(|| Error::Config(format!("{key}: bad layer size '{x}'")))
                })
                .collect(),
        }
    }
}

impl TrainConfig {
    pub fn load(path: &Path) -> Result<Self> {
        Self::from_pairs(&read_pairs(path)?)
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::from_pairs(&parse_pairs(text)?)
    }

    pub fn from_pairs(map: &BTreeMap<String, String>) -> Result<Self> {
        for k in map.keys() {
            if !k.starts_with("env.") && !KEYS.contains(&k.as_str()) {
                return Err(Error::Config(format!("unknown key '{k}'")));
            }
        }
        let p = Pairs { map };
        let env = p.raw("env").unwrap_or("chain").to_string();
        let gamma: f64 = p.num("gamma", 0.99)?;
        let mut env_params = BTreeMap::new();
        for (k, v) in map.iter().filter_map(|(k, v)| k.strip_prefix("env.").map(|k| (k, v))) {
            let x: f64 = v.parse().map_err(|_| Error::Config(format!("env.{k}: cannot parse '{v}'")))?;
            env_params.insert(k.to_string(), x);
        }
        env_params.entry("gamma".to_string()).or_insert(gamma);
        if (env_params["gamma"] - gamma).abs() > 0.0 {
            return Err(Error::Config(format!(
                "env.gamma = {} differs from gamma = {gamma}",
                env_params["gamma"]
            )));
        }
        let probe = make_env(&env, &env_params)?;
        let continuous = matches!(probe.action_space(), ActionSpace::Continuous(_));

        let kind = match p.raw("divergence").unwrap_or("kl") {
            "kl" => DivergenceKind::Kl,
            "chi2" => DivergenceKind::ChiSquared,
            "tv" => DivergenceKind::TotalVariation,
            other => return Err(Error::Config(format!("divergence '{other}' is not kl, chi2 or tv"))),
        };
        let representation = match p.raw("representation").unwrap_or("auto") {
            "dv" => Representation::DonskerVaradhan,
            "dice" => Representation::VariationalDice,
            "auto" if kind == DivergenceKind::Kl => Representation::DonskerVaradhan,
            "auto" => Representation::VariationalDice,
            other => return Err(Error::Config(format!("representation '{other}' is not dice, dv or auto"))),
        };
        let residual_mode = match p.raw("residual_mode").unwrap_or("auto") {
            "shared" => ResidualMode::Shared,
            "independent" => ResidualMode::Independent,
            "expected" => ResidualMode::Expected,
            "auto" if continuous => ResidualMode::Shared,
            "auto" => ResidualMode::Expected,
            other => return Err(Error::Config(format!("residual_mode '{other}' is not auto, shared, independent or expected"))),
        };
        if residual_mode == ResidualMode::Expected && continuous {
            return Err(Error::Config("residual_mode = expected needs a discrete action space".into()));
        }
        let regularizer = RegularizerConfig {
            lambda_mode: LambdaMode::parse(p.raw("lambda_mode").unwrap_or("adaptive:90"))?,
            signed_percentile: p.flag("lambda_signed_percentile", false)?,
            divergence: DivergenceSpec::new(kind, representation)?,
            k_steps: p.num("disc_steps", 5)?,
            lr_multiplier: p.num("disc_lr_multiplier", 10.0)?,
            gradient_path: match p.raw("gradient_path").unwrap_or("auto") {
                "auto" => GradientPath::Auto,
                "reparam" => GradientPath::Reparam,
                "score" | "score_function" => GradientPath::ScoreFunction,
                "all_actions" => GradientPath::AllActions,
                other => {
                    return Err(Error::Config(format!(
                        "gradient_path '{other}' is not auto, reparam, score or all_actions"
                    )))
                }
            },
            initial_actions: match p.raw("initial_action_mode").unwrap_or("per_sample") {
                "per_sample" => InitialActionMode::PerSample,
                "per_rollout" => InitialActionMode::PerRollout,
                other => return Err(Error::Config(format!("initial_action_mode '{other}' is not per_sample or per_rollout"))),
            },
            residual_mode,
        };
        match (regularizer.gradient_path, continuous) {
            (GradientPath::Reparam, false) => {
                return Err(Error::Config("gradient_path = reparam needs a continuous action space".into()))
            }
            (GradientPath::AllActions, true) => {
                return Err(Error::Config("gradient_path = all_actions needs a discrete action space".into()))
            }
            _ => {}
        }
        let (lr, eps, epochs, m, t, ent, steps) =
            if continuous { (3e-4, 0.2, 10, 1, 2048, 0.0, 1_000_000) } else { (2.5e-4, 0.1, 4, 8, 128, 0.01, 102_400) };
        let cfg = TrainConfig {
            env,
            env_params,
            algo: Algo::parse(p.raw("algo").unwrap_or("ppo_dice"))?,
            seed: p.num("seed", 0)?,
            total_steps: p.num("total_steps", steps)?,
            n_rollouts: p.num("n_rollouts", m)?,
            horizon: p.num("horizon", t)?,
            epochs: p.num("epochs", epochs)?,
            minibatches: p.num("minibatches", 4)?,
            learning_rate: p.num("learning_rate", lr)?,
            lr_schedule: match p.raw("lr_schedule").unwrap_or("constant") {
                "constant" => LrSchedule::Constant,
                "linear" => LrSchedule::Linear,
                other => return Err(Error::Config(format!("lr_schedule '{other}' is not constant or linear"))),
            },
            gamma,
            gae_lambda: p.num("gae_lambda", 0.95)?,
            clip_epsilon: p.num("clip_epsilon", eps)?,
            entropy_coef: p.num("entropy_coef", ent)?,
            value_coef: p.num("value_coef", 0.5)?,
            max_grad_norm: p.num("max_grad_norm", 0.5)?,
            normalize_advantages: p.flag("normalize_advantages", true)?,
            clip_action_loss: p.flag("clip_action_loss", true)?,
            regularizer,
            hidden: p.sizes("hidden", &[64, 64])?,
            disc_hidden: p.sizes("disc_hidden", &[64, 64])?,
            disc_input: match p.raw("disc_input").unwrap_or("concat") {
                "concat" => DiscriminatorInput::Concat,
                "joint" => DiscriminatorInput::Joint,
                other => return Err(Error::Config(format!("disc_input '{other}' is not concat or joint"))),
            },
            init_log_std: p.num("init_log_std", 0.0)?,
            eval_interval: p.num("eval_interval", 0)?,
            eval_episodes: p.num("eval_episodes", 10)?,
            eval_greedy: p.flag("eval_greedy", false)?,
            out: p.raw("out").filter(|s| !s.is_empty()).map(PathBuf::from),
            log_wall_time: p.flag("log_wall_time", false)?,
            parallel_rollouts: p.flag("parallel_rollouts", true)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.n_rollouts == 0 || self.horizon == 0 || self.epochs == 0 || self.minibatches == 0 {
            return bad("n_rollouts, horizon, epochs and minibatches must be ≥ 1".into());
        }
        if self.minibatches > self.batch_size() {
            return bad(format!("{} minibatches exceed the batch of {}", self.minibatches, self.batch_size()));
        }
        if self.total_steps < self.batch_size() {
            return bad(format!("total_steps {} is below one batch of {}", self.total_steps, self.batch_size()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate {} must be > 0", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return bad(format!("gamma {} outside [0, 1)", self.gamma));
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return bad(format!("gae_lambda {} outside [0, 1]", self.gae_lambda));
        }
        if !(self.clip_epsilon > 0.0 && self.clip_epsilon < 1.0) {
            return bad(format!("clip_epsilon {} outside (0, 1)", self.clip_epsilon));
        }
        for (name, v) in [
            ("entropy_coef", self.entropy_coef),
            ("value_coef", self.value_coef),
            ("max_grad_norm", self.max_grad_norm),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} {v} must be finite and ≥ 0"));
            }
        }
        if self.eval_episodes == 0 {
            return bad("eval_episodes must be ≥ 1".into());
        }
        self.regularizer.validate()
    }

    pub fn batch_size(&self) -> usize {
        self.n_rollouts * self.horizon
    }

    pub fn iterations(&self) -> usize {
        self.total_steps / self.batch_size()
    }

    pub fn make_env(&self) -> Result<Env> {
        make_env(&self.env, &self.env_params)
    }

    /// The configuration as `key = value` lines that parse back to `self`.
    pub fn to_text(&self) -> String {
        let r = &self.regularizer;
        let sizes = |v: &[usize]| {
            if v.is_empty() {
                "none".to_string()
            } else {
                v.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
            }
        };
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("env", self.env.clone());
        for (k, v) in &self.env_params {
            kv(&format!("env.{k}"), v.to_string());
        }
        kv("algo", self.algo.name().into());
        kv("seed", self.seed.to_string());
        kv("total_steps", self.total_steps.to_string());
        kv("n_rollouts", self.n_rollouts.to_string());
        kv("horizon", self.horizon.to_string());
        kv("epochs", self.epochs.to_string());
        kv("minibatches", self.minibatches.to_string());
        kv("learning_rate", self.learning_rate.to_string());
        kv("lr_schedule", match self.lr_schedule {
            LrSchedule::Constant => "constant".into(),
            LrSchedule::Linear => "linear".into(),
        });
        kv("gamma", self.gamma.to_string());
        kv("gae_lambda", self.gae_lambda.to_string());
        kv("clip_epsilon", self.clip_epsilon.to_string());
        kv("entropy_coef", self.entropy_coef.to_string());
        kv("value_coef", self.value_coef.to_string());
        kv("max_grad_norm", self.max_grad_norm.to_string());
        kv("normalize_advantages", self.normalize_advantages.to_string());
        kv("clip_action_loss", self.clip_action_loss.to_string());
        kv("lambda_mode", r.lambda_mode.to_string());
        kv("lambda_signed_percentile", r.signed_percentile.to_string());
        kv("divergence", match r.divergence.kind {
            DivergenceKind::Kl => "kl".into(),
            DivergenceKind::ChiSquared => "chi2".into(),
            DivergenceKind::TotalVariation => "tv".into(),
        });
        kv("representation", match r.divergence.representation {
            Representation::VariationalDice => "dice".into(),
            Representation::DonskerVaradhan => "dv".into(),
        });
        kv("disc_steps", r.k_steps.to_string());
        kv("disc_lr_multiplier", r.lr_multiplier.to_string());
        kv("gradient_path", match r.gradient_path {
            GradientPath::Auto => "auto".into(),
            GradientPath::Reparam => "reparam".into(),
            GradientPath::ScoreFunction => "score".into(),
            GradientPath::AllActions => "all_actions".into(),
        });
        kv("residual_mode", match r.residual_mode {
            ResidualMode::Shared => "shared".into(),
            ResidualMode::Independent => "independent".into(),
            ResidualMode::Expected => "expected".into(),
        });
        kv("initial_action_mode", match r.initial_actions {
            InitialActionMode::PerSample => "per_sample".into(),
            InitialActionMode::PerRollout => "per_rollout".into(),
        });
        kv("hidden", sizes(&self.hidden));
        kv("disc_hidden", sizes(&self.disc_hidden));
        kv("disc_input", match self.disc_input {
            DiscriminatorInput::Concat => "concat".into(),
            DiscriminatorInput::Joint => "joint".into(),
        });
        kv("init_log_std", self.init_log_std.to_string());
        kv("eval_interval", self.eval_interval.to_string());
        kv("eval_episodes", self.eval_episodes.to_string());
        kv("eval_greedy", self.eval_greedy.to_string());
        if let Some(out) = &self.out {
            kv("out", out.display().to_string());
        }
        kv("log_wall_time", self.log_wall_time.to_string());
        kv("parallel_rollouts", self.parallel_rollouts.to_string());
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_action_space() {
        let c = TrainConfig::parse("env = chain").unwrap();
        assert_eq!((c.learning_rate, c.clip_epsilon, c.epochs, c.n_rollouts, c.horizon), (2.5e-4, 0.1, 4, 8, 128));
        assert_eq!(c.entropy_coef, 0.01);
        assert_eq!(c.regularizer.residual_mode, ResidualMode::Expected);
        let c = TrainConfig::parse("env = point_mass").unwrap();
        assert_eq!((c.learning_rate, c.clip_epsilon, c.epochs, c.n_rollouts, c.horizon), (3e-4, 0.2, 10, 1, 2048));
        assert_eq!((c.minibatches, c.gamma, c.gae_lambda, c.entropy_coef, c.value_coef), (4, 0.99, 0.95, 0.0, 0.5));
        assert_eq!(c.regularizer.divergence, DivergenceSpec::kl_dv());
        assert_eq!(c.regularizer.lambda_mode, LambdaMode::Adaptive(90.0));
        assert_eq!((c.regularizer.k_steps, c.regularizer.lr_multiplier), (5, 10.0));
    }

    #[test]
    fn text_round_trip() {
        let c = TrainConfig::parse(
            "env = gridworld\nenv.slip = 0.1\nalgo = ppo\nseed = 7 # comment\nhidden = 8\ndivergence = chi2\nout = /tmp/x\n",
        )
        .unwrap();
        assert_eq!(c.regularizer.divergence, DivergenceSpec::chi2());
        assert_eq!(TrainConfig::parse(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn config_errors() {
        for text in [
            "bogus = 1",
            "env = nowhere",
            "algo = sac",
            "divergence = chi2\nrepresentation = dv",
            "lambda_mode = fixed:-1",
            "disc_steps = 0",
            "clip_epsilon = 1.5",
            "env = point_mass\nresidual_mode = expected",
            "gamma = 0.9\nenv.gamma = 0.8",
            "no equals sign",
            "total_steps = 10",
        ] {
            assert!(matches!(TrainConfig::parse(text), Err(Error::Config(_))), "{text}");
        }
    }
}
