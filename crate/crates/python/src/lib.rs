use std::path::PathBuf;

use ndarray::Array2;
use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use ppo_dice::divergence::exact::{flat, ExactDiceProblem};
use ppo_dice::divergence::{DivergenceKind, DivergenceSpec};
use ppo_dice::mdp::TabularMdp;
use ppo_dice::oracle::{self, ArgumentOrder, TabularPolicy};
use ppo_dice::train::output::write_run;
use ppo_dice::train::verify::run_checks;
use ppo_dice::train::{self, TrainConfig, TrainOutcome};
use ppo_dice::Error;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Config(_) | Error::Input(_) => PyValueError::new_err(e.to_string()),
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn rows(a: &Array2<f64>) -> Vec<Vec<f64>> {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn matrix(v: Vec<Vec<f64>>) -> PyResult<Array2<f64>> {
    let n = v.len();
    let m = v.first().map_or(0, Vec::len);
    if v.iter().any(|r| r.len() != m) {
        return Err(PyValueError::new_err("ragged matrix"));
    }
    Array2::from_shape_vec((n, m), v.concat()).map_err(|e| PyValueError::new_err(e.to_string()))
}

fn spec(divergence: &str, representation: &str) -> PyResult<DivergenceSpec> {
    match (divergence, representation) {
        ("kl", "dice") => Ok(DivergenceSpec::kl_dice()),
        ("kl", "dv") => Ok(DivergenceSpec::kl_dv()),
        ("chi2", "dice") => Ok(DivergenceSpec::chi2()),
        _ => Err(PyValueError::new_err(format!("unsupported divergence {divergence}/{representation}"))),
    }
}

/// A small tabular MDP.
#[pyclass(name = "TabularMdp", frozen)]
struct PyMdp(TabularMdp);

#[pymethods]
impl PyMdp {
    #[staticmethod]
    #[pyo3(signature = (n=5, slip=0.0, gamma=0.99))]
    fn chain(n: usize, slip: f64, gamma: f64) -> PyResult<Self> {
        TabularMdp::chain(n, slip, gamma).map(Self).map_err(to_py)
    }

    #[staticmethod]
    #[pyo3(signature = (width=4, height=4, slip=0.0, gamma=0.99))]
    fn gridworld(width: usize, height: usize, slip: f64, gamma: f64) -> PyResult<Self> {
        TabularMdp::gridworld(width, height, slip, gamma).map(Self).map_err(to_py)
    }

    #[staticmethod]
    #[pyo3(signature = (n_states, n_actions, seed=0, gamma=0.99))]
    fn random(n_states: usize, n_actions: usize, seed: u64, gamma: f64) -> PyResult<Self> {
        TabularMdp::random(n_states, n_actions, seed, gamma).map(Self).map_err(to_py)
    }

    #[getter]
    fn n_states(&self) -> usize {
        self.0.n_states()
    }

    #[getter]
    fn n_actions(&self) -> usize {
        self.0.n_actions()
    }

    #[getter]
    fn gamma(&self) -> f64 {
        self.0.discount
    }

    /// `(J, policy)` of an optimal deterministic policy.
    fn optimal(&self) -> PyResult<(f64, Vec<Vec<f64>>)> {
        let (pi, j) = oracle::optimal_policy(&self.0).map_err(to_py)?;
        Ok((j, rows(&pi.probs)))
    }

    /// `J(π) = (1−γ) ρᵀ V^π`.
    fn performance(&self, policy: Vec<Vec<f64>>) -> PyResult<f64> {
        let pi = TabularPolicy::new(matrix(policy)?).map_err(to_py)?;
        oracle::exact_performance(&self.0, &pi).map_err(to_py)
    }

    /// `(d, μ)`: normalized discounted state and state-action visitations.
    fn visitation(&self, policy: Vec<Vec<f64>>) -> PyResult<(Vec<f64>, Vec<Vec<f64>>)> {
        let pi = TabularPolicy::new(matrix(policy)?).map_err(to_py)?;
        let (d, mu) = oracle::exact_visitation(&self.0, &pi).map_err(to_py)?;
        Ok((d.to_vec(), rows(&mu)))
    }

    /// Exact `Σ μ φ(μ'/μ)` between the visitations of `behavior` and `target`.
    #[pyo3(signature = (behavior, target, divergence="kl"))]
    fn divergence(&self, behavior: Vec<Vec<f64>>, target: Vec<Vec<f64>>, divergence: &str) -> PyResult<f64> {
        let kind = match divergence {
            "kl" => DivergenceKind::Kl,
            "chi2" => DivergenceKind::ChiSquared,
            "tv" => DivergenceKind::TotalVariation,
            other => return Err(PyValueError::new_err(format!("unknown divergence {other}"))),
        };
        let pi = TabularPolicy::new(matrix(behavior)?).map_err(to_py)?;
        let pi_t = TabularPolicy::new(matrix(target)?).map_err(to_py)?;
        let (_, mu) = oracle::exact_visitation(&self.0, &pi).map_err(to_py)?;
        let (_, mu_t) = oracle::exact_visitation(&self.0, &pi_t).map_err(to_py)?;
        oracle::exact_phi_divergence(&flat(&mu_t), &flat(&mu), kind, ArgumentOrder::BaseWeighted).map_err(to_py)
    }

    /// Divergence estimate from a tabular discriminator fitted on exact
    /// expectations.
    #[pyo3(signature = (behavior, target, divergence="kl", representation="dice"))]
    fn fitted_divergence(
        &self,
        behavior: Vec<Vec<f64>>,
        target: Vec<Vec<f64>>,
        divergence: &str,
        representation: &str,
    ) -> PyResult<f64> {
        let pi = TabularPolicy::new(matrix(behavior)?).map_err(to_py)?;
        let pi_t = TabularPolicy::new(matrix(target)?).map_err(to_py)?;
        let problem = ExactDiceProblem::new(&self.0, &pi, &pi_t).map_err(to_py)?;
        let fit = problem.fit(spec(divergence, representation)?, 200, 1e-11).map_err(to_py)?;
        Ok(fit.estimate())
    }
}

/// A run configuration parsed from `key = value` text.
#[pyclass(name = "TrainConfig", from_py_object)]
#[derive(Clone)]
struct PyConfig(TrainConfig);

#[pymethods]
impl PyConfig {
    #[new]
    #[pyo3(signature = (text=""))]
    fn new(text: &str) -> PyResult<Self> {
        TrainConfig::parse(text).map(Self).map_err(to_py)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        TrainConfig::load(&path).map(Self).map_err(to_py)
    }

    fn to_text(&self) -> String {
        self.0.to_text()
    }

    #[getter]
    fn iterations(&self) -> usize {
        self.0.iterations()
    }

    fn __repr__(&self) -> String {
        format!("TrainConfig(env={}, algo={}, seed={})", self.0.env, self.0.algo.name(), self.0.seed)
    }
}

/// Result of a training run.
#[pyclass(name = "TrainOutcome", frozen)]
struct PyOutcome(TrainOutcome);

#[pymethods]
impl PyOutcome {
    #[getter]
    fn failure(&self) -> Option<String> {
        self.0.failure.clone()
    }

    /// `(mean, stderr)` of the final evaluation.
    #[getter]
    fn final_return(&self) -> Option<(f64, f64)> {
        self.0.final_eval.map(|e| (e.mean, e.stderr))
    }

    /// One dict per iteration, keyed like the metrics CSV columns.
    fn metrics<'py>(&self, py: Python<'py>) -> PyResult<Vec<Bound<'py, PyDict>>> {
        self.0
            .metrics
            .iter()
            .map(|r| {
                let d = PyDict::new(py);
                d.set_item("iteration", r.iteration)?;
                d.set_item("env_steps", r.env_steps)?;
                d.set_item("mean_episode_return", r.mean_episode_return)?;
                d.set_item("policy_loss", r.policy_loss)?;
                d.set_item("value_loss", r.value_loss)?;
                d.set_item("divergence_estimate", r.divergence_estimate)?;
                d.set_item("λ_used", r.lambda_used)?;
                d.set_item("clip_fraction", r.clip_fraction)?;
                d.set_item("entropy", r.entropy)?;
                d.set_item("wall_ms", r.wall_ms)?;
                Ok(d)
            })
            .collect()
    }

    /// Action probabilities at every state of a tabular environment.
    fn tabular_policy(&self) -> PyResult<Vec<Vec<f64>>> {
        let env = self.0.config.make_env().map_err(to_py)?;
        let mdp = env
            .tabular()
            .ok_or_else(|| PyValueError::new_err("environment is not tabular"))?;
        let pi = TabularPolicy::from_policy(&self.0.policy, mdp.n_states()).map_err(to_py)?;
        Ok(rows(&pi.probs))
    }

    /// Write metrics, plots, config and checkpoints into `dir`.
    fn save(&self, dir: PathBuf) -> PyResult<()> {
        write_run(&dir, &self.0).map(|_| ()).map_err(to_py)
    }
}

/// Train with `config`; releases the GIL while running.
#[pyfunction(name = "train")]
fn train_py(py: Python<'_>, config: PyConfig) -> PyResult<PyOutcome> {
    let cfg = config.0;
    py.detach(move || train::train(&cfg)).map(PyOutcome).map_err(to_py)
}

/// `[(name, passed, detail)]` from the built-in self-checks.
#[pyfunction]
fn verify(py: Python<'_>) -> Vec<(String, bool, String)> {
    py.detach(run_checks)
        .into_iter()
        .map(|c| (c.name.to_string(), c.passed, c.detail))
        .collect()
}

#[pymodule]
fn ppo_dice_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyMdp>()?;
    m.add_class::<PyConfig>()?;
    m.add_class::<PyOutcome>()?;
    m.add_function(wrap_pyfunction!(train_py, m)?)?;
    m.add_function(wrap_pyfunction!(verify, m)?)?;
    Ok(())
}
