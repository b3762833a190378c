//! Multi-seed comparisons over environments and algorithms.
//!
//! A suite file uses the run-config syntax plus three list keys:
//!
//! ```text
//! envs = chain, gridworld
//! algos = ppo, ppo_dice
//! seeds = 0-9          # or 0, 1, 5
//! out = results/suite
//! total_steps = 20480  # shared by every run
//! chain.env.n = 7      # only runs on chain
//! ppo_dice.lambda_mode = fixed:0.1
//! ```
//!
//! Keys prefixed by an environment or algorithm name apply only to the
//! matching runs; environment-scoped keys win over algorithm-scoped ones.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::config::{parse_pairs, Algo, TrainConfig};
use super::output::{aggregate, aggregate_svg, band_csv, write_run, BandPoint};
use super::trainer::{mean_stderr, train, MetricsRow};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct SuiteConfig {
    pub envs: Vec<String>,
    pub algos: Vec<Algo>,
    pub seeds: Vec<u64>,
    pub out: Option<PathBuf>,
    pub shared: BTreeMap<String, String>,
    /// Overrides keyed by environment or algorithm name.
    pub scoped: BTreeMap<String, BTreeMap<String, String>>,
    pub parallel: bool,
}

fn list(v: &str) -> Vec<String> {
    v.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect()
}

fn parse_seeds(v: &str) -> Result<Vec<u64>> {
    let bad = || Error::Config(format!("seeds: cannot parse '{v}'"));
    let mut out = Vec::new();
    for part in list(v) {
        match part.split_once('-') {
            Some((a, b)) => {
                let (a, b): (u64, u64) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
                if b < a {
                    return Err(bad());
                }
                out.extend(a..=b);
            }
            None => out.push(part.parse().map_err(|_| bad())?),
        }
    }
    if out.is_empty() {
        return Err(bad());
    }
    Ok(out)
}

impl SuiteConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut map = parse_pairs(text)?;
        let envs = list(&map.remove("envs").ok_or_else(|| Error::Config("suite needs 'envs'".into()))?);
        let algos = list(&map.remove("algos").unwrap_or_else(|| "ppo, ppo_dice".into()))
            .iter()
            .map(|a| Algo::parse(a))
            .collect::<Result<Vec<_>>>()?;
        let seeds = parse_seeds(&map.remove("seeds").unwrap_or_else(|| "0".into()))?;
        let out = map.remove("out").map(PathBuf::from);
        let parallel = match map.remove("parallel_runs").as_deref() {
            None | Some("true") => true,
            Some("false") => false,
            Some(v) => return Err(Error::Config(format!("parallel_runs: expected true or false, got '{v}'"))),
        };
        if envs.is_empty() || algos.is_empty() {
            return Err(Error::Config("suite needs at least one env and one algo".into()));
        }
        let mut shared = BTreeMap::new();
        let mut scoped: BTreeMap<String, BTreeMap<String, String>> = BTreeMap::new();
        for (k, v) in map {
            let scope = k
                .split_once('.')
                .filter(|(head, _)| envs.iter().any(|e| e == head) || algos.iter().any(|a| a.name() == *head));
            match scope {
                Some((head, rest)) => {
                    scoped.entry(head.to_string()).or_default().insert(rest.to_string(), v);
                }
                None => {
                    shared.insert(k, v);
                }
            }
        }
        let suite = Self { envs, algos, seeds, out, shared, scoped, parallel };
        for env in &suite.envs {
            for &algo in &suite.algos {
                suite.run_config(env, algo, suite.seeds[0])?;
            }
        }
        Ok(suite)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// The run configuration for one cell and seed.
    pub fn run_config(&self, env: &str, algo: Algo, seed: u64) -> Result<TrainConfig> {
        let mut map = self.shared.clone();
        for scope in [algo.name(), env] {
            if let Some(extra) = self.scoped.get(scope) {
                map.extend(extra.clone());
            }
        }
        map.insert("env".into(), env.into());
        map.insert("algo".into(), algo.name().into());
        map.insert("seed".into(), seed.to_string());
        map.remove("out");
        TrainConfig::from_pairs(&map)
    }
}

#[derive(Debug, Clone)]
pub struct RunRecord {
    pub env: String,
    pub algo: Algo,
    pub seed: u64,
    /// Final evaluation return; `None` when the run failed.
    pub final_return: Option<f64>,
    pub failure: Option<String>,
    pub metrics: Vec<MetricsRow>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub env: String,
    pub algo: Algo,
    pub n_ok: usize,
    pub n_failed: usize,
    pub mean: f64,
    pub stderr: f64,
    /// Better than every other algorithm on this env by more than twice
    /// the combined standard error.
    pub bold: bool,
}

#[derive(Debug, Clone)]
pub struct SuiteReport {
    pub cells: Vec<Cell>,
    pub runs: Vec<RunRecord>,
}

/// `a` beats `b` when `a.mean − b.mean > 2·√(se_a² + se_b²)`.
pub fn clearly_better(a: &Cell, b: &Cell) -> bool {
    a.mean - b.mean > 2.0 * (a.stderr * a.stderr + b.stderr * b.stderr).sqrt()
}

pub fn summarize(envs: &[String], algos: &[Algo], runs: &[RunRecord]) -> Vec<Cell> {
    let mut cells = Vec::new();
    for env in envs {
        let start = cells.len();
        for &algo in algos {
            let mine: Vec<&RunRecord> = runs.iter().filter(|r| &r.env == env && r.algo == algo).collect();
            let finals: Vec<f64> = mine.iter().filter_map(|r| r.final_return).collect();
            let (mean, stderr) = mean_stderr(&finals);
            cells.push(Cell {
                env: env.clone(),
                algo,
                n_ok: finals.len(),
                n_failed: mine.len() - finals.len(),
                mean,
                stderr,
                bold: false,
            });
        }
        let group = cells[start..].to_vec();
        if group.len() > 1 {
            for (i, c) in cells[start..].iter_mut().enumerate() {
                c.bold = c.n_ok > 0 && group.iter().enumerate().all(|(j, o)| j == i || clearly_better(&group[i], o));
            }
        }
    }
    cells
}

pub fn report_markdown(cells: &[Cell]) -> String {
    let mut s = String::from("| env | algo | final return (mean ± s.e.) | runs | failed |\n|---|---|---|---|---|\n");
    for c in cells {
        let value = format!("{:.3} ± {:.3}", c.mean, c.stderr);
        let value = if c.bold { format!("**{value}**") } else { value };
        let _ = writeln!(s, "| {} | {} | {} | {} | {} |", c.env, c.algo.name(), value, c.n_ok, c.n_failed);
    }
    s
}

pub fn report_csv(cells: &[Cell]) -> String {
    let mut s = String::from("env,algo,mean_final_return,stderr,runs,failed,better\n");
    for c in cells {
        let _ = writeln!(s, "{},{},{},{},{},{},{}", c.env, c.algo.name(), c.mean, c.stderr, c.n_ok, c.n_failed, c.bold);
    }
    s
}

fn run_one(suite: &SuiteConfig, env: &str, algo: Algo, seed: u64) -> RunRecord {
    let base = RunRecord {
        env: env.to_string(),
        algo,
        seed,
        final_return: None,
        failure: None,
        metrics: Vec::new(),
    };
    let outcome = suite.run_config(env, algo, seed).and_then(|cfg| train(&cfg));
    match outcome {
        Ok(out) => {
            let written = match &suite.out {
                Some(dir) => write_run(&dir.join(env).join(algo.name()).join(format!("seed_{seed}")), &out).err(),
                None => None,
            };
            RunRecord {
                final_return: if out.failure.is_none() && written.is_none() {
                    out.final_eval.map(|e| e.mean)
                } else {
                    None
                },
                failure: out.failure.clone().or_else(|| written.map(|e| e.to_string())),
                metrics: out.metrics,
                ..base
            }
        }
        Err(e) => RunRecord {
            failure: Some(e.to_string()),
            ..base
        },
    }
}

/// Run every (env, algo, seed) combination. Failed runs are recorded and
/// the suite carries on; only problems writing the report are errors.
pub fn run_suite(suite: &SuiteConfig) -> Result<SuiteReport> {
    let jobs: Vec<(String, Algo, u64)> = suite
        .envs
        .iter()
        .flat_map(|e| suite.algos.iter().flat_map(move |&a| suite.seeds.iter().map(move |&s| (e.clone(), a, s))))
        .collect();
    let runs: Vec<RunRecord> = if suite.parallel {
        jobs.par_iter().map(|(e, a, s)| run_one(suite, e, *a, *s)).collect()
    } else {
        jobs.iter().map(|(e, a, s)| run_one(suite, e, *a, *s)).collect()
    };
    let cells = summarize(&suite.envs, &suite.algos, &runs);
    if let Some(dir) = &suite.out {
        write_report(dir, suite, &cells, &runs)?;
    }
    Ok(SuiteReport { cells, runs })
}

fn write_report(dir: &Path, suite: &SuiteConfig, cells: &[Cell], runs: &[RunRecord]) -> Result<()> {
    let put = |name: &str, text: &str| {
        let p = dir.join(name);
        fs::write(&p, text).map_err(|e| Error::io(&p, e))
    };
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    put("report.md", &report_markdown(cells))?;
    put("report.csv", &report_csv(cells))?;
    let mut failures = String::new();
    for r in runs.iter().filter(|r| r.failure.is_some()) {
        let _ = writeln!(failures, "{} {} seed {}: {}", r.env, r.algo.name(), r.seed, r.failure.as_deref().unwrap_or(""));
    }
    if !failures.is_empty() {
        put("failures.txt", &failures)?;
    }
    for env in &suite.envs {
        let mut groups: Vec<(String, Vec<BandPoint>)> = Vec::new();
        for &algo in &suite.algos {
            let curves: Vec<Vec<MetricsRow>> = runs
                .iter()
                .filter(|r| &r.env == env && r.algo == algo)
                .map(|r| r.metrics.clone())
                .collect();
            let band = aggregate(&curves);
            put(&format!("{env}_{}_band.csv", algo.name()), &band_csv(&band))?;
            groups.push((algo.name().to_string(), band));
        }
        put(&format!("{env}_aggregate.svg"), &aggregate_svg(&format!("{env}: {} seeds", suite.seeds.len()), &groups))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cell(algo: Algo, mean: f64, stderr: f64) -> Cell {
        Cell { env: "e".into(), algo, n_ok: 2, n_failed: 0, mean, stderr, bold: false }
    }

    #[test]
    fn bolding_needs_two_combined_stderrs() {
        let a = cell(Algo::Ppo, 1.0, 0.3);
        let b = cell(Algo::PpoDice, 2.0, 0.4);
        assert!(!clearly_better(&b, &a));
        let b = cell(Algo::PpoDice, 2.01, 0.4);
        assert!(clearly_better(&b, &a) && !clearly_better(&a, &b));
    }

    #[test]
    fn parses_lists_and_scopes() {
        let s = SuiteConfig::parse("envs = chain, gridworld\nseeds = 0-2, 7\nchain.env.n = 7\nppo.entropy_coef = 0.02\nhorizon = 16\n")
            .unwrap();
        assert_eq!(s.seeds, vec![0, 1, 2, 7]);
        assert_eq!(s.algos, vec![Algo::Ppo, Algo::PpoDice]);
        let c = s.run_config("chain", Algo::Ppo, 7).unwrap();
        assert_eq!((c.env_params["n"], c.entropy_coef, c.horizon, c.seed), (7.0, 0.02, 16, 7));
        let g = s.run_config("gridworld", Algo::PpoDice, 0).unwrap();
        assert!(!g.env_params.contains_key("n") && g.entropy_coef == 0.01);
        assert!(matches!(SuiteConfig::parse("envs = pong"), Err(Error::Config(_))));
        assert!(matches!(SuiteConfig::parse("envs = chain\nseeds = 3-1"), Err(Error::Config(_))));
    }

    #[test]
    fn two_by_two_suite_and_identical_algos() {
        let dir = tempfile::tempdir().unwrap();
        let text = format!(
            "envs = chain\nseeds = 0, 1\nenv.horizon = 20\nn_rollouts = 2\nhorizon = 16\ntotal_steps = 64\nhidden = 8\ndisc_hidden = 8\neval_episodes = 3\nout = {}\n",
            dir.path().display()
        );
        let suite = SuiteConfig::parse(&text).unwrap();
        let report = run_suite(&suite).unwrap();
        assert_eq!(report.cells.len(), 2);
        assert_eq!(report_markdown(&report.cells).lines().count(), 4);
        for f in ["report.md", "report.csv", "chain_aggregate.svg", "chain/ppo/seed_1/metrics.csv"] {
            assert!(dir.path().join(f).exists(), "{f}");
        }

        let twin = [cell(Algo::Ppo, 3.0, 0.0), cell(Algo::Ppo, 3.0, 0.0)];
        assert!(!clearly_better(&twin[0], &twin[1]) && !clearly_better(&twin[1], &twin[0]));
    }

    #[test]
    fn failed_runs_are_recorded() {
        let run = |algo, fr: Option<f64>| RunRecord {
            env: "e".into(),
            algo,
            seed: 0,
            final_return: fr,
            failure: fr.is_none().then(|| "boom".into()),
            metrics: Vec::new(),
        };
        let cells = summarize(
            &["e".into()],
            &[Algo::Ppo, Algo::PpoDice],
            &[run(Algo::Ppo, Some(1.0)), run(Algo::Ppo, None), run(Algo::PpoDice, Some(1.0))],
        );
        assert_eq!((cells[0].n_ok, cells[0].n_failed), (1, 1));
        assert!(!cells[0].bold && !cells[1].bold);
    }
}
