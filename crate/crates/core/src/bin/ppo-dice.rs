use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use ppo_dice::train::config::read_pairs;
use ppo_dice::train::output::write_run;
use ppo_dice::train::suite::{report_markdown, run_suite, SuiteConfig};
use ppo_dice::train::verify::run_checks;
use ppo_dice::train::{train, TrainConfig};

const RUN_FAILURE: u8 = 1;
const CONFIG_ERROR: u8 = 2;

#[derive(Parser)]
#[command(name = "ppo-dice", version, about = "PPO with a visitation-divergence regularizer")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one agent; flags override keys from the config file.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// ppo or ppo_dice
        #[arg(long)]
        algo: Option<String>,
        #[arg(long)]
        env: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// fixed:X or adaptive:P
        #[arg(long)]
        lambda_mode: Option<String>,
        /// kl or chi2
        #[arg(long)]
        divergence: Option<String>,
        /// dice or dv
        #[arg(long)]
        representation: Option<String>,
        /// Use the unclipped surrogate.
        #[arg(long)]
        no_clip: bool,
    },
    /// Run every (env, algo, seed) combination of a suite file.
    Suite {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run the exact-oracle and gradient self-checks.
    Verify,
}

#[allow(clippy::too_many_arguments)]
fn train_cmd(
    config: PathBuf,
    seed: Option<u64>,
    algo: Option<String>,
    env: Option<String>,
    out: Option<PathBuf>,
    lambda_mode: Option<String>,
    divergence: Option<String>,
    representation: Option<String>,
    no_clip: bool,
) -> ExitCode {
    let mut pairs = match read_pairs(&config) {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(CONFIG_ERROR);
        }
    };
    let overrides = [
        ("seed", seed.map(|s| s.to_string())),
        ("algo", algo),
        ("env", env),
        ("out", out.map(|p| p.display().to_string())),
        ("lambda_mode", lambda_mode),
        ("divergence", divergence),
        ("representation", representation),
        ("clip_action_loss", no_clip.then(|| "false".to_string())),
    ];
    for (k, v) in overrides {
        if let Some(v) = v {
            pairs.insert(k.to_string(), v);
        }
    }
    let cfg = match TrainConfig::from_pairs(&pairs) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(CONFIG_ERROR);
        }
    };
    let dir = cfg
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from(format!("runs/{}-{}-seed{}", cfg.env, cfg.algo.name(), cfg.seed)));
    let outcome = match train(&cfg) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(RUN_FAILURE);
        }
    };
    if let Err(e) = write_run(&dir, &outcome) {
        eprintln!("error: {e}");
        return ExitCode::from(RUN_FAILURE);
    }
    if let Some(msg) = &outcome.failure {
        eprintln!("run failed: {msg}");
        eprintln!("last finite parameters written to {}", dir.display());
        return ExitCode::from(RUN_FAILURE);
    }
    if let Some(e) = outcome.final_eval {
        println!(
            "final return {:.4} ± {:.4} over {} episodes; outputs in {}",
            e.mean,
            e.stderr,
            e.episodes,
            dir.display()
        );
    }
    ExitCode::SUCCESS
}

fn suite_cmd(config: PathBuf) -> ExitCode {
    let suite = match SuiteConfig::load(&config) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(CONFIG_ERROR);
        }
    };
    match run_suite(&suite) {
        Ok(report) => {
            print!("{}", report_markdown(&report.cells));
            let failed: Vec<_> = report.runs.iter().filter(|r| r.failure.is_some()).collect();
            for r in &failed {
                eprintln!("{} {} seed {}: {}", r.env, r.algo.name(), r.seed, r.failure.as_deref().unwrap_or(""));
            }
            if failed.is_empty() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(RUN_FAILURE)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(RUN_FAILURE)
        }
    }
}

fn verify_cmd() -> ExitCode {
    let checks = run_checks();
    for c in &checks {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    if checks.iter().all(|c| c.passed) {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(RUN_FAILURE)
    }
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Train {
            config,
            seed,
            algo,
            env,
            out,
            lambda_mode,
            divergence,
            representation,
            no_clip,
        } => train_cmd(config, seed, algo, env, out, lambda_mode, divergence, representation, no_clip),
        Command::Suite { config } => suite_cmd(config),
        Command::Verify => verify_cmd(),
    }
}
