//! Run artifacts: metrics CSV, evaluation CSV, SVG plots and checkpoints.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::trainer::{mean_stderr, EvalRow, MetricsRow, TrainOutcome};
use crate::error::{Error, Result};
use crate::nn::save_tensors;

pub const METRICS_HEADER: &str =
    "iteration,env_steps,mean_episode_return,policy_loss,value_loss,divergence_estimate,λ_used,clip_fraction,entropy,wall_ms";

pub const EVAL_HEADER: &str = "iteration,env_steps,mean_return,stderr,episodes,degenerate";

pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut s = String::from(METRICS_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{}",
            r.iteration,
            r.env_steps,
            r.mean_episode_return,
            r.policy_loss,
            r.value_loss,
            r.divergence_estimate,
            r.lambda_used,
            r.clip_fraction,
            r.entropy,
            r.wall_ms
        );
    }
    s
}

pub fn parse_metrics_csv(text: &str) -> Result<Vec<MetricsRow>> {
    let mut lines = text.lines();
    if lines.next() != Some(METRICS_HEADER) {
        return Err(Error::Input("metrics CSV header mismatch".into()));
    }
    let mut rows = Vec::new();
    for (n, line) in lines.enumerate() {
        let f: Vec<&str> = line.split(',').collect();
        let bad = || Error::Input(format!("metrics CSV line {}: '{line}'", n + 2));
        if f.len() != 10 {
            return Err(bad());
        }
        let x = |i: usize| f[i].parse::<f64>().map_err(|_| bad());
        rows.push(MetricsRow {
            iteration: f[0].parse().map_err(|_| bad())?,
            env_steps: f[1].parse().map_err(|_| bad())?,
            mean_episode_return: x(2)?,
            policy_loss: x(3)?,
            value_loss: x(4)?,
            divergence_estimate: x(5)?,
            lambda_used: x(6)?,
            clip_fraction: x(7)?,
            entropy: x(8)?,
            wall_ms: f[9].parse().map_err(|_| bad())?,
        });
    }
    Ok(rows)
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricsRow>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_metrics_csv(&text)
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn write_metrics_csv(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    write(path, &metrics_csv(rows))
}

pub fn eval_csv(rows: &[EvalRow]) -> String {
    let mut s = String::from(EVAL_HEADER);
    s.push('\n');
    for r in rows {
        let e = &r.result;
        let _ = writeln!(s, "{},{},{},{},{},{}", r.iteration, r.env_steps, e.mean, e.stderr, e.episodes, e.degenerate);
    }
    s
}

/// Mean and standard error across runs at one x position.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BandPoint {
    pub env_steps: usize,
    pub mean: f64,
    pub stderr: f64,
    pub n: usize,
}

/// Per-`env_steps` mean ± standard error of `mean_episode_return` over
/// runs. Points only some runs reached use the runs that have them;
/// non-finite returns are skipped.
pub fn aggregate(runs: &[Vec<MetricsRow>]) -> Vec<BandPoint> {
    let mut xs: Vec<usize> = runs.iter().flatten().map(|r| r.env_steps).collect();
    xs.sort_unstable();
    xs.dedup();
    xs.into_iter()
        .filter_map(|x| {
            let ys: Vec<f64> = runs
                .iter()
                .filter_map(|run| run.iter().find(|r| r.env_steps == x))
                .map(|r| r.mean_episode_return)
                .filter(|y| y.is_finite())
                .collect();
            if ys.is_empty() {
                return None;
            }
            let (mean, stderr) = mean_stderr(&ys);
            Some(BandPoint { env_steps: x, mean, stderr, n: ys.len() })
        })
        .collect()
}

pub fn band_csv(points: &[BandPoint]) -> String {
    let mut s = String::from("env_steps,mean,stderr,n\n");
    for p in points {
        let _ = writeln!(s, "{},{},{},{}", p.env_steps, p.mean, p.stderr, p.n);
    }
    s
}

/// A line, optionally with a shaded ± band, for [`svg_plot`].
#[derive(Debug, Clone)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    pub band: Option<Vec<f64>>,
}

const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];
const W: f64 = 640.0;
const H: f64 = 400.0;
const MARGIN: (f64, f64, f64, f64) = (70.0, 20.0, 40.0, 50.0);

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn tick_label(v: f64) -> String {
    if v != 0.0 && (v.abs() >= 1e5 || v.abs() < 1e-2) {
        format!("{v:.1e}")
    } else if v.fract() == 0.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.2}")
    }
}

/// Line plot with axes, five ticks per axis and a legend.
pub fn svg_plot(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let (ml, mr, mt, mb) = MARGIN;
    let mut lo = (f64::INFINITY, f64::INFINITY);
    let mut hi = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for s in series {
        for (i, &(x, y)) in s.points.iter().enumerate() {
            if !(x.is_finite() && y.is_finite()) {
                continue;
            }
            let half = s.band.as_ref().map_or(0.0, |b| b[i]);
            lo = (lo.0.min(x), lo.1.min(y - half));
            hi = (hi.0.max(x), hi.1.max(y + half));
        }
    }
    if !lo.0.is_finite() {
        lo = (0.0, 0.0);
        hi = (1.0, 1.0);
    }
    if hi.0 <= lo.0 {
        hi.0 = lo.0 + 1.0;
    }
    if hi.1 <= lo.1 {
        hi.1 = lo.1 + 1.0;
    }
    let px = |x: f64| ml + (x - lo.0) / (hi.0 - lo.0) * (W - ml - mr);
    let py = |y: f64| H - mb - (y - lo.1) / (hi.1 - lo.1) * (H - mt - mb);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="16" text-anchor="middle" font-size="14">{}</text>"#, W / 2.0, escape(title));
    let _ = writeln!(
        s,
        r#"<path d="M{ml},{mt} V{} H{}" fill="none" stroke="black"/>"#,
        H - mb,
        W - mr
    );
    for k in 0..=4 {
        let fx = lo.0 + (hi.0 - lo.0) * k as f64 / 4.0;
        let fy = lo.1 + (hi.1 - lo.1) * k as f64 / 4.0;
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            px(fx),
            H - mb + 16.0,
            tick_label(fx)
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
            ml - 6.0,
            py(fy) + 4.0,
            tick_label(fy)
        );
    }
    let _ = writeln!(s, r#"<text x="{:.1}" y="{}" text-anchor="middle">{}</text>"#, (ml + W - mr) / 2.0, H - 8.0, escape(x_label));
    let _ = writeln!(
        s,
        r#"<text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">{}</text>"#,
        (mt + H - mb) / 2.0,
        (mt + H - mb) / 2.0,
        escape(y_label)
    );

    for (i, ser) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let pts: Vec<(usize, f64, f64)> = ser
            .points
            .iter()
            .enumerate()
            .filter(|(_, (x, y))| x.is_finite() && y.is_finite())
            .map(|(j, &(x, y))| (j, x, y))
            .collect();
        if let Some(band) = &ser.band {
            if !pts.is_empty() {
                let mut d = String::new();
                for (k, &(j, x, y)) in pts.iter().enumerate() {
                    let _ = write!(d, "{}{:.2},{:.2} ", if k == 0 { "M" } else { "L" }, px(x), py(y + band[j]));
                }
                for &(j, x, y) in pts.iter().rev() {
                    let _ = write!(d, "L{:.2},{:.2} ", px(x), py(y - band[j]));
                }
                let _ = writeln!(s, r#"<path d="{}Z" fill="{color}" fill-opacity="0.25" stroke="none"/>"#, d);
            }
        }
        let line: Vec<String> = pts.iter().map(|&(_, x, y)| format!("{:.2},{:.2}", px(x), py(y))).collect();
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
            line.join(" ")
        );
        let ly = mt + 14.0 * (i as f64 + 1.0);
        let _ = writeln!(
            s,
            r#"<line x1="{:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{color}" stroke-width="2"/><text x="{:.1}" y="{:.1}">{}</text>"#,
            ml + 10.0,
            ml + 30.0,
            ml + 35.0,
            ly + 4.0,
            escape(&ser.label)
        );
    }
    s.push_str("</svg>\n");
    s
}

pub fn learning_curve_svg(title: &str, rows: &[MetricsRow]) -> String {
    let series = Series {
        label: "mean episode return".into(),
        points: rows.iter().map(|r| (r.env_steps as f64, r.mean_episode_return)).collect(),
        band: None,
    };
    svg_plot(title, "env steps", "mean episode return", &[series])
}

pub fn band_series(label: &str, points: &[BandPoint]) -> Series {
    Series {
        label: label.to_string(),
        points: points.iter().map(|p| (p.env_steps as f64, p.mean)).collect(),
        band: Some(points.iter().map(|p| p.stderr).collect()),
    }
}

pub fn aggregate_svg(title: &str, groups: &[(String, Vec<BandPoint>)]) -> String {
    let series: Vec<Series> = groups.iter().map(|(l, p)| band_series(l, p)).collect();
    svg_plot(title, "env steps", "mean episode return (± 1 s.e.)", &series)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Files written by [`write_run`].
#[derive(Debug, Clone)]
pub struct RunFiles {
    pub metrics: PathBuf,
    pub eval: PathBuf,
    pub plot: PathBuf,
    pub config: PathBuf,
    pub policy: PathBuf,
    pub value: PathBuf,
    pub discriminator: Option<PathBuf>,
    pub failure: Option<PathBuf>,
}

/// Write every artifact of a run into `dir`, creating it if needed.
pub fn write_run(dir: &Path, outcome: &TrainOutcome) -> Result<RunFiles> {
    create_dir(dir)?;
    let cfg = &outcome.config;
    let files = RunFiles {
        metrics: dir.join("metrics.csv"),
        eval: dir.join("eval.csv"),
        plot: dir.join("learning_curve.svg"),
        config: dir.join("config.txt"),
        policy: dir.join("policy.ckpt"),
        value: dir.join("value.ckpt"),
        discriminator: outcome.discriminator.as_ref().map(|_| dir.join("discriminator.ckpt")),
        failure: outcome.failure.as_ref().map(|_| dir.join("failure.txt")),
    };
    write_metrics_csv(&files.metrics, &outcome.metrics)?;
    write(&files.eval, &eval_csv(&outcome.evaluations))?;
    let title = format!("{} on {} (seed {})", cfg.algo.name(), cfg.env, cfg.seed);
    write(&files.plot, &learning_curve_svg(&title, &outcome.metrics))?;
    write(&files.config, &cfg.to_text())?;
    save_tensors(&files.policy, &outcome.policy.to_tensors())?;
    save_tensors(&files.value, &outcome.value.to_tensors())?;
    if let (Some(p), Some(d)) = (&files.discriminator, &outcome.discriminator) {
        save_tensors(p, &d.net.to_tensors())?;
    }
    if let (Some(p), Some(msg)) = (&files.failure, &outcome.failure) {
        write(p, &format!("{msg}\n"))?;
    }
    Ok(files)
}
