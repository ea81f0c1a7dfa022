use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{ComparisonReport, CurveSummary, ExperimentConfig};
use crate::error::{Error, Result};

fn opt(x: Option<f64>, precision: usize) -> String {
    match x {
        Some(v) => format!("{v:.precision$}"),
        None => "NA".to_string(),
    }
}

/// One row per method: cost statistics, wall times and improvement over PSO.
pub fn summary_csv(report: &ComparisonReport) -> String {
    let mut out = String::from(
        "method,runs,mean_best_cost,std_best_cost,min_best_cost,max_best_cost,mean_wall_time,mean_wall_time_excl_observation,improvement_vs_pso_pct\n",
    );
    for s in &report.methods {
        let _ = writeln!(
            out,
            "{},{},{:.6},{:.6},{:.6},{:.6},{},{},{}",
            s.method,
            s.runs,
            s.mean_best_cost,
            s.std_best_cost,
            s.min_best_cost,
            s.max_best_cost,
            opt(s.mean_wall_time, 6),
            opt(s.mean_wall_time_excl_observation, 6),
            opt(s.improvement_vs_pso, 2),
        );
    }
    out
}

fn curve_csv(curve: &CurveSummary) -> String {
    let mut out = String::from("iteration,mean_gbest,min_gbest,max_gbest\n");
    for t in 0..curve.mean.len() {
        let _ = writeln!(out, "{t},{:.6},{:.6},{:.6}", curve.mean[t], curve.min[t], curve.max[t]);
    }
    out
}

fn runs_csv(report: &ComparisonReport) -> String {
    let mut out = String::from("method,env_seed,run,swarm_seed,best_cost,wall_time,observation_time\n");
    for r in &report.runs {
        let _ = writeln!(
            out,
            "{},{},{},{},{:?},{},{}",
            r.method,
            r.env_seed,
            r.run,
            r.swarm_seed,
            r.best_cost,
            r.wall_time.map_or("NA".into(), |v| format!("{v:?}")),
            r.observation_time.map_or("NA".into(), |v| format!("{v:?}")),
        );
    }
    out
}

const COLORS: [&str; 3] = ["#1f77b4", "#d62728", "#2ca02c"];

/// Mean convergence curve of every method as a standalone SVG line chart.
pub fn render_svg(report: &ComparisonReport) -> String {
    let (w, h) = (640.0, 400.0);
    let (left, right, top, bottom) = (70.0, 20.0, 20.0, 50.0);
    let (pw, ph) = (w - left - right, h - top - bottom);
    let values = report.curves.iter().flat_map(|c| c.mean.iter().copied());
    let (mut lo, mut hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        (lo, hi) = (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        (lo, hi) = (lo - 0.5, hi + 0.5);
    }
    let iters = report.curves.iter().map(|c| c.mean.len()).max().unwrap_or(1).saturating_sub(1).max(1) as f64;
    let x = |t: f64| left + t / iters * pw;
    let y = |v: f64| top + (hi - v) / (hi - lo) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<path d="M{left:.2},{top:.2} V{:.2} H{:.2}" fill="none" stroke="black"/>"#,
        top + ph,
        left + pw
    );
    for i in 0..=4 {
        let v = lo + (hi - lo) * i as f64 / 4.0;
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{v:.2}</text>"#,
            left - 6.0,
            y(v) + 4.0
        );
        let t = iters * i as f64 / 4.0;
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{t:.0}</text>"#,
            x(t),
            top + ph + 16.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">iteration</text>"#,
        left + pw / 2.0,
        h - 10.0
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">mean best cost</text>"#,
        top + ph / 2.0,
        top + ph / 2.0
    );
    for (i, c) in report.curves.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let points: Vec<String> = c
            .mean
            .iter()
            .enumerate()
            .map(|(t, &v)| format!("{:.2},{:.2}", x(t as f64), y(v)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            points.join(" ")
        );
        let ly = top + 14.0 + 16.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{color}" stroke-width="2"/><text x="{:.2}" y="{:.2}">{}</text>"#,
            left + pw - 90.0,
            ly - 4.0,
            left + pw - 70.0,
            ly - 4.0,
            left + pw - 64.0,
            ly,
            c.method
        );
    }
    s.push_str("</svg>\n");
    s
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn json<T: serde::Serialize>(value: &T, what: &str) -> Result<String> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::json(what, e))?;
    text.push('\n');
    Ok(text)
}

/// Writes `summary.json`, `summary.csv`, `curves/<method>.csv`, `curves.svg`,
/// the per-run records (`runs.csv`, `runs.json`) and the resolved
/// configuration (`config.json`) into `dir`.
pub fn emit_report(report: &ComparisonReport, config: &ExperimentConfig, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    let curves_dir = dir.join("curves");
    fs::create_dir_all(&curves_dir).map_err(|e| Error::io(&curves_dir, e))?;

    let mut summary = report.clone();
    summary.runs.clear();
    summary.curves.clear();
    write(&dir.join("summary.json"), &json(&summary, "summary")?)?;
    write(&dir.join("summary.csv"), &summary_csv(report))?;
    for c in &report.curves {
        write(&curves_dir.join(format!("{}.csv", c.method)), &curve_csv(c))?;
    }
    write(&dir.join("curves.svg"), &render_svg(report))?;
    write(&dir.join("runs.csv"), &runs_csv(report))?;
    write(&dir.join("runs.json"), &json(&report.runs, "runs")?)?;
    write(&dir.join("config.json"), &json(config, "config")?)
}
