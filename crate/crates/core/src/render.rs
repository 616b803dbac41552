//! SVG plots and a plain-text metrics summary.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::env::{EnvConfig, Vec2};
use crate::error::Result;
use crate::eval::{read_metrics, Metrics, METRICS_FILE};
use crate::trace::{read_curve, read_trace, CurveRow, Entity, TraceRow};
use crate::trainer::CURVE_FILE;

const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf", "#8c564b", "#e377c2"];

/// Mean and spread of several learning curves at one evaluation point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BandPoint {
    pub env_step: f64,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

/// Aligns curves by evaluation index (seeds reach each evaluation at
/// slightly different env steps) and truncates to the shortest.
pub fn aggregate_curves(curves: &[Vec<CurveRow>]) -> Vec<BandPoint> {
    let len = curves.iter().map(Vec::len).min().unwrap_or(0);
    let k = curves.len() as f64;
    (0..len)
        .map(|j| {
            let rows = curves.iter().map(|c| &c[j]);
            let returns: Vec<f64> = rows.clone().map(|r| r.mean_return).collect();
            BandPoint {
                env_step: rows.map(|r| r.env_step as f64).sum::<f64>() / k,
                mean: returns.iter().sum::<f64>() / k,
                min: returns.iter().copied().fold(f64::INFINITY, f64::min),
                max: returns.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            }
        })
        .collect()
}

/// Mean greedy return with a min/max band across curves.
pub fn learning_curve_svg(curves: &[Vec<CurveRow>]) -> String {
    let band = aggregate_curves(curves);
    let (w, h, pad) = (640.0, 400.0, 50.0);
    let x_max = band.iter().map(|p| p.env_step).fold(1.0, f64::max);
    let y_lo = band.iter().map(|p| p.min).fold(f64::INFINITY, f64::min);
    let y_hi = band.iter().map(|p| p.max).fold(f64::NEG_INFINITY, f64::max);
    let (y_lo, y_hi) = if y_lo.is_finite() && y_hi > y_lo { (y_lo, y_hi) } else { (y_lo.min(0.0) - 1.0, y_hi.max(0.0) + 1.0) };
    let sx = |x: f64| pad + x / x_max * (w - 2.0 * pad);
    let sy = |y: f64| h - pad - (y - y_lo) / (y_hi - y_lo) * (h - 2.0 * pad);

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#);
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<rect id="axes" x="{pad}" y="{pad}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        w - 2.0 * pad,
        h - 2.0 * pad
    );
    if !band.is_empty() {
        let upper = band.iter().map(|p| format!("{:.2},{:.2}", sx(p.env_step), sy(p.max)));
        let lower = band.iter().rev().map(|p| format!("{:.2},{:.2}", sx(p.env_step), sy(p.min)));
        let pts: Vec<String> = upper.chain(lower).collect();
        let _ = writeln!(s, r#"<polygon id="band" points="{}" fill="{}" fill-opacity="0.25" stroke="none"/>"#, pts.join(" "), PALETTE[0]);
        let mean: Vec<String> = band.iter().map(|p| format!("{:.2},{:.2}", sx(p.env_step), sy(p.mean))).collect();
        let _ = writeln!(s, r#"<polyline id="mean" points="{}" fill="none" stroke="{}" stroke-width="2"/>"#, mean.join(" "), PALETTE[0]);
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" font-size="12" text-anchor="middle">env steps (0 to {x_max:.0})</text>"#, w / 2.0, h - 15.0);
    let _ = writeln!(
        s,
        r#"<text x="15" y="{}" font-size="12" transform="rotate(-90 15 {})" text-anchor="middle">greedy return ({y_lo:.1} to {y_hi:.1})</text>"#,
        h / 2.0,
        h / 2.0
    );
    let _ = writeln!(s, r#"<text x="{pad}" y="30" font-size="14">mean over {} run(s), band = min/max</text>"#, curves.len());
    s.push_str("</svg>\n");
    s
}

/// Points of a path up to where it first leaves `[0, screen]^2`; the exit
/// segment is cut at the boundary so the polyline stays inside the frame.
pub fn clip_to_frame(points: &[Vec2], screen: f64) -> Vec<Vec2> {
    let inside = |p: Vec2| (0.0..=screen).contains(&p.x) && (0.0..=screen).contains(&p.y);
    let mut out = Vec::new();
    for (k, &p) in points.iter().enumerate() {
        if inside(p) {
            out.push(p);
            continue;
        }
        if let Some(&prev) = k.checked_sub(1).and_then(|j| points.get(j)).filter(|q| inside(**q)) {
            // largest t in [0, 1] keeping prev + t (p - prev) inside
            let d = p - prev;
            let mut t: f64 = 1.0;
            for (from, delta) in [(prev.x, d.x), (prev.y, d.y)] {
                if delta > 0.0 {
                    t = t.min((screen - from) / delta);
                } else if delta < 0.0 {
                    t = t.min(-from / delta);
                }
            }
            out.push(prev + d * t.clamp(0.0, 1.0));
        }
        break;
    }
    out
}

fn group_paths(rows: &[TraceRow]) -> BTreeMap<Entity, Vec<Vec2>> {
    let mut paths: BTreeMap<Entity, Vec<(usize, Vec2)>> = BTreeMap::new();
    for r in rows {
        paths.entry(r.entity).or_default().push((r.step, Vec2::new(r.x, r.y)));
    }
    paths
        .into_iter()
        .map(|(e, mut pts)| {
            pts.sort_by_key(|(s, _)| *s);
            (e, pts.into_iter().map(|(_, p)| p).collect())
        })
        .collect()
}

/// UAV paths as polylines, obstacles as square markers, and safeguard
/// circles (`d_v2v` around UAVs, `d_obs` around obstacles) at the last step
/// shown.
pub fn trajectory_svg(rows: &[TraceRow], env: &EnvConfig) -> String {
    let scale = 2.0;
    let pad = 20.0;
    let size = env.screen * scale + 2.0 * pad;
    let px = |p: Vec2| (pad + p.x * scale, pad + (env.screen - p.y) * scale);
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" viewBox="0 0 {size} {size}">"#);
    let _ = writeln!(s, r#"<rect width="{size}" height="{size}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<rect id="frame" x="{pad}" y="{pad}" width="{0}" height="{0}" fill="none" stroke="black"/>"#,
        env.screen * scale
    );
    for (entity, pts) in group_paths(rows) {
        let clipped = clip_to_frame(&pts, env.screen);
        let Some(&last) = clipped.last() else { continue };
        let (lx, ly) = px(last);
        match entity {
            Entity::Uav(i) => {
                let colour = PALETTE[i % PALETTE.len()];
                let coords: Vec<String> = clipped.iter().map(|&p| px(p)).map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
                let _ = writeln!(
                    s,
                    r#"<polyline class="uav-path" data-agent="{i}" points="{}" fill="none" stroke="{colour}" stroke-width="1.5"/>"#,
                    coords.join(" ")
                );
                let _ = writeln!(
                    s,
                    r#"<circle class="safeguard-v2v" cx="{lx:.2}" cy="{ly:.2}" r="{:.2}" fill="none" stroke="{colour}" stroke-dasharray="3 2"/>"#,
                    env.d_v2v * scale
                );
            }
            Entity::Obstacle(k) => {
                for &p in clipped.iter().step_by(5) {
                    let (x, y) = px(p);
                    let _ = writeln!(s, r#"<rect class="obstacle-marker" data-obstacle="{k}" x="{:.2}" y="{:.2}" width="4" height="4" fill="black"/>"#, x - 2.0, y - 2.0);
                }
                let _ = writeln!(
                    s,
                    r#"<circle class="safeguard-obs" cx="{lx:.2}" cy="{ly:.2}" r="{:.2}" fill="none" stroke="black" stroke-dasharray="4 3"/>"#,
                    env.d_obs * scale
                );
            }
        }
    }
    s.push_str("</svg>\n");
    s
}

/// Fixed-width table of evaluation metrics.
pub fn summary_table(entries: &[(String, Metrics)]) -> String {
    let mut s = format!(
        "{:<40} {:>8} {:>12} {:>12} {:>12} {:>14} {:>10}\n",
        "run", "episodes", "failure", "min_uav_uav", "min_uav_obs", "energy", "eas_rate"
    );
    for (name, m) in entries {
        let _ = writeln!(
            s,
            "{:<40} {:>8} {:>12.4} {:>12.3} {:>12.3} {:>14.1} {:>10.4}",
            name, m.episodes, m.failure_rate, m.min_uav_uav, m.min_uav_obs, m.energy_surrogate, m.eas_intervention_rate
        );
    }
    s
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RenderReport {
    pub written: Vec<PathBuf>,
    pub notices: Vec<String>,
}

fn collect_files(dir: &Path, depth: usize, out: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)?.map(|e| e.map(|e| e.path())).collect::<std::io::Result<_>>()?;
    entries.sort();
    for p in entries {
        if p.is_dir() {
            if depth > 0 && p.file_name().is_some_and(|n| n != "plots") {
                collect_files(&p, depth - 1, out)?;
            }
        } else {
            out.push(p);
        }
    }
    Ok(())
}

fn is_episode_csv(p: &Path) -> bool {
    p.extension().is_some_and(|e| e == "csv") && p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with("episode_"))
}

/// Renders everything found under `run_dir` into `run_dir/plots`:
/// `learning_curve.svg` from every `curve.csv`, one `trajectory_*.svg` per
/// `episode_*.csv`, and `summary.txt` from every `metrics.csv`.
pub fn render_outputs(run_dir: &Path) -> Result<RenderReport> {
    let mut files = Vec::new();
    collect_files(run_dir, 3, &mut files)?;
    let out_dir = run_dir.join("plots");
    fs::create_dir_all(&out_dir)?;
    let mut report = RenderReport::default();
    let rel = |p: &Path| p.strip_prefix(run_dir).unwrap_or(p).display().to_string();

    let curves = files
        .iter()
        .filter(|p| p.file_name().is_some_and(|n| n == CURVE_FILE))
        .map(|p| read_curve(p))
        .collect::<Result<Vec<_>>>()?;
    if curves.is_empty() {
        report.notices.push("no curve.csv found; learning-curve plot skipped".into());
    } else {
        let path = out_dir.join("learning_curve.svg");
        fs::write(&path, learning_curve_svg(&curves))?;
        report.written.push(path);
    }

    let env = EnvConfig::default();
    let episodes: Vec<&PathBuf> = files.iter().filter(|p| is_episode_csv(p)).collect();
    if episodes.is_empty() {
        report.notices.push("no episode traces found; trajectory plot skipped".into());
    }
    for p in episodes {
        let rows = read_trace(p)?;
        let name = rel(p).replace(['/', '\\'], "_").trim_end_matches(".csv").to_string();
        let path = out_dir.join(format!("trajectory_{name}.svg"));
        fs::write(&path, trajectory_svg(&rows, &env))?;
        report.written.push(path);
    }

    let metrics = files
        .iter()
        .filter(|p| p.file_name().is_some_and(|n| n == METRICS_FILE))
        .map(|p| Ok((rel(p.parent().unwrap_or(p)), read_metrics(p)?)))
        .collect::<Result<Vec<_>>>()?;
    let mut summary = if metrics.is_empty() {
        "no metrics.csv found\n".to_string()
    } else {
        summary_table(&metrics)
    };
    for n in &report.notices {
        let _ = writeln!(summary, "note: {n}");
    }
    let path = out_dir.join("summary.txt");
    fs::write(&path, summary)?;
    report.written.push(path);
    Ok(report)
}
