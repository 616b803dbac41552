//! Versioned CSV files.
//!
//! Every CSV starts with a comment row `# maca-<kind> format-version=<n>`,
//! followed by a header row and the data rows. Schemas:
//!
//! | kind      | columns |
//! |-----------|---------|
//! | `trace`   | step, agent_id, x, y, heading, action, reward, done |
//! | `curve`   | env_step, episodes, mean_return, critic_loss, actor_loss_mean, epsilon |
//! | `episodes`| episode, seed, outcome, length, return, min_uav_uav, min_uav_obs, energy, eas_decisions, eas_interventions, eas_intervention_rate |
//! | `metrics` | episodes, failure_rate, min_uav_uav, min_uav_obs, energy_surrogate, eas_intervention_rate |
//!
//! In traces, UAV rows carry the numeric agent id; obstacle rows use
//! `obs<k>` with action and reward 0. Step 0 is the spawn state.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{MacaError, Result};

pub const FORMAT_VERSION: u32 = 1;

pub const TRACE_COLUMNS: [&str; 8] = ["step", "agent_id", "x", "y", "heading", "action", "reward", "done"];
pub const CURVE_COLUMNS: [&str; 6] = ["env_step", "episodes", "mean_return", "critic_loss", "actor_loss_mean", "epsilon"];
pub const EPISODE_COLUMNS: [&str; 11] = [
    "episode",
    "seed",
    "outcome",
    "length",
    "return",
    "min_uav_uav",
    "min_uav_obs",
    "energy",
    "eas_decisions",
    "eas_interventions",
    "eas_intervention_rate",
];
pub const METRICS_COLUMNS: [&str; 6] = [
    "episodes",
    "failure_rate",
    "min_uav_uav",
    "min_uav_obs",
    "energy_surrogate",
    "eas_intervention_rate",
];

fn version_line(kind: &str) -> String {
    format!("# maca-{kind} format-version={FORMAT_VERSION}")
}

/// Writes a versioned CSV; fields are written with `Display`, so output is
/// byte-stable for identical values.
pub fn write_csv(path: &Path, kind: &str, columns: &[&str], rows: &[Vec<String>]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut buf = Vec::new();
    writeln!(buf, "{}", version_line(kind))?;
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        let csv_err = |e: csv::Error| MacaError::Io(std::io::Error::other(e));
        w.write_record(columns).map_err(csv_err)?;
        for r in rows {
            w.write_record(r).map_err(csv_err)?;
        }
        w.flush()?;
    }
    fs::write(path, buf)?;
    Ok(())
}

/// Reads a versioned CSV of the given kind and checks its header.
/// Errors carry the file path and 1-based line number.
pub fn read_csv(path: &Path, kind: &str, columns: &[&str]) -> Result<Vec<csv::StringRecord>> {
    let text = fs::read_to_string(path)?;
    let err = |line: u64, msg: String| MacaError::Csv {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let (first, rest) = text.split_once('\n').unwrap_or((text.as_str(), ""));
    if first.trim_end() != version_line(kind) {
        return Err(err(1, format!("expected {:?}, found {:?}", version_line(kind), first.trim_end())));
    }
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(rest.as_bytes());
    let header = reader.headers().map_err(|e| err(2, e.to_string()))?.clone();
    if header.iter().ne(columns.iter().copied()) {
        return Err(err(2, format!("expected columns {columns:?}, found {:?}", header.iter().collect::<Vec<_>>())));
    }
    let mut out = Vec::new();
    for rec in reader.records() {
        match rec {
            Ok(r) => out.push(r),
            Err(e) => {
                let line = e.position().map(|p| p.line() + 1).unwrap_or(0);
                return Err(err(line, e.to_string()));
            }
        }
    }
    Ok(out)
}

/// Parses field `col` of `rec` as `T`, reporting the line on failure.
pub fn field<T: std::str::FromStr>(path: &Path, rec: &csv::StringRecord, col: usize) -> Result<T> {
    let line = rec.position().map(|p| p.line() + 1).unwrap_or(0);
    let raw = rec.get(col).ok_or_else(|| MacaError::Csv {
        path: path.to_path_buf(),
        line,
        msg: format!("missing column {col}"),
    })?;
    raw.parse().map_err(|_| MacaError::Csv {
        path: path.to_path_buf(),
        line,
        msg: format!("cannot parse {raw:?} in column {col}"),
    })
}

/// One row of a trajectory trace.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceRow {
    pub step: usize,
    pub entity: Entity,
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub action: f64,
    pub reward: f64,
    pub done: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Entity {
    Uav(usize),
    Obstacle(usize),
}

impl Entity {
    fn label(self) -> String {
        match self {
            Entity::Uav(i) => i.to_string(),
            Entity::Obstacle(k) => format!("obs{k}"),
        }
    }

    fn parse(s: &str) -> Option<Entity> {
        match s.strip_prefix("obs") {
            Some(k) => k.parse().ok().map(Entity::Obstacle),
            None => s.parse().ok().map(Entity::Uav),
        }
    }
}

pub fn write_trace(path: &Path, rows: &[TraceRow]) -> Result<()> {
    let rows: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.step.to_string(),
                r.entity.label(),
                r.x.to_string(),
                r.y.to_string(),
                r.heading.to_string(),
                r.action.to_string(),
                r.reward.to_string(),
                u8::from(r.done).to_string(),
            ]
        })
        .collect();
    write_csv(path, "trace", &TRACE_COLUMNS, &rows)
}

pub fn read_trace(path: &Path) -> Result<Vec<TraceRow>> {
    read_csv(path, "trace", &TRACE_COLUMNS)?
        .iter()
        .map(|rec| {
            let label: String = field(path, rec, 1)?;
            let entity = Entity::parse(&label).ok_or_else(|| MacaError::Csv {
                path: path.to_path_buf(),
                line: rec.position().map(|p| p.line() + 1).unwrap_or(0),
                msg: format!("bad agent_id {label:?}"),
            })?;
            Ok(TraceRow {
                step: field(path, rec, 0)?,
                entity,
                x: field(path, rec, 2)?,
                y: field(path, rec, 3)?,
                heading: field(path, rec, 4)?,
                action: field(path, rec, 5)?,
                reward: field(path, rec, 6)?,
                done: field::<u8>(path, rec, 7)? != 0,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CurveRow {
    pub env_step: usize,
    pub episodes: usize,
    pub mean_return: f64,
    pub critic_loss: f64,
    pub actor_loss_mean: f64,
    pub epsilon: f64,
}

pub fn write_curve(path: &Path, rows: &[CurveRow]) -> Result<()> {
    let rows: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.env_step.to_string(),
                r.episodes.to_string(),
                r.mean_return.to_string(),
                r.critic_loss.to_string(),
                r.actor_loss_mean.to_string(),
                r.epsilon.to_string(),
            ]
        })
        .collect();
    write_csv(path, "curve", &CURVE_COLUMNS, &rows)
}

pub fn read_curve(path: &Path) -> Result<Vec<CurveRow>> {
    read_csv(path, "curve", &CURVE_COLUMNS)?
        .iter()
        .map(|rec| {
            Ok(CurveRow {
                env_step: field(path, rec, 0)?,
                episodes: field(path, rec, 1)?,
                mean_return: field(path, rec, 2)?,
                critic_loss: field(path, rec, 3)?,
                actor_loss_mean: field(path, rec, 4)?,
                epsilon: field(path, rec, 5)?,
            })
        })
        .collect()
}
