//! Greedy evaluation, the energy surrogate and decision timing.

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::eas::{emergency_select, EasConfig};
use crate::env::{observe, EnvConfig, Scenario, WorldState};
use crate::error::{MacaError, Result};
use crate::policy::{ActorSet, GaussianPolicy};
use crate::seed::{self, stream};
use crate::trace::{self, EPISODE_COLUMNS, METRICS_COLUMNS};
use crate::trainer::{load_actors, run_spawned_episode, EpisodeRecord, Outcome, RolloutOptions};

/// Power model for the energy surrogate. Only relative comparisons between
/// runs scored with the same model are meaningful.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnergyModel {
    /// Cruise power, W.
    pub base_power: f64,
    /// Extra power per unit of |action|, W.
    pub turn_coeff: f64,
    /// Radio power, W; 0 for schemes that need no communication.
    pub comm_power: f64,
    /// UAV mass, kg. Reported for reference; the surrogate does not use it.
    pub mass: f64,
}

impl Default for EnergyModel {
    fn default() -> Self {
        Self {
            base_power: 150.0,
            turn_coeff: 30.0,
            comm_power: 0.0,
            mass: 1.0,
        }
    }
}

impl EnergyModel {
    pub fn validate(&self) -> Result<()> {
        let fields = [self.base_power, self.turn_coeff, self.comm_power, self.mass];
        if fields.iter().all(|v| v.is_finite() && *v >= 0.0) {
            Ok(())
        } else {
            Err(MacaError::InvalidConfig(format!("energy model terms must be >= 0: {self:?}")))
        }
    }
}

/// `sum over steps and UAVs of (base + turn * |a| + comm) * dt`.
pub fn energy_estimate(episode: &EpisodeRecord, model: &EnergyModel, dt: f64) -> Result<f64> {
    model.validate()?;
    if episode.transitions.is_empty() {
        return Err(MacaError::InvalidConfig("energy of an empty episode".into()));
    }
    Ok(episode
        .transitions
        .iter()
        .flat_map(|t| &t.joint_act)
        .map(|a| (model.base_power + model.turn_coeff * a.abs() + model.comm_power) * dt)
        .sum())
}

/// Per-episode evaluation row.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeMetrics {
    pub episode: usize,
    pub seed: u64,
    pub outcome: Outcome,
    pub length: usize,
    pub total_return: f64,
    pub min_uav_uav: f64,
    pub min_uav_obs: f64,
    pub energy: f64,
    pub eas_decisions: usize,
    pub eas_interventions: usize,
}

impl EpisodeMetrics {
    pub fn eas_intervention_rate(&self) -> f64 {
        if self.eas_decisions == 0 {
            0.0
        } else {
            self.eas_interventions as f64 / self.eas_decisions as f64
        }
    }
}

/// Aggregate over episodes; every field is the mean of the per-episode rows.
#[derive(Clone, Debug, PartialEq)]
pub struct Metrics {
    pub episodes: usize,
    pub failure_rate: f64,
    pub min_uav_uav: f64,
    pub min_uav_obs: f64,
    pub energy_surrogate: f64,
    /// Median per-agent decision time in microseconds; wall-clock, so it is
    /// never written to the deterministic CSVs.
    pub mean_step_response: Option<f64>,
    pub eas_intervention_rate: f64,
}

impl Metrics {
    pub fn from_episodes(rows: &[EpisodeMetrics]) -> Self {
        let n = rows.len().max(1) as f64;
        let mean = |f: &dyn Fn(&EpisodeMetrics) -> f64| rows.iter().map(f).sum::<f64>() / n;
        Self {
            episodes: rows.len(),
            failure_rate: mean(&|r| f64::from(u8::from(r.outcome == Outcome::Collision))),
            min_uav_uav: mean(&|r| r.min_uav_uav),
            min_uav_obs: mean(&|r| r.min_uav_obs),
            energy_surrogate: mean(&|r| r.energy),
            mean_step_response: None,
            eas_intervention_rate: mean(&|r| r.eas_intervention_rate()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalConfig {
    pub episodes: usize,
    pub seed: u64,
    /// Emergency avoidance at execution; `None` disables it.
    pub eas: Option<EasConfig>,
    pub energy: EnergyModel,
}

impl EvalConfig {
    pub fn new(episodes: usize, seed: u64, eas_on: bool) -> Self {
        Self {
            episodes,
            seed,
            eas: eas_on.then(EasConfig::default),
            energy: EnergyModel::default(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct EvalReport {
    pub metrics: Metrics,
    pub episodes: Vec<EpisodeMetrics>,
    pub records: Vec<EpisodeRecord>,
}

/// Greedy rollouts on the evaluation spawns of `cfg.seed`.
pub fn evaluate(actors: &ActorSet, env: &EnvConfig, cfg: &EvalConfig) -> Result<EvalReport> {
    if cfg.episodes == 0 {
        return Err(MacaError::InvalidConfig("evaluation needs at least one episode".into()));
    }
    let opts = RolloutOptions {
        explore: false,
        epsilon: 0.0,
        eas: cfg.eas.as_ref(),
    };
    let mut rows = Vec::with_capacity(cfg.episodes);
    let mut records = Vec::with_capacity(cfg.episodes);
    for k in 0..cfg.episodes {
        let spawn = seed::derive(cfg.seed, stream::EVAL_SPAWN, k as u64);
        let mut rng = seed::rng_for(cfg.seed, stream::EAS, k as u64);
        let ep = run_spawned_episode(env, spawn, actors, &opts, &mut rng)?;
        rows.push(EpisodeMetrics {
            episode: k,
            seed: spawn,
            outcome: ep.outcome,
            length: ep.length,
            total_return: ep.total_return,
            min_uav_uav: ep.min_uav_uav,
            min_uav_obs: ep.min_uav_obs,
            energy: energy_estimate(&ep, &cfg.energy, env.dt)?,
            eas_decisions: ep.eas.decisions,
            eas_interventions: ep.eas.interventions,
        });
        records.push(ep);
    }
    Ok(EvalReport {
        metrics: Metrics::from_episodes(&rows),
        episodes: rows,
        records,
    })
}

/// Loads a checkpoint directory and evaluates it on `scenario`.
pub fn evaluate_checkpoint(dir: &Path, scenario: Scenario, cfg: &EvalConfig) -> Result<EvalReport> {
    let env = scenario.config();
    let (actors, meta) = load_actors(dir, &env)?;
    if meta.scenario != scenario {
        log::warn!("checkpoint trained on {}, evaluating on {scenario}", meta.scenario);
    }
    evaluate(&actors, &env, cfg)
}

pub const EPISODES_FILE: &str = "episodes.csv";
pub const METRICS_FILE: &str = "metrics.csv";

/// Writes `episodes.csv` and `metrics.csv` into `dir`.
pub fn write_eval_csvs(dir: &Path, report: &EvalReport) -> Result<()> {
    let rows: Vec<Vec<String>> = report
        .episodes
        .iter()
        .map(|r| {
            vec![
                r.episode.to_string(),
                r.seed.to_string(),
                r.outcome.name().to_string(),
                r.length.to_string(),
                r.total_return.to_string(),
                r.min_uav_uav.to_string(),
                r.min_uav_obs.to_string(),
                r.energy.to_string(),
                r.eas_decisions.to_string(),
                r.eas_interventions.to_string(),
                r.eas_intervention_rate().to_string(),
            ]
        })
        .collect();
    trace::write_csv(&dir.join(EPISODES_FILE), "episodes", &EPISODE_COLUMNS, &rows)?;
    let m = &report.metrics;
    let row = vec![
        m.episodes.to_string(),
        m.failure_rate.to_string(),
        m.min_uav_uav.to_string(),
        m.min_uav_obs.to_string(),
        m.energy_surrogate.to_string(),
        m.eas_intervention_rate.to_string(),
    ];
    trace::write_csv(&dir.join(METRICS_FILE), "metrics", &METRICS_COLUMNS, &[row])
}

/// Reads back a `metrics.csv`.
pub fn read_metrics(path: &Path) -> Result<Metrics> {
    let recs = trace::read_csv(path, "metrics", &METRICS_COLUMNS)?;
    let rec = recs.first().ok_or_else(|| MacaError::Csv {
        path: path.to_path_buf(),
        line: 3,
        msg: "no metrics row".into(),
    })?;
    Ok(Metrics {
        episodes: trace::field(path, rec, 0)?,
        failure_rate: trace::field(path, rec, 1)?,
        min_uav_uav: trace::field(path, rec, 2)?,
        min_uav_obs: trace::field(path, rec, 3)?,
        energy_surrogate: trace::field(path, rec, 4)?,
        mean_step_response: None,
        eas_intervention_rate: trace::field(path, rec, 5)?,
    })
}

/// One agent's view of a world, used as the timing workload.
#[derive(Clone, Debug)]
pub struct DecisionSample<'a> {
    pub world: &'a WorldState,
    pub env: &'a EnvConfig,
    pub agent: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ResponseTiming {
    pub median_us: f64,
    pub iterations: usize,
}

/// Median wall-clock time of one decentralized decision: observe, actor
/// forward pass and, if given, the EAS check.
pub fn measure_response_time(
    policy: &GaussianPolicy,
    sample: &DecisionSample,
    eas: Option<&EasConfig>,
    iterations: usize,
) -> Result<ResponseTiming> {
    if iterations < 100 {
        return Err(MacaError::InvalidConfig(format!("iterations {iterations} < 100")));
    }
    let mut rng = seed::rng_for(0, stream::EAS, 0);
    let mut decide = || -> Result<f64> {
        let obs = observe(sample.world, sample.env, sample.agent)?.features(sample.env);
        let a = policy.mean(&obs)?;
        Ok(match eas {
            Some(e) => emergency_select(sample.world, sample.env, sample.agent, a, e, &mut rng).action,
            None => a,
        })
    };
    for _ in 0..iterations.min(200) / 2 {
        std::hint::black_box(decide()?);
    }
    let mut times = Vec::with_capacity(iterations);
    for _ in 0..iterations {
        let t = Instant::now();
        std::hint::black_box(decide()?);
        times.push(t.elapsed().as_secs_f64() * 1e6);
    }
    times.sort_by(f64::total_cmp);
    let mid = times.len() / 2;
    let median_us = if times.len() % 2 == 0 {
        0.5 * (times[mid - 1] + times[mid])
    } else {
        times[mid]
    };
    Ok(ResponseTiming { median_us, iterations })
}
