//! Emergency avoidance at execution time.
//!
//! Before a UAV executes its policy action it predicts, one control period
//! ahead, its distance to every sensed obstacle and neighbor. Obstacles keep
//! their velocity and neighbors are assumed to fly straight, since no
//! communication is available. If the prediction violates a safeguard
//! distance, Gaussian candidates around the policy action are screened and
//! the nearest feasible one is executed instead.
//!
//! Feasibility uses `<=` against the safeguard distances while the
//! environment's collision test uses `<`, so the filter is the stricter of
//! the two.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::env::{wrap_angle, yaw_from_action, EnvConfig, Vec2, WorldState};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EasConfig {
    pub enabled: bool,
    pub sigma_exe: f64,
    pub candidates: usize,
    pub dedup_resolution: f64,
}

impl Default for EasConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            sigma_exe: 1.0,
            candidates: 32,
            dedup_resolution: 1e-6,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FeasibilityReport {
    pub d_obs_pred: f64,
    pub d_v2v_pred: f64,
    pub feasible: bool,
}

impl FeasibilityReport {
    /// Smallest margin over the two safeguard distances; positive iff feasible.
    pub fn margin(&self, cfg: &EnvConfig) -> f64 {
        (self.d_obs_pred - cfg.d_obs).min(self.d_v2v_pred - cfg.d_v2v)
    }
}

/// One-step lookahead distances for UAV `i` taking action `a`.
///
/// Only entities currently within the sensing radius are considered; with
/// none in range the corresponding distance is `+inf`.
pub fn predict_distances(world: &WorldState, cfg: &EnvConfig, i: usize, a: f64) -> FeasibilityReport {
    let me = &world.uavs[i];
    let heading = wrap_angle(me.heading + yaw_from_action(a, cfg));
    let my_next = me.position + Vec2::from_polar(me.speed, heading) * cfg.dt;
    let sensed = |p: Vec2| me.position.distance(p) <= cfg.sense_radius;

    let d_obs_pred = world
        .obstacles
        .iter()
        .filter(|o| sensed(o.position))
        .map(|o| my_next.distance(o.position + o.velocity * cfg.dt))
        .fold(f64::INFINITY, f64::min);
    let d_v2v_pred = world
        .uavs
        .iter()
        .enumerate()
        .filter(|(j, u)| *j != i && sensed(u.position))
        .map(|(_, u)| my_next.distance(u.position + u.velocity() * cfg.dt))
        .fold(f64::INFINITY, f64::min);
    FeasibilityReport {
        d_obs_pred,
        d_v2v_pred,
        feasible: d_obs_pred > cfg.d_obs && d_v2v_pred > cfg.d_v2v,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EasDecision {
    pub action: f64,
    /// The policy action was replaced.
    pub intervened: bool,
    /// No candidate was feasible; the least-bad one was returned.
    pub fallback: bool,
    pub candidates_drawn: usize,
}

/// Unique candidates from `N(a_policy, sigma_exe)`, clamped to `[-1, 1]`.
/// Values closer than `dedup_resolution` count as duplicates.
pub fn draw_candidates<R: Rng + ?Sized>(a_policy: f64, eas: &EasConfig, rng: &mut R) -> Vec<f64> {
    let noise = Normal::new(0.0, eas.sigma_exe.max(0.0)).expect("finite sigma");
    let mut keys = std::collections::BTreeSet::new();
    let mut out = Vec::with_capacity(eas.candidates);
    // bounded retries: clamping can collapse many draws onto +-1
    for _ in 0..eas.candidates * 4 {
        if out.len() == eas.candidates {
            break;
        }
        let c = (a_policy + noise.sample(rng)).clamp(-1.0, 1.0);
        let key = (c / eas.dedup_resolution).round() as i64;
        if keys.insert(key) {
            out.push(c);
        }
    }
    out
}

/// Nearest feasible candidate to `a_policy`, or the candidate with the
/// largest safeguard margin if none is feasible.
pub fn select_from_candidates(
    world: &WorldState,
    cfg: &EnvConfig,
    i: usize,
    a_policy: f64,
    candidates: &[f64],
) -> EasDecision {
    let reports: Vec<(f64, FeasibilityReport)> = candidates
        .iter()
        .map(|&c| (c, predict_distances(world, cfg, i, c)))
        .collect();
    let nearest = reports
        .iter()
        .filter(|(_, r)| r.feasible)
        .min_by(|a, b| (a.0 - a_policy).abs().total_cmp(&(b.0 - a_policy).abs()).then(a.0.total_cmp(&b.0)));
    if let Some(&(c, _)) = nearest {
        return EasDecision {
            action: c,
            intervened: true,
            fallback: false,
            candidates_drawn: candidates.len(),
        };
    }
    let least_bad = reports
        .iter()
        .max_by(|a, b| a.1.margin(cfg).total_cmp(&b.1.margin(cfg)))
        .map(|&(c, _)| c)
        .unwrap_or(a_policy);
    EasDecision {
        action: least_bad,
        intervened: true,
        fallback: true,
        candidates_drawn: candidates.len(),
    }
}

/// Passes feasible policy actions through untouched; otherwise screens
/// Gaussian candidates.
pub fn emergency_select<R: Rng + ?Sized>(
    world: &WorldState,
    cfg: &EnvConfig,
    i: usize,
    a_policy: f64,
    eas: &EasConfig,
    rng: &mut R,
) -> EasDecision {
    let a_policy = a_policy.clamp(-1.0, 1.0);
    if predict_distances(world, cfg, i, a_policy).feasible {
        return EasDecision {
            action: a_policy,
            intervened: false,
            fallback: false,
            candidates_drawn: 0,
        };
    }
    let candidates = draw_candidates(a_policy, eas, rng);
    select_from_candidates(world, cfg, i, a_policy, &candidates)
}
