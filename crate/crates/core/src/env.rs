//! Deterministic 2D kinematic swarm simulator.
//!
//! UAVs fly at constant speed and are steered only by yaw changes. Obstacles
//! are moving points that fly straight lines toward the swarm. Every UAV
//! carries a pre-planned "ghost" that keeps flying the original horizontal
//! path, and the shared reward pulls each UAV back toward it.
//!
//! Coordinates are meters with the origin in the bottom-left screen corner.

use std::f64::consts::PI;
use std::fmt;
use std::ops::{Add, AddAssign, Mul, Sub};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{MacaError, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn from_polar(length: f64, angle: f64) -> Self {
        Self::new(length * angle.cos(), length * angle.sin())
    }

    pub fn dot(self, other: Vec2) -> f64 {
        self.x * other.x + self.y * other.y
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn distance(self, other: Vec2) -> f64 {
        (self - other).norm()
    }

    /// Unit vector, or `None` for a zero or non-finite vector.
    pub fn normalized(self) -> Option<Vec2> {
        let n = self.norm();
        (n > 0.0 && n.is_finite()).then(|| self * (1.0 / n))
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl AddAssign for Vec2 {
    fn add_assign(&mut self, rhs: Vec2) {
        self.x += rhs.x;
        self.y += rhs.y;
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, rhs: f64) -> Vec2 {
        Vec2::new(self.x * rhs, self.y * rhs)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UavState {
    pub position: Vec2,
    /// Radians in `[-pi, pi)`.
    pub heading: f64,
    pub speed: f64,
    pub preplanned_position: Vec2,
    pub preplanned_velocity: Vec2,
}

impl UavState {
    pub fn velocity(&self) -> Vec2 {
        Vec2::from_polar(self.speed, self.heading)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObstacleState {
    pub position: Vec2,
    pub velocity: Vec2,
}

/// Ground-truth state of one episode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub uavs: Vec<UavState>,
    pub obstacles: Vec<ObstacleState>,
    pub step_index: usize,
    pub elapsed: f64,
}

/// Named scenario presets: `<N>U<M>O`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scenario {
    #[serde(rename = "2U1O")]
    TwoUavOneObstacle,
    #[serde(rename = "3U1O")]
    ThreeUavOneObstacle,
    #[serde(rename = "4U2O")]
    FourUavTwoObstacles,
}

impl Scenario {
    pub const ALL: [Scenario; 3] = [
        Scenario::TwoUavOneObstacle,
        Scenario::ThreeUavOneObstacle,
        Scenario::FourUavTwoObstacles,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::TwoUavOneObstacle => "2U1O",
            Scenario::ThreeUavOneObstacle => "3U1O",
            Scenario::FourUavTwoObstacles => "4U2O",
        }
    }

    pub fn config(self) -> EnvConfig {
        let (n_uavs, n_obstacles, spawn_radius) = match self {
            Scenario::TwoUavOneObstacle => (2, 1, 30.0),
            Scenario::ThreeUavOneObstacle => (3, 1, 30.0),
            Scenario::FourUavTwoObstacles => (4, 2, 50.0),
        };
        EnvConfig {
            n_uavs,
            n_obstacles,
            spawn_radius,
            ..EnvConfig::default()
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scenario {
    type Err = MacaError;

    fn from_str(s: &str) -> Result<Self> {
        Scenario::ALL
            .into_iter()
            .find(|sc| sc.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| {
                MacaError::InvalidConfig(format!("unknown scenario {s:?}; expected 2U1O, 3U1O or 4U2O"))
            })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvConfig {
    pub n_uavs: usize,
    pub n_obstacles: usize,
    /// Side of the square screen (m).
    pub screen: f64,
    pub sense_radius: f64,
    pub spawn_radius: f64,
    /// Center of the spawn circle (m).
    pub spawn_center: Vec2,
    pub speed: f64,
    pub d_obs: f64,
    pub d_v2v: f64,
    pub d_max: f64,
    pub collision_penalty: f64,
    /// Control-loop period (s).
    pub dt: f64,
    /// Yaw change for `|a| = 1`, in degrees.
    pub max_yaw_deg: f64,
    /// Half-width of the random offset of an obstacle's spawn point along its edge (m).
    pub obstacle_spawn_jitter: f64,
    /// Half-width of the random lateral offset of an obstacle's aim point (m).
    pub obstacle_aim_jitter: f64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    pub epsilon_steps: usize,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            n_uavs: 3,
            n_obstacles: 1,
            screen: 300.0,
            sense_radius: 50.0,
            spawn_radius: 30.0,
            spawn_center: Vec2::new(60.0, 150.0),
            speed: 5.0,
            d_obs: 20.0,
            d_v2v: 5.0,
            d_max: 150.0,
            collision_penalty: 0.0,
            dt: 1.0,
            max_yaw_deg: 45.0,
            obstacle_spawn_jitter: 45.0,
            obstacle_aim_jitter: 15.0,
            epsilon_start: 1.0,
            epsilon_end: 0.1,
            epsilon_steps: 50_000,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(MacaError::InvalidConfig(msg));
        if self.n_uavs < 2 {
            return bad(format!("need at least 2 UAVs, got {}", self.n_uavs));
        }
        let positive = [
            ("screen", self.screen),
            ("sense_radius", self.sense_radius),
            ("spawn_radius", self.spawn_radius),
            ("speed", self.speed),
            ("d_max", self.d_max),
            ("dt", self.dt),
            ("max_yaw_deg", self.max_yaw_deg),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("{name} must be finite and > 0, got {v}"));
            }
        }
        if !(self.d_obs >= 0.0 && self.d_v2v >= 0.0) {
            return bad("safeguard distances must be >= 0".into());
        }
        if self.sense_radius <= self.d_obs {
            return bad(format!(
                "sense_radius {} must exceed d_obs {}",
                self.sense_radius, self.d_obs
            ));
        }
        let chord = 2.0 * self.spawn_radius * (PI / self.n_uavs as f64).sin();
        if chord <= self.d_v2v {
            return bad(format!(
                "spawn_radius {} puts {} UAVs {chord:.3} m apart, not more than d_v2v {}",
                self.spawn_radius, self.n_uavs, self.d_v2v
            ));
        }
        if !(0.0..=1.0).contains(&self.epsilon_start) || !(0.0..=1.0).contains(&self.epsilon_end) {
            return bad("epsilon bounds must lie in [0, 1]".into());
        }
        if !(self.collision_penalty.is_finite()
            && self.obstacle_spawn_jitter >= 0.0
            && self.obstacle_aim_jitter >= 0.0)
        {
            return bad("collision_penalty and jitters must be finite, jitters >= 0".into());
        }
        Ok(())
    }

    pub fn max_yaw_rad(&self) -> f64 {
        self.max_yaw_deg.to_radians()
    }

    /// Per-agent observation width for this configuration.
    pub fn obs_width(&self) -> usize {
        Observation::width(self.n_uavs, self.n_obstacles)
    }

    /// Step bound within which straight-flying obstacles leave the screen.
    pub fn max_steps(&self) -> usize {
        let diagonal = self.screen * std::f64::consts::SQRT_2;
        ((diagonal + 2.0 * self.sense_radius) / (self.speed * self.dt)).ceil() as usize
    }
}

/// One sensed entity as seen from an observing UAV.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Slot {
    /// Position relative to the observer (m).
    pub rel_position: Vec2,
    pub velocity: Vec2,
    pub present: bool,
}

/// Fixed-width local view of one agent.
#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    pub position: Vec2,
    pub velocity: Vec2,
    pub preplanned_velocity: Vec2,
    pub neighbors: Vec<Slot>,
    pub obstacles: Vec<Slot>,
}

pub const SELF_BLOCK_WIDTH: usize = 6;
pub const SLOT_WIDTH: usize = 5;

impl Observation {
    pub fn width(n_uavs: usize, n_obstacles: usize) -> usize {
        SELF_BLOCK_WIDTH + SLOT_WIDTH * (n_uavs.saturating_sub(1) + n_obstacles)
    }

    /// Network input vector. Positions are scaled by the screen size,
    /// relative positions by the sensing radius and velocities by the
    /// cruise speed. An absent slot is all zeros, presence flag included.
    pub fn features(&self, cfg: &EnvConfig) -> Vec<f64> {
        let mut out = Vec::with_capacity(Observation::width(
            self.neighbors.len() + 1,
            self.obstacles.len(),
        ));
        self.write_features(cfg, &mut out);
        out
    }

    pub fn write_features(&self, cfg: &EnvConfig, out: &mut Vec<f64>) {
        let inv_speed = 1.0 / cfg.speed;
        out.extend_from_slice(&[
            self.position.x / cfg.screen,
            self.position.y / cfg.screen,
            self.velocity.x * inv_speed,
            self.velocity.y * inv_speed,
            self.preplanned_velocity.x * inv_speed,
            self.preplanned_velocity.y * inv_speed,
        ]);
        for slot in self.neighbors.iter().chain(&self.obstacles) {
            if slot.present {
                out.extend_from_slice(&[
                    slot.rel_position.x / cfg.sense_radius,
                    slot.rel_position.y / cfg.sense_radius,
                    slot.velocity.x * inv_speed,
                    slot.velocity.y * inv_speed,
                    1.0,
                ]);
            } else {
                out.extend_from_slice(&[0.0; SLOT_WIDTH]);
            }
        }
    }
}

/// Linearly annealed exploration probability.
pub fn anneal_epsilon(step: usize, cfg: &EnvConfig) -> f64 {
    if cfg.epsilon_steps == 0 || step >= cfg.epsilon_steps {
        return cfg.epsilon_end;
    }
    let frac = step as f64 / cfg.epsilon_steps as f64;
    cfg.epsilon_start + (cfg.epsilon_end - cfg.epsilon_start) * frac
}

/// Maps an action in `[-1, 1]` to a heading change in radians.
pub fn yaw_from_action(a: f64, cfg: &EnvConfig) -> f64 {
    let clamped = a.clamp(-1.0, 1.0);
    if clamped != a {
        log::warn!("action {a} outside [-1, 1]; clamped to {clamped}");
    }
    clamped * cfg.max_yaw_rad()
}

pub fn wrap_angle(theta: f64) -> f64 {
    let two_pi = 2.0 * PI;
    let wrapped = theta - two_pi * ((theta + PI) / two_pi).floor();
    // floor rounding can land exactly on +pi
    if wrapped >= PI {
        wrapped - two_pi
    } else {
        wrapped
    }
}

/// Spawns a new episode. Identical `(cfg, seed)` pairs yield identical worlds.
pub fn spawn_episode(cfg: &EnvConfig, seed: u64) -> Result<WorldState> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = cfg.n_uavs;
    let uavs: Vec<UavState> = (0..n)
        .map(|k| {
            let angle = PI / 2.0 + 2.0 * PI * k as f64 / n as f64;
            let position = cfg.spawn_center + Vec2::from_polar(cfg.spawn_radius, angle);
            UavState {
                position,
                heading: 0.0,
                speed: cfg.speed,
                preplanned_position: position,
                preplanned_velocity: Vec2::new(cfg.speed, 0.0),
            }
        })
        .collect();
    let centroid = uavs.iter().fold(Vec2::ZERO, |acc, u| acc + u.position) * (1.0 / n as f64);
    let swarm_velocity = Vec2::new(cfg.speed, 0.0);

    const ATTEMPTS: usize = 64;
    let mut obstacles = Vec::with_capacity(cfg.n_obstacles);
    for m in 0..cfg.n_obstacles {
        let placed = (0..ATTEMPTS).find_map(|_| {
            let jitter = cfg.obstacle_spawn_jitter;
            let offset = if jitter > 0.0 { rng.random_range(-jitter..=jitter) } else { 0.0 };
            let start = match rng.random_range(0..3u8) {
                0 => Vec2::new(cfg.screen, cfg.screen / 2.0 + offset),
                1 => Vec2::new(cfg.screen * 2.0 / 3.0 + offset, cfg.screen),
                _ => Vec2::new(cfg.screen * 2.0 / 3.0 + offset, 0.0),
            };
            let aim_jitter = cfg.obstacle_aim_jitter;
            let lateral = if aim_jitter > 0.0 {
                rng.random_range(-aim_jitter..=aim_jitter)
            } else {
                0.0
            };
            let meet = intercept_time(centroid - start, swarm_velocity, cfg.speed).unwrap_or(0.0);
            let aim = centroid + swarm_velocity * meet + Vec2::new(0.0, lateral);
            let velocity = (aim - start).normalized()? * cfg.speed;
            let clear = uavs
                .iter()
                .all(|u| u.position.distance(start) > cfg.sense_radius);
            clear.then_some(ObstacleState { position: start, velocity })
        });
        match placed {
            Some(o) => obstacles.push(o),
            None => {
                return Err(MacaError::InvalidConfig(format!(
                    "could not place obstacle {m} farther than {} m from every UAV",
                    cfg.sense_radius
                )))
            }
        }
    }
    Ok(WorldState {
        uavs,
        obstacles,
        step_index: 0,
        elapsed: 0.0,
    })
}

/// Earliest `t > 0` with `|rel + target_velocity * t| = pursuer_speed * t`,
/// where `rel` is the target position relative to the pursuer.
fn intercept_time(rel: Vec2, target_velocity: Vec2, pursuer_speed: f64) -> Option<f64> {
    let a = target_velocity.dot(target_velocity) - pursuer_speed * pursuer_speed;
    let b = 2.0 * rel.dot(target_velocity);
    let c = rel.dot(rel);
    if a.abs() < 1e-12 {
        let t = -c / b;
        return (b < 0.0 && t > 0.0).then_some(t);
    }
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return None;
    }
    let sq = disc.sqrt();
    let mut roots = [(-b - sq) / (2.0 * a), (-b + sq) / (2.0 * a)];
    roots.sort_by(f64::total_cmp);
    roots.into_iter().find(|t| *t > 0.0)
}

/// Local observation of `agent`. Only entities within the sensing radius
/// (inclusive) populate slots; slots are sorted by distance, then index.
pub fn observe(world: &WorldState, cfg: &EnvConfig, agent: usize) -> Result<Observation> {
    let me = world.uavs.get(agent).ok_or(MacaError::WidthMismatch {
        what: "agent index",
        expected: world.uavs.len(),
        got: agent,
    })?;
    if world.obstacles.len() > cfg.n_obstacles {
        return Err(MacaError::WidthMismatch {
            what: "obstacle slots",
            expected: cfg.n_obstacles,
            got: world.obstacles.len(),
        });
    }

    let sense = |entities: &mut dyn Iterator<Item = (usize, Vec2, Vec2)>, slots: usize| {
        let mut seen: Vec<(f64, usize, Slot)> = entities
            .filter_map(|(idx, pos, vel)| {
                let rel = pos - me.position;
                let d = rel.norm();
                (d <= cfg.sense_radius).then_some((
                    d,
                    idx,
                    Slot {
                        rel_position: rel,
                        velocity: vel,
                        present: true,
                    },
                ))
            })
            .collect();
        seen.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut out: Vec<Slot> = seen.into_iter().map(|(_, _, s)| s).collect();
        out.resize(slots, Slot::default());
        out
    };

    let neighbors = sense(
        &mut world
            .uavs
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != agent)
            .map(|(j, u)| (j, u.position, u.velocity())),
        world.uavs.len() - 1,
    );
    let obstacles = sense(
        &mut world
            .obstacles
            .iter()
            .enumerate()
            .map(|(j, o)| (j, o.position, o.velocity)),
        cfg.n_obstacles,
    );
    Ok(Observation {
        position: me.position,
        velocity: me.velocity(),
        preplanned_velocity: me.preplanned_velocity,
        neighbors,
        obstacles,
    })
}

/// Concatenated feature vectors of all agents, in agent order.
pub fn joint_features(world: &WorldState, cfg: &EnvConfig) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(world.uavs.len() * cfg.obs_width());
    for i in 0..world.uavs.len() {
        observe(world, cfg, i)?.write_features(cfg, &mut out);
    }
    Ok(out)
}

/// Minimum UAV-UAV and UAV-obstacle distances (`+inf` when no pair exists).
pub fn min_separations(world: &WorldState) -> (f64, f64) {
    let mut v2v = f64::INFINITY;
    let mut obs = f64::INFINITY;
    for (i, u) in world.uavs.iter().enumerate() {
        for w in &world.uavs[i + 1..] {
            v2v = v2v.min(u.position.distance(w.position));
        }
        for o in &world.obstacles {
            obs = obs.min(u.position.distance(o.position));
        }
    }
    (v2v, obs)
}

/// True iff a UAV pair is closer than `d_v2v` or a UAV-obstacle pair is
/// closer than `d_obs`. Distances equal to a threshold are not collisions.
pub fn check_collision(world: &WorldState, cfg: &EnvConfig) -> bool {
    let (v2v, obs) = min_separations(world);
    v2v < cfg.d_v2v || obs < cfg.d_obs
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    /// Internal reward contribution of each UAV.
    pub per_uav: Vec<f64>,
    pub internal: f64,
    pub external: f64,
    pub total: f64,
}

/// Global reward of a post-step world.
///
/// Each UAV contributes `cos(v, v_planned) - |a| - |x - x_planned| / d_max`;
/// a collision adds `-collision_penalty`.
pub fn compute_reward(
    world: &WorldState,
    cfg: &EnvConfig,
    joint_action: &[f64],
) -> Result<RewardBreakdown> {
    if joint_action.len() != world.uavs.len() {
        return Err(MacaError::WidthMismatch {
            what: "joint action",
            expected: world.uavs.len(),
            got: joint_action.len(),
        });
    }
    let mut per_uav = Vec::with_capacity(world.uavs.len());
    for (i, (u, &a)) in world.uavs.iter().zip(joint_action).enumerate() {
        let v = u.velocity().normalized().ok_or_else(|| {
            MacaError::NonFinite(format!("UAV {i} velocity cannot be normalized"))
        })?;
        let vp = u.preplanned_velocity.normalized().ok_or_else(|| {
            MacaError::NonFinite(format!("UAV {i} pre-planned velocity cannot be normalized"))
        })?;
        let deviation = u.position.distance(u.preplanned_position) / cfg.d_max;
        per_uav.push(v.dot(vp) - a.abs() - deviation);
    }
    let internal: f64 = per_uav.iter().sum();
    let external = if check_collision(world, cfg) {
        -cfg.collision_penalty
    } else {
        0.0
    };
    Ok(RewardBreakdown {
        per_uav,
        internal,
        external,
        total: internal + external,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepInfo {
    pub collision: bool,
    pub obstacles_exited: bool,
    /// Episode hit the step bound without the other terminal conditions.
    pub truncated: bool,
    pub reward: RewardBreakdown,
    pub min_uav_uav: f64,
    pub min_uav_obs: f64,
}

#[derive(Clone, Debug)]
pub struct StepResult {
    pub world: WorldState,
    pub reward: f64,
    pub done: bool,
    pub info: StepInfo,
}

fn outside_screen(p: Vec2, screen: f64) -> bool {
    p.x < 0.0 || p.x > screen || p.y < 0.0 || p.y > screen
}

/// Advances one control period with all UAVs acting synchronously.
pub fn step(world: &WorldState, cfg: &EnvConfig, joint_action: &[f64]) -> Result<StepResult> {
    if joint_action.len() != world.uavs.len() {
        return Err(MacaError::WidthMismatch {
            what: "joint action",
            expected: world.uavs.len(),
            got: joint_action.len(),
        });
    }
    if let Some((i, a)) = joint_action.iter().enumerate().find(|(_, a)| !a.is_finite()) {
        return Err(MacaError::NonFinite(format!("action {a} for UAV {i}")));
    }
    let mut next = world.clone();
    for (u, &a) in next.uavs.iter_mut().zip(joint_action) {
        u.heading = wrap_angle(u.heading + yaw_from_action(a, cfg));
        u.position += u.velocity() * cfg.dt;
        u.preplanned_position += u.preplanned_velocity * cfg.dt;
    }
    for o in &mut next.obstacles {
        o.position += o.velocity * cfg.dt;
    }
    next.step_index += 1;
    next.elapsed += cfg.dt;

    let executed: Vec<f64> = joint_action.iter().map(|a| a.clamp(-1.0, 1.0)).collect();
    let reward = compute_reward(&next, cfg, &executed)?;
    let (min_uav_uav, min_uav_obs) = min_separations(&next);
    let collision = min_uav_uav < cfg.d_v2v || min_uav_obs < cfg.d_obs;
    let obstacles_exited = next
        .obstacles
        .iter()
        .all(|o| outside_screen(o.position, cfg.screen));
    let truncated = !collision && !obstacles_exited && next.step_index >= cfg.max_steps();
    Ok(StepResult {
        reward: reward.total,
        done: collision || obstacles_exited || truncated,
        info: StepInfo {
            collision,
            obstacles_exited,
            truncated,
            reward,
            min_uav_uav,
            min_uav_obs,
        },
        world: next,
    })
}
