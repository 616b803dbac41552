//! Independent oracles shared by the integration tests and the acceptance suite.
#![allow(dead_code)]

use maca::critic::{CriticGrads, CriticNet, JointCritic};
use maca::credit::{maca_advantage, shapley_advantage, AdditiveCritic};
use maca::env::{
    check_collision, compute_reward, spawn_episode, step, EnvConfig, ObstacleState, Scenario, UavState, Vec2, WorldState,
};
use maca::policy::GaussianPolicy;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_vec<R: Rng>(len: usize, rng: &mut R) -> Vec<f64> {
    (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn rel_err(fd: f64, an: f64) -> f64 {
    (fd - an).abs() / fd.abs().max(an.abs()).max(1e-6)
}

const FD_STEP: f64 = 1e-6;

/// Largest relative error between the critic's analytic parameter gradient
/// and a central difference, over `coords` random coordinates of each
/// sub-network.
pub fn critic_gradient_error(seed: u64, n_agents: usize, obs_width: usize, coords: usize) -> f64 {
    let mut r = rng(seed);
    let mut critic = CriticNet::new(n_agents, obs_width, &mut r).unwrap();
    let obs = random_vec(n_agents * obs_width, &mut r);
    let act = random_vec(n_agents, &mut r);
    let (_, tape) = critic.forward(&obs, &act).unwrap();
    let mut grads = CriticGrads::zeros_like(&critic);
    critic.backward_accumulate(&tape, 1.0, &mut grads).unwrap();

    let mut worst: f64 = 0.0;
    for part in 0..3 {
        let count = match part {
            0 => critic.obs_proj.param_count(),
            1 => critic.act_proj.param_count(),
            _ => critic.trunk.param_count(),
        };
        for _ in 0..coords {
            let k = r.random_range(0..count);
            let mut eval = |delta: f64| {
                let params = match part {
                    0 => critic.obs_proj.params_mut(),
                    1 => critic.act_proj.params_mut(),
                    _ => critic.trunk.params_mut(),
                };
                params[k] += delta;
                let q = critic.q_value(&obs, &act).unwrap();
                let params = match part {
                    0 => critic.obs_proj.params_mut(),
                    1 => critic.act_proj.params_mut(),
                    _ => critic.trunk.params_mut(),
                };
                params[k] -= delta;
                q
            };
            let fd = (eval(FD_STEP) - eval(-FD_STEP)) / (2.0 * FD_STEP);
            let an = match part {
                0 => grads.obs_proj[k],
                1 => grads.act_proj[k],
                _ => grads.trunk[k],
            };
            worst = worst.max(rel_err(fd, an));
        }
    }
    worst
}

/// Same check for the actor's score `d log pi(a | o) / d theta`.
pub fn actor_gradient_error(seed: u64, obs_width: usize, coords: usize) -> f64 {
    let mut r = rng(seed);
    let mut policy = GaussianPolicy::new(obs_width, 0.1, &mut r).unwrap();
    let obs = random_vec(obs_width, &mut r);
    let action = r.random_range(-1.2..1.2);
    let score = policy.score(&obs, action).unwrap();
    let mut worst: f64 = 0.0;
    for _ in 0..coords {
        let k = r.random_range(0..score.len());
        let mut eval = |delta: f64| {
            policy.actor.params_mut()[k] += delta;
            let lp = policy.log_prob(&obs, action).unwrap();
            policy.actor.params_mut()[k] -= delta;
            lp
        };
        let fd = (eval(FD_STEP) - eval(-FD_STEP)) / (2.0 * FD_STEP);
        worst = worst.max(rel_err(fd, score[k]));
    }
    worst
}

/// Worst gradient error over `nets` random critics and `nets` random actors.
pub fn gradient_suite(nets: u64, coords: usize) -> f64 {
    let shapes = [(2, 16), (3, 26), (4, 36)];
    (0..nets)
        .map(|k| {
            let (n, w) = shapes[k as usize % shapes.len()];
            critic_gradient_error(k, n, w, coords).max(actor_gradient_error(10_000 + k, w, coords))
        })
        .fold(0.0, f64::max)
}

/// Largest deviation of the counterfactual advantage from each agent's own
/// additive term over `critics` random additive critics.
pub fn lemma1_worst(critics: u64) -> f64 {
    let mut worst: f64 = 0.0;
    for k in 0..critics {
        let mut r = rng(k);
        let n = 2 + (k as usize % 3);
        let w = r.random_range(1..8);
        let critic = AdditiveCritic::random(n, w, &mut r);
        let obs = random_vec(n * w, &mut r);
        let act = random_vec(n, &mut r);
        for i in 0..n {
            let own = critic.contribution(i, &obs[i * w..(i + 1) * w], act[i]);
            // masking leaves a zero block and zero action: tanh(0) = 0
            let adv = maca_advantage(&critic, &obs, &act, i).unwrap();
            worst = worst.max((adv - own).abs());
        }
    }
    worst
}

/// Largest disagreement between the counterfactual and Shapley advantages on
/// random additive critics.
pub fn additive_agreement_worst(critics: u64) -> f64 {
    let mut worst: f64 = 0.0;
    for k in 0..critics {
        let mut r = rng(50_000 + k);
        let n = 2 + (k as usize % 3);
        let w = r.random_range(1..8);
        let critic = AdditiveCritic::random(n, w, &mut r);
        let obs = random_vec(n * w, &mut r);
        let act = random_vec(n, &mut r);
        for i in 0..n {
            let a = maca_advantage(&critic, &obs, &act, i).unwrap();
            let s = shapley_advantage(&critic, &obs, &act, i).unwrap();
            worst = worst.max((a - s).abs());
        }
    }
    worst
}

/// Number of distinct coalitions a cached Shapley evaluation must query.
pub fn coalition_count(n: usize) -> usize {
    1 << n
}


/// Separation invariants every spawn must satisfy.
pub fn spawn_violations(w: &WorldState, cfg: &EnvConfig) -> Vec<String> {
    let mut bad = Vec::new();
    if w.uavs.len() != cfg.n_uavs || w.obstacles.len() != cfg.n_obstacles {
        bad.push("wrong entity counts".into());
    }
    for (i, a) in w.uavs.iter().enumerate() {
        for b in &w.uavs[i + 1..] {
            if a.position.distance(b.position) <= cfg.d_v2v {
                bad.push(format!("UAV pair too close: {}", a.position.distance(b.position)));
            }
        }
        for o in &w.obstacles {
            if a.position.distance(o.position) <= cfg.sense_radius {
                bad.push(format!("obstacle inside sensing range: {}", a.position.distance(o.position)));
            }
        }
        if a.speed != cfg.speed || a.preplanned_position != a.position {
            bad.push("UAV not on its pre-planned path at spawn".into());
        }
    }
    for o in &w.obstacles {
        if (o.velocity.norm() - cfg.speed).abs() > 1e-9 {
            bad.push(format!("obstacle speed {}", o.velocity.norm()));
        }
        if !(o.position.x == cfg.screen || o.position.y == 0.0 || o.position.y == cfg.screen) {
            bad.push(format!("obstacle not on an edge: {:?}", o.position));
        }
    }
    if check_collision(w, cfg) {
        bad.push("collision at spawn".into());
    }
    bad
}

/// Checks `count` seeded spawns cycling through the scenarios.
pub fn check_spawns(count: u64) -> Result<(), String> {
    for k in 0..count {
        let scenario = Scenario::ALL[k as usize % Scenario::ALL.len()];
        let cfg = scenario.config();
        let w = spawn_episode(&cfg, k).map_err(|e| e.to_string())?;
        let bad = spawn_violations(&w, &cfg);
        if !bad.is_empty() {
            return Err(format!("{scenario} seed {k}: {bad:?}"));
        }
    }
    Ok(())
}

/// Uniform random actions until termination. Every step must move each UAV
/// exactly `speed * dt`, keep obstacle velocities and stay within the step
/// bound. Returns the episode length and rewards.
pub fn random_episode(cfg: &EnvConfig, seed: u64) -> Result<(usize, Vec<f64>), String> {
    let mut r = rng(seed);
    let mut w = spawn_episode(cfg, seed).map_err(|e| e.to_string())?;
    let mut rewards = Vec::new();
    loop {
        let a: Vec<f64> = (0..cfg.n_uavs).map(|_| r.random_range(-1.0..=1.0)).collect();
        let s = step(&w, cfg, &a).map_err(|e| e.to_string())?;
        for (before, after) in w.uavs.iter().zip(&s.world.uavs) {
            let moved = after.position.distance(before.position);
            if (moved - cfg.speed * cfg.dt).abs() > 1e-9 || after.speed != cfg.speed {
                return Err(format!("seed {seed} step {}: moved {moved}", w.step_index));
            }
        }
        if w.obstacles.iter().zip(&s.world.obstacles).any(|(b, a)| a.velocity != b.velocity) {
            return Err(format!("seed {seed}: obstacle velocity changed"));
        }
        rewards.push(s.reward);
        w = s.world;
        if w.step_index > cfg.max_steps() {
            return Err(format!("seed {seed}: ran past the step bound"));
        }
        if s.done {
            return Ok((w.step_index, rewards));
        }
    }
}

pub fn check_speed_conservation(episodes: u64) -> Result<(), String> {
    for k in 0..episodes {
        random_episode(&Scenario::ALL[k as usize % 3].config(), k)?;
    }
    Ok(())
}

pub fn uav(position: Vec2, heading: f64, preplanned: Vec2) -> UavState {
    UavState {
        position,
        heading,
        speed: 5.0,
        preplanned_position: preplanned,
        preplanned_velocity: Vec2::new(5.0, 0.0),
    }
}

fn far_obstacle() -> ObstacleState {
    ObstacleState {
        position: Vec2::new(290.0, 10.0),
        velocity: Vec2::new(-5.0, 0.0),
    }
}

fn world(uavs: Vec<UavState>, obstacles: Vec<ObstacleState>) -> WorldState {
    WorldState {
        uavs,
        obstacles,
        step_index: 0,
        elapsed: 0.0,
    }
}

/// The three hand-computed reward cases, checked exactly.
pub fn check_reward_cases() -> Result<(), String> {
    let cfg = EnvConfig::default();
    let on_path = |y: f64| uav(Vec2::new(100.0, y), 0.0, Vec2::new(100.0, y));

    // on path, zero action, N = 2: each UAV earns 1
    let w = world(vec![on_path(100.0), on_path(200.0)], vec![far_obstacle()]);
    let r = compute_reward(&w, &cfg, &[0.0, 0.0]).map_err(|e| e.to_string())?;
    if r.total != 2.0 {
        return Err(format!("unperturbed pair: {}", r.total));
    }

    // heading perpendicular to the path, a = 0.5, 75 m off path: 0 - 0.5 - 0.5
    let w = world(
        vec![uav(Vec2::new(100.0, 175.0), std::f64::consts::FRAC_PI_2, Vec2::new(100.0, 100.0))],
        vec![far_obstacle()],
    );
    let r = compute_reward(&w, &cfg, &[0.5]).map_err(|e| e.to_string())?;
    if (r.per_uav[0] - -1.0).abs() > 1e-15 {
        return Err(format!("perpendicular UAV: {}", r.per_uav[0]));
    }

    // collision with C = 0: no external term, but the episode ends
    let head_on = ObstacleState {
        position: Vec2::new(124.0, 100.0),
        velocity: Vec2::new(-5.0, 0.0),
    };
    let w = world(vec![on_path(100.0), on_path(200.0)], vec![head_on]);
    let s = step(&w, &cfg, &[0.0, 0.0]).map_err(|e| e.to_string())?;
    if !(s.done && s.info.collision && s.info.reward.external == 0.0 && s.reward == 2.0) {
        return Err(format!("collision case: done {} reward {:?}", s.done, s.info.reward));
    }
    Ok(())
}
