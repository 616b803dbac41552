//! Centralized training.
//!
//! Episodes are rolled out with exploring actors (EAS off), then split into
//! minibatches. Each [`Learner::train_step`] runs in a fixed order:
//!
//! 1. TD targets from the target critic, with next actions taken as the
//!    current actors' greedy means;
//! 2. one Adam step on the mean squared TD error;
//! 3. per-agent advantages from the *updated* critic;
//! 4. one Adam ascent step per actor on `mean(score * advantage)`;
//! 5. a hard target sync once `target_sync_period` transitions have been
//!    consumed since the last one. With on-policy batching each transition
//!    is one env step, so the period is measured in env steps.
//!
//! A step that produces a non-finite loss or gradient is rolled back.
//!
//! All randomness is derived from the root seed and a counter (episode
//! index, train-step index), so a run can resume from its last checkpoint
//! without saving generator state.

use std::collections::VecDeque;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::credit::{all_advantages, AdvantageMethod};
use crate::critic::{critic_loss, critic_loss_grad, critic_update, sync_target, td_target, CriticGrads, CriticNet, CriticOpt, JointCritic};
use crate::eas::{emergency_select, EasConfig};
use crate::env::{self, anneal_epsilon, min_separations, spawn_episode, EnvConfig, Scenario, WorldState};
use crate::error::{MacaError, Result};
use crate::nn::{Checkpoint, OptState, UpdateOutcome, CHECKPOINT_FORMAT_VERSION};
use crate::policy::{actor_update, ActorSet, GaussianPolicy, DEFAULT_SIGMA};
use crate::seed::{self, stream};
use crate::trace::{self, CurveRow, Entity, TraceRow};

/// One synchronous step of the swarm.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub joint_obs: Vec<f64>,
    /// Executed actions, clamped to `[-1, 1]`; what the critic sees.
    pub joint_act: Vec<f64>,
    /// Pre-clamp policy samples; what the score function is evaluated at.
    pub sampled_act: Vec<f64>,
    pub reward: f64,
    pub next_joint_obs: Vec<f64>,
    pub done: bool,
    pub step_index: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Success,
    Collision,
}

impl Outcome {
    pub fn name(self) -> &'static str {
        match self {
            Outcome::Success => "success",
            Outcome::Collision => "collision",
        }
    }
}

/// EAS activity within one episode.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EasStats {
    /// Per-agent decisions that went through the filter.
    pub decisions: usize,
    pub interventions: usize,
    pub fallbacks: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeRecord {
    pub transitions: Vec<Transition>,
    pub outcome: Outcome,
    pub length: usize,
    pub total_return: f64,
    /// World snapshots from spawn to the terminal state (`length + 1`).
    pub worlds: Vec<WorldState>,
    pub min_uav_uav: f64,
    pub min_uav_obs: f64,
    pub eas: EasStats,
}

impl EpisodeRecord {
    /// True when only the last transition is terminal.
    pub fn is_well_formed(&self) -> bool {
        let n = self.transitions.len();
        n == self.length
            && self.worlds.len() == n + 1
            && self.transitions.iter().enumerate().all(|(k, t)| t.done == (k + 1 == n))
    }

    /// Trace rows: step 0 is the spawn state; UAV rows at step `t` carry the
    /// action taken at `t - 1` and the reward it earned.
    pub fn trace_rows(&self) -> Vec<TraceRow> {
        let mut rows = Vec::new();
        for (t, w) in self.worlds.iter().enumerate() {
            let prev = t.checked_sub(1).map(|k| &self.transitions[k]);
            for (i, u) in w.uavs.iter().enumerate() {
                rows.push(TraceRow {
                    step: t,
                    entity: Entity::Uav(i),
                    x: u.position.x,
                    y: u.position.y,
                    heading: u.heading,
                    action: prev.map_or(0.0, |p| p.joint_act[i]),
                    reward: prev.map_or(0.0, |p| p.reward),
                    done: prev.is_some_and(|p| p.done),
                });
            }
            for (k, o) in w.obstacles.iter().enumerate() {
                rows.push(TraceRow {
                    step: t,
                    entity: Entity::Obstacle(k),
                    x: o.position.x,
                    y: o.position.y,
                    heading: o.velocity.y.atan2(o.velocity.x),
                    action: 0.0,
                    reward: 0.0,
                    done: prev.is_some_and(|p| p.done),
                });
            }
        }
        rows
    }
}

/// How actions are chosen during a rollout.
#[derive(Clone, Copy, Debug)]
pub struct RolloutOptions<'a> {
    pub explore: bool,
    pub epsilon: f64,
    /// Emergency avoidance; `None` during training.
    pub eas: Option<&'a EasConfig>,
}

impl RolloutOptions<'_> {
    pub fn greedy() -> Self {
        Self {
            explore: false,
            epsilon: 0.0,
            eas: None,
        }
    }
}

/// Rolls one episode forward from `start` until it terminates.
pub fn run_episode<R: Rng + ?Sized>(
    cfg: &EnvConfig,
    start: WorldState,
    actors: &ActorSet,
    opts: &RolloutOptions,
    rng: &mut R,
) -> Result<EpisodeRecord> {
    let n = cfg.n_uavs;
    if actors.n_agents() != n || start.uavs.len() != n {
        return Err(MacaError::WidthMismatch {
            what: "policies",
            expected: n,
            got: actors.n_agents(),
        });
    }
    let width = cfg.obs_width();
    let eas = opts.eas.filter(|e| e.enabled);
    let mut world = start;
    let (mut min_v2v, mut min_obs) = min_separations(&world);
    let mut worlds = vec![world.clone()];
    let mut transitions = Vec::new();
    let mut stats = EasStats::default();
    let mut joint_obs = env::joint_features(&world, cfg)?;
    loop {
        let mut joint_act = Vec::with_capacity(n);
        let mut sampled = Vec::with_capacity(n);
        for i in 0..n {
            let s = actors.policy(i).act(&joint_obs[i * width..(i + 1) * width], opts.explore, opts.epsilon, rng)?;
            let mut a = s.action;
            if let Some(e) = eas {
                let d = emergency_select(&world, cfg, i, a, e, rng);
                stats.decisions += 1;
                stats.interventions += usize::from(d.intervened);
                stats.fallbacks += usize::from(d.fallback);
                a = d.action;
            }
            joint_act.push(a);
            sampled.push(if a == s.action { s.raw } else { a });
        }
        let result = env::step(&world, cfg, &joint_act)?;
        let next_obs = env::joint_features(&result.world, cfg)?;
        min_v2v = min_v2v.min(result.info.min_uav_uav);
        min_obs = min_obs.min(result.info.min_uav_obs);
        transitions.push(Transition {
            joint_obs: std::mem::replace(&mut joint_obs, next_obs.clone()),
            joint_act,
            sampled_act: sampled,
            reward: result.reward,
            next_joint_obs: next_obs,
            done: result.done,
            step_index: world.step_index,
        });
        world = result.world;
        worlds.push(world.clone());
        if result.done {
            let outcome = if result.info.collision {
                Outcome::Collision
            } else {
                Outcome::Success
            };
            let total_return = transitions.iter().map(|t| t.reward).sum();
            return Ok(EpisodeRecord {
                length: transitions.len(),
                transitions,
                outcome,
                total_return,
                worlds,
                min_uav_uav: min_v2v,
                min_uav_obs: min_obs,
                eas: stats,
            });
        }
    }
}

/// Spawns with `spawn_seed` and rolls out.
pub fn run_spawned_episode<R: Rng + ?Sized>(
    cfg: &EnvConfig,
    spawn_seed: u64,
    actors: &ActorSet,
    opts: &RolloutOptions,
    rng: &mut R,
) -> Result<EpisodeRecord> {
    run_episode(cfg, spawn_episode(cfg, spawn_seed)?, actors, opts, rng)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub scenario: Scenario,
    pub env: EnvConfig,
    pub method: AdvantageMethod,
    pub seed: u64,
    pub total_env_steps: usize,
    pub gamma: f64,
    pub batch_size: usize,
    pub target_sync_period: u64,
    pub critic_lr: f64,
    pub actor_lr: f64,
    pub sigma: f64,
    pub eval_every: usize,
    pub eval_episodes: usize,
    pub share_actor_params: bool,
    /// 0 trains on each episode once and discards it; otherwise a FIFO
    /// replay buffer of this many transitions is sampled.
    pub replay_capacity: usize,
}

impl TrainConfig {
    pub fn new(scenario: Scenario, method: AdvantageMethod, seed: u64) -> Self {
        Self {
            scenario,
            env: scenario.config(),
            method,
            seed,
            total_env_steps: match scenario {
                Scenario::FourUavTwoObstacles => 200_000,
                _ => 100_000,
            },
            gamma: 0.95,
            batch_size: 32,
            target_sync_period: 100,
            critic_lr: 1e-3,
            // 1e-4 saturates the tanh head under noisy score gradients
            actor_lr: 1e-5,
            sigma: DEFAULT_SIGMA,
            eval_every: 5_000,
            eval_episodes: 20,
            share_actor_params: false,
            replay_capacity: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.method.validate()?;
        let bad = |m: String| Err(MacaError::InvalidConfig(m));
        if !(0.0..1.0).contains(&self.gamma) {
            return bad(format!("gamma {} outside [0, 1)", self.gamma));
        }
        if self.batch_size == 0 || self.target_sync_period == 0 || self.eval_every == 0 || self.eval_episodes == 0 {
            return bad("batch_size, target_sync_period, eval_every and eval_episodes must be positive".into());
        }
        if !(self.critic_lr > 0.0 && self.actor_lr > 0.0 && self.sigma > 0.0) {
            return bad("learning rates and sigma must be positive".into());
        }
        Ok(())
    }
}

/// Loss summary of one train step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossReport {
    pub critic_loss: f64,
    /// `-mean(log_prob * advantage)`, averaged over agents.
    pub actor_loss_mean: f64,
    pub mean_abs_advantage: f64,
    pub target_synced: bool,
}

/// Ascent directions for every distinct actor parameter set.
#[derive(Clone, Debug, PartialEq)]
pub struct ActorGradients {
    pub per_slot: Vec<Vec<f64>>,
    pub actor_loss_mean: f64,
    pub mean_abs_advantage: f64,
}

/// Batch policy gradients with advantages from `critic`.
pub fn actor_gradients<R: Rng + ?Sized>(
    actors: &ActorSet,
    critic: &dyn JointCritic,
    batch: &[Transition],
    method: &AdvantageMethod,
    rng: &mut R,
) -> Result<ActorGradients> {
    let n = actors.n_agents();
    let width = critic.agent_obs_width();
    let mut per_slot: Vec<Vec<f64>> = actors.policies().iter().map(|p| vec![0.0; p.actor.param_count()]).collect();
    let scale = 1.0 / batch.len().max(1) as f64;
    let mut loss = 0.0;
    let mut abs_adv = 0.0;
    for t in batch {
        let advs = all_advantages(method, critic, &t.joint_obs, &t.joint_act, rng)?;
        for (i, &adv) in advs.iter().enumerate() {
            if !adv.is_finite() {
                return Err(MacaError::NonFinite(format!("advantage of agent {i}: {adv}")));
            }
            let obs = &t.joint_obs[i * width..(i + 1) * width];
            let logp = actors
                .policy(i)
                .accumulate_score(obs, t.sampled_act[i], adv * scale, &mut per_slot[actors.slot_of(i)])?;
            loss -= logp * adv * scale;
            abs_adv += adv.abs() * scale;
        }
    }
    Ok(ActorGradients {
        per_slot,
        actor_loss_mean: loss / n as f64,
        mean_abs_advantage: abs_adv / n as f64,
    })
}

/// Critic, target critic, actors and their optimizer state.
#[derive(Clone, Debug, PartialEq)]
pub struct Learner {
    pub critic: CriticNet,
    pub target: CriticNet,
    pub critic_opt: CriticOpt,
    pub actors: ActorSet,
    pub actor_opts: Vec<OptState>,
    pub train_steps: u64,
    /// Transitions consumed since the last target sync.
    pub sync_clock: u64,
    pub gamma: f64,
    pub target_sync_period: u64,
    pub method: AdvantageMethod,
}

impl Learner {
    pub fn new(cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = seed::rng_for(cfg.seed, stream::INIT, 0);
        let (n, w) = (cfg.env.n_uavs, cfg.env.obs_width());
        let critic = CriticNet::new(n, w, &mut rng)?;
        let actors = ActorSet::new(n, w, cfg.sigma, cfg.share_actor_params, &mut rng)?;
        Ok(Self::from_parts(critic, actors, cfg))
    }

    /// Wraps given networks with fresh optimizers and a synced target.
    pub fn from_parts(critic: CriticNet, actors: ActorSet, cfg: &TrainConfig) -> Self {
        let actor_opts = actors
            .policies()
            .iter()
            .map(|p| OptState::adam(p.actor.param_count(), cfg.actor_lr))
            .collect();
        Self {
            target: critic.clone(),
            critic_opt: CriticOpt::adam(&critic, cfg.critic_lr),
            critic,
            actors,
            actor_opts,
            train_steps: 0,
            sync_clock: 0,
            gamma: cfg.gamma,
            target_sync_period: cfg.target_sync_period,
            method: cfg.method,
        }
    }

    /// One critic update followed by one update per actor.
    /// On error the learner is left exactly as it was.
    pub fn train_step<R: Rng + ?Sized>(&mut self, batch: &[Transition], rng: &mut R) -> Result<LossReport> {
        if batch.is_empty() {
            return Err(MacaError::InvalidConfig("train_step needs a nonempty batch".into()));
        }
        let snapshot = self.clone();
        let out = self.try_train_step(batch, rng);
        if let Err(e) = &out {
            log::warn!("train step {} aborted and rolled back: {e}", self.train_steps);
            *self = snapshot;
        }
        out
    }

    fn try_train_step<R: Rng + ?Sized>(&mut self, batch: &[Transition], rng: &mut R) -> Result<LossReport> {
        let n = self.actors.n_agents();
        let width = self.critic.agent_obs_width();
        let scale = 1.0 / batch.len() as f64;

        let mut targets = Vec::with_capacity(batch.len());
        for t in batch {
            let next_act = if t.done {
                vec![0.0; n]
            } else {
                (0..n)
                    .map(|i| self.actors.policy(i).mean(&t.next_joint_obs[i * width..(i + 1) * width]))
                    .collect::<Result<Vec<_>>>()?
            };
            targets.push(td_target(t.reward, &t.next_joint_obs, &next_act, t.done, self.gamma, &self.target)?.y);
        }

        let mut grads = CriticGrads::zeros_like(&self.critic);
        let mut loss = 0.0;
        for (t, &y) in batch.iter().zip(&targets) {
            let (q, tape) = self.critic.forward(&t.joint_obs, &t.joint_act)?;
            loss += critic_loss(y, q) * scale;
            self.critic.backward_accumulate(&tape, critic_loss_grad(y, q) * scale, &mut grads)?;
        }
        if !loss.is_finite() {
            return Err(MacaError::NonFinite(format!("critic loss {loss}")));
        }
        if let UpdateOutcome::Skipped(msg) = critic_update(&mut self.critic, &grads, &mut self.critic_opt)? {
            return Err(MacaError::NonFinite(msg));
        }

        let ag = actor_gradients(&self.actors, &self.critic, batch, &self.method, rng)?;
        if !ag.actor_loss_mean.is_finite() {
            return Err(MacaError::NonFinite(format!("actor loss {}", ag.actor_loss_mean)));
        }
        for ((policy, opt), g) in self.actors.policies_mut().iter_mut().zip(&mut self.actor_opts).zip(&ag.per_slot) {
            if let UpdateOutcome::Skipped(msg) = actor_update(policy, g, opt)? {
                return Err(MacaError::NonFinite(msg));
            }
        }

        self.train_steps += 1;
        self.sync_clock += batch.len() as u64;
        let target_synced = self.sync_clock >= self.target_sync_period;
        if target_synced {
            sync_target(&self.critic, &mut self.target)?;
            self.sync_clock = 0;
        }
        Ok(LossReport {
            critic_loss: loss,
            actor_loss_mean: ag.actor_loss_mean,
            mean_abs_advantage: ag.mean_abs_advantage,
            target_synced,
        })
    }
}

/// Greedy mean return over the fixed evaluation spawns of `seed`.
pub fn greedy_mean_return(cfg: &EnvConfig, actors: &ActorSet, seed: u64, episodes: usize) -> Result<f64> {
    let mut total = 0.0;
    for k in 0..episodes {
        let spawn = seed::derive(seed, stream::EVAL_SPAWN, k as u64);
        let mut rng = seed::rng_for(seed, stream::EAS, k as u64);
        total += run_spawned_episode(cfg, spawn, actors, &RolloutOptions::greedy(), &mut rng)?.total_return;
    }
    Ok(total / episodes.max(1) as f64)
}

/// Describes a saved policy checkpoint directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format_version: u32,
    pub scenario: Scenario,
    pub n_agents: usize,
    pub n_obstacles: usize,
    pub obs_width: usize,
    pub shared: bool,
}

pub const CHECKPOINT_META: &str = "meta.json";

/// Writes `meta.json`, `critic.json` and one `actor_<i>.json` per agent.
pub fn save_checkpoint(dir: &Path, scenario: Scenario, env: &EnvConfig, learner: &Learner) -> Result<()> {
    fs::create_dir_all(dir)?;
    let meta = CheckpointMeta {
        format_version: CHECKPOINT_FORMAT_VERSION,
        scenario,
        n_agents: env.n_uavs,
        n_obstacles: env.n_obstacles,
        obs_width: env.obs_width(),
        shared: learner.actors.is_shared(),
    };
    fs::write(dir.join(CHECKPOINT_META), serde_json::to_string_pretty(&meta)?)?;
    learner.critic.checkpoint().save(&dir.join("critic.json"))?;
    for (i, ck) in learner.actors.checkpoints().into_iter().enumerate() {
        ck.save(&dir.join(format!("actor_{i}.json")))?;
    }
    Ok(())
}

/// Loads the actors of a checkpoint, rejecting one built for another
/// environment shape.
pub fn load_actors(dir: &Path, env: &EnvConfig) -> Result<(ActorSet, CheckpointMeta)> {
    let meta: CheckpointMeta = serde_json::from_str(&fs::read_to_string(dir.join(CHECKPOINT_META))?)?;
    if meta.format_version != CHECKPOINT_FORMAT_VERSION {
        return Err(MacaError::Checkpoint(format!("format version {}", meta.format_version)));
    }
    if meta.n_agents != env.n_uavs || meta.n_obstacles != env.n_obstacles || meta.obs_width != env.obs_width() {
        return Err(MacaError::ArchitectureMismatch(format!(
            "checkpoint is for {} ({} UAVs, {} obstacles), environment has {} UAVs and {} obstacles",
            meta.scenario, meta.n_agents, meta.n_obstacles, env.n_uavs, env.n_obstacles
        )));
    }
    let load = |i: usize| -> Result<GaussianPolicy> {
        let ck = Checkpoint::load(&dir.join(format!("actor_{i}.json")))?;
        GaussianPolicy::from_checkpoint(&ck, meta.obs_width)
    };
    let actors = if meta.shared {
        ActorSet::shared(load(0)?, meta.n_agents)
    } else {
        ActorSet::from_policies((0..meta.n_agents).map(load).collect::<Result<Vec<_>>>()?)
    };
    Ok((actors, meta))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EpsilonPoint {
    pub env_step: usize,
    pub epsilon: f64,
}

/// Run description written next to the artifacts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub config: TrainConfig,
    pub seeds: SeedManifest,
    pub env_steps: usize,
    pub episodes: usize,
    pub train_steps: u64,
    /// EAS decisions made while training; always 0.
    pub eas_decisions_during_training: usize,
    pub epsilon_trace: Vec<EpsilonPoint>,
    pub completed: bool,
    pub artifacts: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedManifest {
    pub root: u64,
    pub init: u64,
    pub first_spawn: u64,
    pub first_eval_spawn: u64,
}

impl SeedManifest {
    fn new(root: u64) -> Self {
        Self {
            root,
            init: seed::derive(root, stream::INIT, 0),
            first_spawn: seed::derive(root, stream::SPAWN, 0),
            first_eval_spawn: seed::derive(root, stream::EVAL_SPAWN, 0),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
struct LossAccumulator {
    critic: f64,
    actor: f64,
    steps: usize,
}

impl LossAccumulator {
    fn push(&mut self, r: &LossReport) {
        self.critic += r.critic_loss;
        self.actor += r.actor_loss_mean;
        self.steps += 1;
    }

    fn means(&self) -> (f64, f64) {
        if self.steps == 0 {
            (f64::NAN, f64::NAN)
        } else {
            (self.critic / self.steps as f64, self.actor / self.steps as f64)
        }
    }
}

/// Everything needed to continue a run; the curve itself lives in `curve.csv`.
#[derive(Serialize, Deserialize)]
struct ResumeState {
    format_version: u32,
    config: TrainConfig,
    env_steps: usize,
    episodes: usize,
    next_eval_at: usize,
    losses: LossAccumulator,
    critic: Checkpoint,
    target: Checkpoint,
    critic_opt: CriticOpt,
    actors: Vec<Checkpoint>,
    actor_opts: Vec<OptState>,
    train_steps: u64,
    sync_clock: u64,
    replay: VecDeque<Transition>,
    eas_decisions: usize,
    epsilon_trace: Vec<EpsilonPoint>,
}

#[derive(Clone, Debug, Default)]
pub struct TrainOptions {
    /// Continue from `resume.json` in the output directory if present.
    pub resume: bool,
    /// Return once this many env steps are done, without a final save;
    /// simulates a killed process.
    pub stop_after: Option<usize>,
}

#[derive(Clone, Debug)]
pub struct TrainSummary {
    pub out_dir: PathBuf,
    pub env_steps: usize,
    pub episodes: usize,
    pub train_steps: u64,
    pub curve: Vec<CurveRow>,
    pub eas_decisions: usize,
    pub interrupted: bool,
    pub learner: Learner,
}

pub const CURVE_FILE: &str = "curve.csv";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const RESUME_FILE: &str = "resume.json";
pub const CHECKPOINT_DIR: &str = "checkpoint";
pub const TRACE_DIR: &str = "traces";

struct RunState {
    env_steps: usize,
    episodes: usize,
    next_eval_at: usize,
    losses: LossAccumulator,
    learner: Learner,
    replay: VecDeque<Transition>,
    eas_decisions: usize,
    epsilon_trace: Vec<EpsilonPoint>,
    curve: Vec<CurveRow>,
}

impl RunState {
    fn fresh(cfg: &TrainConfig) -> Result<Self> {
        Ok(Self {
            env_steps: 0,
            episodes: 0,
            next_eval_at: 0,
            losses: LossAccumulator::default(),
            learner: Learner::new(cfg)?,
            replay: VecDeque::new(),
            eas_decisions: 0,
            epsilon_trace: Vec::new(),
            curve: Vec::new(),
        })
    }

    fn load(cfg: &TrainConfig, out_dir: &Path) -> Result<Self> {
        let text = fs::read_to_string(out_dir.join(RESUME_FILE))?;
        let s: ResumeState = serde_json::from_str(&text)?;
        if s.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(MacaError::Checkpoint(format!("resume format version {}", s.format_version)));
        }
        let comparable = |c: &TrainConfig| TrainConfig {
            total_env_steps: 0,
            ..c.clone()
        };
        if comparable(&s.config) != comparable(cfg) {
            return Err(MacaError::Checkpoint(
                "resume state was written with a different configuration".into(),
            ));
        }
        let (n, w) = (cfg.env.n_uavs, cfg.env.obs_width());
        let policies = s
            .actors
            .iter()
            .map(|ck| GaussianPolicy::from_checkpoint(ck, w))
            .collect::<Result<Vec<_>>>()?;
        let actors = if cfg.share_actor_params {
            let p = policies.into_iter().next().ok_or_else(|| MacaError::Checkpoint("no actor".into()))?;
            ActorSet::shared(p, n)
        } else {
            ActorSet::from_policies(policies)
        };
        let learner = Learner {
            critic: CriticNet::from_checkpoint(&s.critic, n, w)?,
            target: CriticNet::from_checkpoint(&s.target, n, w)?,
            critic_opt: s.critic_opt,
            actors,
            actor_opts: s.actor_opts,
            train_steps: s.train_steps,
            sync_clock: s.sync_clock,
            gamma: cfg.gamma,
            target_sync_period: cfg.target_sync_period,
            method: cfg.method,
        };
        Ok(Self {
            env_steps: s.env_steps,
            episodes: s.episodes,
            next_eval_at: s.next_eval_at,
            losses: s.losses,
            learner,
            replay: s.replay,
            eas_decisions: s.eas_decisions,
            epsilon_trace: s.epsilon_trace,
            curve: trace::read_curve(&out_dir.join(CURVE_FILE))?,
        })
    }

    fn resume_state(&self, cfg: &TrainConfig) -> ResumeState {
        let l = &self.learner;
        ResumeState {
            format_version: CHECKPOINT_FORMAT_VERSION,
            config: cfg.clone(),
            env_steps: self.env_steps,
            episodes: self.episodes,
            next_eval_at: self.next_eval_at,
            losses: self.losses,
            critic: l.critic.checkpoint(),
            target: l.target.checkpoint(),
            critic_opt: l.critic_opt.clone(),
            actors: l.actors.policies().iter().enumerate().map(|(i, p)| p.checkpoint(i)).collect(),
            actor_opts: l.actor_opts.clone(),
            train_steps: l.train_steps,
            sync_clock: l.sync_clock,
            replay: self.replay.clone(),
            eas_decisions: self.eas_decisions,
            epsilon_trace: self.epsilon_trace.clone(),
        }
    }

    fn manifest(&self, cfg: &TrainConfig, completed: bool) -> Manifest {
        Manifest {
            format_version: CHECKPOINT_FORMAT_VERSION,
            config: cfg.clone(),
            seeds: SeedManifest::new(cfg.seed),
            env_steps: self.env_steps,
            episodes: self.episodes,
            train_steps: self.learner.train_steps,
            eas_decisions_during_training: self.eas_decisions,
            epsilon_trace: self.epsilon_trace.clone(),
            completed,
            artifacts: vec![
                CURVE_FILE.into(),
                MANIFEST_FILE.into(),
                RESUME_FILE.into(),
                format!("{CHECKPOINT_DIR}/"),
                format!("{TRACE_DIR}/"),
            ],
        }
    }

    /// Scores the greedy policy and appends a curve row.
    fn record_eval(&mut self, cfg: &TrainConfig) -> Result<()> {
        let mean_return = greedy_mean_return(&cfg.env, &self.learner.actors, cfg.seed, cfg.eval_episodes)?;
        let epsilon = anneal_epsilon(self.env_steps, &cfg.env);
        let (critic_loss, actor_loss_mean) = self.losses.means();
        self.losses = LossAccumulator::default();
        self.curve.push(CurveRow {
            env_step: self.env_steps,
            episodes: self.episodes,
            mean_return,
            critic_loss,
            actor_loss_mean,
            epsilon,
        });
        self.epsilon_trace.push(EpsilonPoint {
            env_step: self.env_steps,
            epsilon,
        });
        log::info!(
            "env_step {} episodes {} mean_return {mean_return:.3} critic_loss {critic_loss:.4} epsilon {epsilon:.3}",
            self.env_steps,
            self.episodes
        );
        Ok(())
    }

    fn save(&self, cfg: &TrainConfig, out_dir: &Path, completed: bool) -> Result<()> {
        trace::write_curve(&out_dir.join(CURVE_FILE), &self.curve)?;
        save_checkpoint(&out_dir.join(CHECKPOINT_DIR), cfg.scenario, &cfg.env, &self.learner)?;
        fs::write(out_dir.join(RESUME_FILE), serde_json::to_string(&self.resume_state(cfg))?)?;
        fs::write(out_dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&self.manifest(cfg, completed))?)?;
        Ok(())
    }

    /// Trains on one finished episode.
    fn learn_from(&mut self, cfg: &TrainConfig, transitions: Vec<Transition>) -> Result<()> {
        let steps = transitions.len().div_ceil(cfg.batch_size);
        if cfg.replay_capacity == 0 {
            for chunk in transitions.chunks(cfg.batch_size) {
                let mut rng = seed::rng_for(cfg.seed, stream::TRAIN_STEP, self.learner.train_steps);
                let report = self.learner.train_step(chunk, &mut rng)?;
                self.losses.push(&report);
            }
            return Ok(());
        }
        self.replay.extend(transitions);
        while self.replay.len() > cfg.replay_capacity {
            self.replay.pop_front();
        }
        for _ in 0..steps {
            let mut rng = seed::rng_for(cfg.seed, stream::TRAIN_STEP, self.learner.train_steps);
            let batch: Vec<Transition> = (0..cfg.batch_size)
                .map(|_| self.replay[rng.random_range(0..self.replay.len())].clone())
                .collect();
            let report = self.learner.train_step(&batch, &mut rng)?;
            self.losses.push(&report);
        }
        Ok(())
    }
}

/// Runs training and writes artifacts into `out_dir`:
/// `curve.csv`, `manifest.json`, `resume.json`, `checkpoint/` and a greedy
/// evaluation trace in `traces/`.
pub fn train(cfg: &TrainConfig, out_dir: &Path, opts: &TrainOptions) -> Result<TrainSummary> {
    cfg.validate()?;
    fs::create_dir_all(out_dir)?;
    let mut st = if opts.resume && out_dir.join(RESUME_FILE).exists() {
        log::info!("resuming from {}", out_dir.join(RESUME_FILE).display());
        RunState::load(cfg, out_dir)?
    } else {
        RunState::fresh(cfg)?
    };
    if st.curve.is_empty() {
        st.record_eval(cfg)?;
        st.next_eval_at = cfg.eval_every;
        st.save(cfg, out_dir, false)?;
    }

    let summary = |st: RunState, interrupted: bool| TrainSummary {
        out_dir: out_dir.to_path_buf(),
        env_steps: st.env_steps,
        episodes: st.episodes,
        train_steps: st.learner.train_steps,
        curve: st.curve,
        eas_decisions: st.eas_decisions,
        interrupted,
        learner: st.learner,
    };

    while st.env_steps < cfg.total_env_steps {
        let episode = st.episodes as u64;
        let epsilon = anneal_epsilon(st.env_steps, &cfg.env);
        let mut rng = seed::rng_for(cfg.seed, stream::EXPLORE, episode);
        let opts_roll = RolloutOptions {
            explore: true,
            epsilon,
            eas: None,
        };
        let spawn = seed::derive(cfg.seed, stream::SPAWN, episode);
        let record = run_spawned_episode(&cfg.env, spawn, &st.learner.actors, &opts_roll, &mut rng)?;
        st.env_steps += record.length;
        st.episodes += 1;
        st.eas_decisions += record.eas.decisions;
        st.learn_from(cfg, record.transitions)?;

        if st.env_steps >= st.next_eval_at {
            st.record_eval(cfg)?;
            while st.next_eval_at <= st.env_steps {
                st.next_eval_at += cfg.eval_every;
            }
            st.save(cfg, out_dir, false)?;
        }
        if opts.stop_after.is_some_and(|s| st.env_steps >= s) && st.env_steps < cfg.total_env_steps {
            return Ok(summary(st, true));
        }
    }

    if st.curve.last().is_none_or(|r| r.env_step != st.env_steps) {
        st.record_eval(cfg)?;
    }
    st.save(cfg, out_dir, true)?;
    let mut rng = seed::rng_for(cfg.seed, stream::EAS, 0);
    let spawn = seed::derive(cfg.seed, stream::EVAL_SPAWN, 0);
    let ep = run_spawned_episode(&cfg.env, spawn, &st.learner.actors, &RolloutOptions::greedy(), &mut rng)?;
    trace::write_trace(&out_dir.join(TRACE_DIR).join("episode_0000.csv"), &ep.trace_rows())?;
    Ok(summary(st, false))
}
