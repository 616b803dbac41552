//! Per-agent credit assignment from a centralized critic.
//!
//! Three advantages are provided:
//!
//! - MACA: `Q(s, a) - Q(s - o_i, a - a_i)`, where agent `i`'s observation
//!   block and action are both replaced by the null encoding.
//! - COMA-continuous: `Q(s, a)` minus the mean of `Q` with `a_i` resampled
//!   from `N(a_i, sigma)`.
//! - Shapley: the average marginal contribution of agent `i` over all
//!   orderings of the agents, with absent agents nulled.
//!
//! The null encoding is the same all-zero, presence-zero block the
//! environment emits for an unobserved entity, so a masked agent reads to
//! the critic as absent rather than as sitting at the origin.

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::critic::JointCritic;
use crate::error::{MacaError, Result};
use crate::policy::ActorSet;

/// Largest swarm for which Shapley orderings are enumerated.
pub const SHAPLEY_MAX_AGENTS: usize = 8;

#[derive(Clone, Debug, PartialEq)]
pub struct MaskedJoint {
    pub joint_obs: Vec<f64>,
    pub joint_act: Vec<f64>,
    pub nulled_agent: usize,
}

/// Replaces agent `i`'s observation block and action with the null encoding.
pub fn mask_agent(joint_obs: &[f64], joint_act: &[f64], obs_width: usize, i: usize) -> MaskedJoint {
    let mut obs = joint_obs.to_vec();
    let mut act = joint_act.to_vec();
    null_in_place(&mut obs, &mut act, obs_width, i);
    MaskedJoint {
        joint_obs: obs,
        joint_act: act,
        nulled_agent: i,
    }
}

fn null_in_place(obs: &mut [f64], act: &mut [f64], obs_width: usize, i: usize) {
    obs[i * obs_width..(i + 1) * obs_width].fill(0.0);
    act[i] = 0.0;
}

fn check_agent(critic: &dyn JointCritic, joint_obs: &[f64], joint_act: &[f64], i: usize) -> Result<()> {
    let n = critic.n_agents();
    if i >= n {
        return Err(MacaError::WidthMismatch {
            what: "agent index",
            expected: n,
            got: i,
        });
    }
    if joint_act.len() != n || joint_obs.len() != n * critic.agent_obs_width() {
        return Err(MacaError::WidthMismatch {
            what: "joint input",
            expected: n * critic.agent_obs_width(),
            got: joint_obs.len(),
        });
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum AdvantageMethod {
    Maca,
    Coma {
        #[serde(default = "default_coma_sigma")]
        sigma: f64,
        #[serde(default = "default_coma_samples")]
        samples: usize,
    },
    Shapley,
}

fn default_coma_sigma() -> f64 {
    0.1
}

fn default_coma_samples() -> usize {
    10
}

impl AdvantageMethod {
    pub fn coma() -> Self {
        AdvantageMethod::Coma {
            sigma: default_coma_sigma(),
            samples: default_coma_samples(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            AdvantageMethod::Maca => "maca",
            AdvantageMethod::Coma { .. } => "coma",
            AdvantageMethod::Shapley => "shapley",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name.trim().to_ascii_lowercase().as_str() {
            "maca" => Ok(AdvantageMethod::Maca),
            "coma" => Ok(AdvantageMethod::coma()),
            "shapley" => Ok(AdvantageMethod::Shapley),
            other => Err(MacaError::InvalidConfig(format!(
                "unknown advantage kind {other:?}; expected maca, coma or shapley"
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let AdvantageMethod::Coma { sigma, samples } = *self {
            if samples == 0 {
                return Err(MacaError::InvalidConfig("coma needs at least one sample".into()));
            }
            if !(sigma.is_finite() && sigma >= 0.0) {
                return Err(MacaError::InvalidConfig(format!("coma sigma {sigma} must be >= 0")));
            }
        }
        Ok(())
    }
}

/// `Q(s, a) - Q(s - o_i, a - a_i)`: exactly two critic evaluations.
pub fn maca_advantage(critic: &dyn JointCritic, joint_obs: &[f64], joint_act: &[f64], i: usize) -> Result<f64> {
    check_agent(critic, joint_obs, joint_act, i)?;
    let q = critic.q_value(joint_obs, joint_act)?;
    let masked = mask_agent(joint_obs, joint_act, critic.agent_obs_width(), i);
    Ok(q - critic.q_value(&masked.joint_obs, &masked.joint_act)?)
}

/// COMA baseline with `samples` Gaussian resamples of `a_i`, clamped to
/// `[-1, 1]`: `samples + 1` critic evaluations.
pub fn coma_advantage<R: Rng + ?Sized>(
    critic: &dyn JointCritic,
    joint_obs: &[f64],
    joint_act: &[f64],
    i: usize,
    sigma: f64,
    samples: usize,
    rng: &mut R,
) -> Result<f64> {
    check_agent(critic, joint_obs, joint_act, i)?;
    AdvantageMethod::Coma { sigma, samples }.validate()?;
    let q = critic.q_value(joint_obs, joint_act)?;
    let noise = Normal::new(0.0, sigma).map_err(|e| MacaError::InvalidConfig(e.to_string()))?;
    let mut act = joint_act.to_vec();
    let mut baseline = 0.0;
    for _ in 0..samples {
        act[i] = (joint_act[i] + noise.sample(rng)).clamp(-1.0, 1.0);
        baseline += critic.q_value(joint_obs, &act)?;
    }
    Ok(q - baseline / samples as f64)
}

/// Shapley value of agent `i` in the coalition game `v(S) = Q` with every
/// agent outside `S` nulled.
///
/// All `N!` orderings are walked; each distinct coalition is evaluated once,
/// so the critic is called `2^N` times.
pub fn shapley_advantage(critic: &dyn JointCritic, joint_obs: &[f64], joint_act: &[f64], i: usize) -> Result<f64> {
    let n = critic.n_agents();
    if n > SHAPLEY_MAX_AGENTS {
        return Err(MacaError::TooManyAgents {
            n,
            limit: SHAPLEY_MAX_AGENTS,
        });
    }
    check_agent(critic, joint_obs, joint_act, i)?;
    let width = critic.agent_obs_width();
    let mut cache: HashMap<u32, f64> = HashMap::new();
    let mut value = |coalition: u32| -> Result<f64> {
        if let Some(v) = cache.get(&coalition) {
            return Ok(*v);
        }
        let mut obs = joint_obs.to_vec();
        let mut act = joint_act.to_vec();
        for j in (0..n).filter(|j| coalition & (1 << j) == 0) {
            null_in_place(&mut obs, &mut act, width, j);
        }
        let v = critic.q_value(&obs, &act)?;
        cache.insert(coalition, v);
        Ok(v)
    };

    let mut order: Vec<usize> = (0..n).collect();
    let mut total = 0.0;
    let mut count = 0usize;
    // Heap's algorithm, iterative form.
    let mut c = vec![0usize; n];
    let mut visit = |order: &[usize]| -> Result<()> {
        let before: u32 = order
            .iter()
            .take_while(|&&j| j != i)
            .fold(0, |mask, &j| mask | (1 << j));
        total += value(before | (1 << i))? - value(before)?;
        count += 1;
        Ok(())
    };
    visit(&order)?;
    let mut k = 1;
    while k < n {
        if c[k] < k {
            if k % 2 == 0 {
                order.swap(0, k);
            } else {
                order.swap(c[k], k);
            }
            visit(&order)?;
            c[k] += 1;
            k = 1;
        } else {
            c[k] = 0;
            k += 1;
        }
    }
    Ok(total / count as f64)
}

/// Advantage of agent `i` under the selected method.
pub fn advantage<R: Rng + ?Sized>(
    method: &AdvantageMethod,
    critic: &dyn JointCritic,
    joint_obs: &[f64],
    joint_act: &[f64],
    i: usize,
    rng: &mut R,
) -> Result<f64> {
    match *method {
        AdvantageMethod::Maca => maca_advantage(critic, joint_obs, joint_act, i),
        AdvantageMethod::Coma { sigma, samples } => coma_advantage(critic, joint_obs, joint_act, i, sigma, samples, rng),
        AdvantageMethod::Shapley => shapley_advantage(critic, joint_obs, joint_act, i),
    }
}

/// Advantages of every agent for one joint sample.
///
/// Matches calling [`advantage`] for each agent in order (including the
/// random draws consumed), but evaluates `Q(s, a)` only once.
pub fn all_advantages<R: Rng + ?Sized>(
    method: &AdvantageMethod,
    critic: &dyn JointCritic,
    joint_obs: &[f64],
    joint_act: &[f64],
    rng: &mut R,
) -> Result<Vec<f64>> {
    let n = critic.n_agents();
    if n == 0 {
        return Ok(Vec::new());
    }
    check_agent(critic, joint_obs, joint_act, 0)?;
    let width = critic.agent_obs_width();
    match *method {
        AdvantageMethod::Maca => {
            let q = critic.q_value(joint_obs, joint_act)?;
            let mut obs = joint_obs.to_vec();
            let mut act = joint_act.to_vec();
            (0..n)
                .map(|i| {
                    null_in_place(&mut obs, &mut act, width, i);
                    let v = critic.q_value(&obs, &act);
                    obs[i * width..(i + 1) * width].copy_from_slice(&joint_obs[i * width..(i + 1) * width]);
                    act[i] = joint_act[i];
                    Ok(q - v?)
                })
                .collect()
        }
        AdvantageMethod::Coma { sigma, samples } => {
            method.validate()?;
            let q = critic.q_value(joint_obs, joint_act)?;
            let noise = Normal::new(0.0, sigma).map_err(|e| MacaError::InvalidConfig(e.to_string()))?;
            let mut act = joint_act.to_vec();
            (0..n)
                .map(|i| {
                    let mut baseline = 0.0;
                    for _ in 0..samples {
                        act[i] = (joint_act[i] + noise.sample(rng)).clamp(-1.0, 1.0);
                        baseline += critic.q_value(joint_obs, &act)?;
                    }
                    act[i] = joint_act[i];
                    Ok(q - baseline / samples as f64)
                })
                .collect()
        }
        AdvantageMethod::Shapley => (0..n).map(|i| shapley_advantage(critic, joint_obs, joint_act, i)).collect(),
    }
}

/// Wraps a critic and counts `q_value` calls.
pub struct CountingCritic<'a> {
    inner: &'a dyn JointCritic,
    calls: AtomicUsize,
}

impl<'a> CountingCritic<'a> {
    pub fn new(inner: &'a dyn JointCritic) -> Self {
        Self {
            inner,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }

    pub fn reset(&self) {
        self.calls.store(0, Ordering::Relaxed);
    }
}

impl JointCritic for CountingCritic<'_> {
    fn n_agents(&self) -> usize {
        self.inner.n_agents()
    }

    fn agent_obs_width(&self) -> usize {
        self.inner.agent_obs_width()
    }

    fn q_value(&self, joint_obs: &[f64], joint_act: &[f64]) -> Result<f64> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        self.inner.q_value(joint_obs, joint_act)
    }
}

/// Critic whose value is a sum of per-agent terms, each zero on the null
/// encoding: `Q = bias + sum_j w_j * tanh(u_j . o_j + v_j * a_j)`.
///
/// Used to check that the advantages recover each agent's own term.
#[derive(Clone, Debug, PartialEq)]
pub struct AdditiveCritic {
    pub obs_width: usize,
    pub bias: f64,
    pub weights: Vec<f64>,
    pub obs_coeffs: Vec<Vec<f64>>,
    pub act_coeffs: Vec<f64>,
}

impl AdditiveCritic {
    pub fn random<R: Rng + ?Sized>(n_agents: usize, obs_width: usize, rng: &mut R) -> Self {
        Self {
            obs_width,
            bias: rng.random_range(-2.0..2.0),
            weights: (0..n_agents).map(|_| rng.random_range(-2.0..2.0)).collect(),
            obs_coeffs: (0..n_agents)
                .map(|_| (0..obs_width).map(|_| rng.random_range(-1.0..1.0)).collect())
                .collect(),
            act_coeffs: (0..n_agents).map(|_| rng.random_range(-1.0..1.0)).collect(),
        }
    }

    /// Agent `j`'s additive term.
    pub fn contribution(&self, j: usize, obs_block: &[f64], action: f64) -> f64 {
        let z: f64 = self.obs_coeffs[j].iter().zip(obs_block).map(|(u, o)| u * o).sum::<f64>()
            + self.act_coeffs[j] * action;
        self.weights[j] * z.tanh()
    }
}

impl JointCritic for AdditiveCritic {
    fn n_agents(&self) -> usize {
        self.weights.len()
    }

    fn agent_obs_width(&self) -> usize {
        self.obs_width
    }

    fn q_value(&self, joint_obs: &[f64], joint_act: &[f64]) -> Result<f64> {
        let n = self.weights.len();
        if joint_obs.len() != n * self.obs_width || joint_act.len() != n {
            return Err(MacaError::WidthMismatch {
                what: "additive critic input",
                expected: n * self.obs_width,
                got: joint_obs.len(),
            });
        }
        Ok(self.bias
            + joint_obs
                .chunks_exact(self.obs_width)
                .zip(joint_act)
                .enumerate()
                .map(|(j, (o, a))| self.contribution(j, o, *a))
                .sum::<f64>())
    }
}

/// Which baseline the unbiasedness harness correlates with the score.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Lemma2Baseline {
    /// `Q(s - o_i, a - a_i)`: independent of `a_i`, so the mean should vanish.
    Counterfactual,
    /// `Q(s, a)` itself: correlated with `a_i`; a negative control.
    JointQ,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Lemma2Estimate {
    pub mean: f64,
    pub stderr: f64,
    pub samples: usize,
}

impl Lemma2Estimate {
    /// `|mean|` in units of its standard error.
    pub fn z_score(&self) -> f64 {
        self.mean.abs() / self.stderr
    }
}

/// Monte Carlo estimate of `E[sum_i score_i . d * b_i(s, a)]` at fixed
/// states, where `d` is a random unit direction in the joint actor
/// parameter space and `b_i` the chosen baseline.
///
/// Actions are drawn from the actors' Gaussians; states cycle through
/// `states` (joint observations). Because `score_i = (a_i - mu_i) / sigma^2
/// * grad mu_i`, the projection `grad mu_i . d` is computed once per state.
pub fn verify_lemma2<R: Rng + ?Sized>(
    actors: &ActorSet,
    critic: &dyn JointCritic,
    states: &[Vec<f64>],
    n_samples: usize,
    baseline: Lemma2Baseline,
    rng: &mut R,
) -> Result<Lemma2Estimate> {
    let n = critic.n_agents();
    let width = critic.agent_obs_width();
    if actors.n_agents() != n {
        return Err(MacaError::WidthMismatch {
            what: "actor count",
            expected: n,
            got: actors.n_agents(),
        });
    }
    if states.is_empty() || n_samples < 2 {
        return Err(MacaError::InvalidConfig("need states and at least two samples".into()));
    }
    for p in actors.policies() {
        if !(p.sigma > 0.0 && p.sigma.is_finite()) {
            return Err(MacaError::DegeneratePolicy(format!("sigma = {}", p.sigma)));
        }
    }

    let directions: Vec<Vec<f64>> = {
        let mut raw: Vec<Vec<f64>> = actors
            .policies()
            .iter()
            .map(|p| (0..p.actor.param_count()).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let norm = raw.iter().flatten().map(|v| v * v).sum::<f64>().sqrt();
        raw.iter_mut().flatten().for_each(|v| *v /= norm);
        raw
    };

    // Per state and agent: (mean action, sigma, grad mu . d)
    let mut per_state = Vec::with_capacity(states.len());
    for s in states {
        if s.len() != n * width {
            return Err(MacaError::WidthMismatch {
                what: "joint observation",
                expected: n * width,
                got: s.len(),
            });
        }
        let mut agents = Vec::with_capacity(n);
        for i in 0..n {
            let policy = actors.policy(i);
            let obs = &s[i * width..(i + 1) * width];
            let (mu, tape) = policy.actor.forward(obs)?;
            let (grad_mu, _) = policy.actor.backward(&tape, &[1.0])?;
            let d = &directions[actors.slot_of(i)];
            let proj: f64 = grad_mu.iter().zip(d).map(|(g, v)| g * v).sum();
            agents.push((mu[0], policy.sigma, proj));
        }
        per_state.push(agents);
    }

    let normals: Vec<Normal<f64>> = per_state[0]
        .iter()
        .map(|&(_, sigma, _)| Normal::new(0.0, sigma).expect("sigma checked"))
        .collect();
    let mut act = vec![0.0; n];
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for k in 0..n_samples {
        let s = &states[k % states.len()];
        let agents = &per_state[k % states.len()];
        for (i, &(mu, _, _)) in agents.iter().enumerate() {
            act[i] = mu + normals[i].sample(rng);
        }
        let joint_q = match baseline {
            Lemma2Baseline::JointQ => Some(critic.q_value(s, &act)?),
            Lemma2Baseline::Counterfactual => None,
        };
        let mut x = 0.0;
        for (i, &(mu, sigma, proj)) in agents.iter().enumerate() {
            let b = match joint_q {
                Some(q) => q,
                None => {
                    let m = mask_agent(s, &act, width, i);
                    critic.q_value(&m.joint_obs, &m.joint_act)?
                }
            };
            x += (act[i] - mu) / (sigma * sigma) * proj * b;
        }
        sum += x;
        sum_sq += x * x;
    }
    let nf = n_samples as f64;
    let mean = sum / nf;
    let var = (sum_sq - nf * mean * mean) / (nf - 1.0);
    Ok(Lemma2Estimate {
        mean,
        stderr: (var.max(0.0) / nf).sqrt(),
        samples: n_samples,
    })
}
