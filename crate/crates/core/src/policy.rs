//! Per-agent actors.
//!
//! Each actor is a deterministic network whose tanh output is read as the
//! mean of a fixed-width Gaussian. The Gaussian supplies the log-density
//! needed by the policy gradient; at execution time the mean is the action.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::critic::HIDDEN_WIDTH;
use crate::error::{MacaError, Result};
use crate::nn::{self, Activation, Checkpoint, DenseNet, LayerSpec, NetRecord, OptState, UpdateOutcome, CHECKPOINT_FORMAT_VERSION};

pub const DEFAULT_SIGMA: f64 = 0.1;

#[derive(Clone, Debug, PartialEq)]
pub struct GaussianPolicy {
    pub actor: DenseNet,
    pub sigma: f64,
}

/// An action drawn by [`GaussianPolicy::act`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ActionSample {
    /// Executed action, clamped to `[-1, 1]`.
    pub action: f64,
    /// Pre-clamp sample, used for the log-density.
    pub raw: f64,
    pub mean: f64,
}

fn actor_layers(obs_width: usize) -> Vec<LayerSpec> {
    vec![
        LayerSpec::new(obs_width, HIDDEN_WIDTH, Activation::Relu),
        LayerSpec::new(HIDDEN_WIDTH, HIDDEN_WIDTH, Activation::Relu),
        LayerSpec::new(HIDDEN_WIDTH, 1, Activation::Tanh),
    ]
}

impl GaussianPolicy {
    pub fn new<R: Rng + ?Sized>(obs_width: usize, sigma: f64, rng: &mut R) -> Result<Self> {
        check_sigma(sigma)?;
        Ok(Self {
            actor: DenseNet::init(actor_layers(obs_width), rng)?,
            sigma,
        })
    }

    pub fn obs_width(&self) -> usize {
        self.actor.in_width()
    }

    pub fn mean(&self, obs: &[f64]) -> Result<f64> {
        Ok(self.actor.predict(obs)?[0])
    }

    /// Greedy mean, plus `N(0, sigma)` noise with probability `epsilon` when
    /// exploring. The executed action is clamped to `[-1, 1]`.
    pub fn act<R: Rng + ?Sized>(&self, obs: &[f64], explore: bool, epsilon: f64, rng: &mut R) -> Result<ActionSample> {
        if !(0.0..=1.0).contains(&epsilon) {
            return Err(MacaError::InvalidConfig(format!("epsilon {epsilon} outside [0, 1]")));
        }
        let mean = self.mean(obs)?;
        let mut raw = mean;
        if explore && epsilon > 0.0 && rng.random::<f64>() < epsilon {
            let noise = Normal::new(0.0, self.sigma).expect("sigma validated at construction");
            raw += noise.sample(rng);
        }
        Ok(ActionSample {
            action: raw.clamp(-1.0, 1.0),
            raw,
            mean,
        })
    }

    pub fn log_prob(&self, obs: &[f64], action: f64) -> Result<f64> {
        check_sigma(self.sigma)?;
        Ok(gaussian_log_density(action, self.mean(obs)?, self.sigma))
    }

    /// `d log_prob / d theta`, the score function.
    pub fn score(&self, obs: &[f64], action: f64) -> Result<Vec<f64>> {
        let mut grads = vec![0.0; self.actor.param_count()];
        self.accumulate_score(obs, action, 1.0, &mut grads)?;
        Ok(grads)
    }

    /// Adds `scale * d log_prob / d theta` into `grads` and returns the
    /// log-probability.
    pub fn accumulate_score(&self, obs: &[f64], action: f64, scale: f64, grads: &mut [f64]) -> Result<f64> {
        check_sigma(self.sigma)?;
        let (mu, tape) = self.actor.forward(obs)?;
        let mu = mu[0];
        let dlogp_dmu = (action - mu) / (self.sigma * self.sigma);
        self.actor.backward_accumulate(&tape, &[scale * dlogp_dmu], grads)?;
        Ok(gaussian_log_density(action, mu, self.sigma))
    }

    /// Policy-gradient estimate `score(obs, action) * advantage` (ascent direction).
    pub fn actor_gradient(&self, obs: &[f64], action: f64, advantage: f64) -> Result<Vec<f64>> {
        if !advantage.is_finite() {
            return Err(MacaError::NonFinite(format!("advantage {advantage}")));
        }
        let mut grads = vec![0.0; self.actor.param_count()];
        self.accumulate_score(obs, action, advantage, &mut grads)?;
        Ok(grads)
    }

    /// Mean of [`actor_gradient`](Self::actor_gradient) over `(obs, action, advantage)` triples.
    pub fn batch_actor_gradient(&self, batch: &[(&[f64], f64, f64)]) -> Result<Vec<f64>> {
        let mut grads = vec![0.0; self.actor.param_count()];
        if batch.is_empty() {
            return Ok(grads);
        }
        let scale = 1.0 / batch.len() as f64;
        for &(obs, action, adv) in batch {
            if !adv.is_finite() {
                return Err(MacaError::NonFinite(format!("advantage {adv}")));
            }
            self.accumulate_score(obs, action, adv * scale, &mut grads)?;
        }
        Ok(grads)
    }

    pub fn checkpoint(&self, agent_id: usize) -> Checkpoint {
        Checkpoint {
            format_version: CHECKPOINT_FORMAT_VERSION,
            role: "actor".into(),
            agent_id: Some(agent_id),
            sigma: Some(self.sigma),
            networks: vec![NetRecord::from_net("actor", &self.actor)],
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint, obs_width: usize) -> Result<Self> {
        if ck.role != "actor" {
            return Err(MacaError::Checkpoint(format!("expected role \"actor\", found {:?}", ck.role)));
        }
        let actor = ck.network("actor")?;
        if actor.layers() != actor_layers(obs_width).as_slice() {
            return Err(MacaError::ArchitectureMismatch(format!(
                "actor checkpoint does not take observation width {obs_width}"
            )));
        }
        let sigma = ck.sigma.unwrap_or(DEFAULT_SIGMA);
        check_sigma(sigma)?;
        Ok(Self { actor, sigma })
    }
}

fn check_sigma(sigma: f64) -> Result<()> {
    if sigma.is_finite() && sigma > 0.0 {
        Ok(())
    } else {
        Err(MacaError::DegeneratePolicy(format!("sigma must be > 0, got {sigma}")))
    }
}

pub fn gaussian_log_density(x: f64, mean: f64, sigma: f64) -> f64 {
    let z = (x - mean) / sigma;
    -0.5 * z * z - (sigma * (2.0 * std::f64::consts::PI).sqrt()).ln()
}

/// Actors for all agents, optionally sharing one set of parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ActorSet {
    policies: Vec<GaussianPolicy>,
    n_agents: usize,
    shared: bool,
}

impl ActorSet {
    pub fn new<R: Rng + ?Sized>(n_agents: usize, obs_width: usize, sigma: f64, shared: bool, rng: &mut R) -> Result<Self> {
        let count = if shared { 1 } else { n_agents };
        let policies = (0..count)
            .map(|_| GaussianPolicy::new(obs_width, sigma, rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            policies,
            n_agents,
            shared,
        })
    }

    pub fn from_policies(policies: Vec<GaussianPolicy>) -> Self {
        let n_agents = policies.len();
        Self {
            policies,
            n_agents,
            shared: false,
        }
    }

    /// One parameter set used by all `n_agents` agents.
    pub fn shared(policy: GaussianPolicy, n_agents: usize) -> Self {
        Self {
            policies: vec![policy],
            n_agents,
            shared: true,
        }
    }

    pub fn n_agents(&self) -> usize {
        self.n_agents
    }

    pub fn is_shared(&self) -> bool {
        self.shared
    }

    pub fn policy(&self, agent: usize) -> &GaussianPolicy {
        &self.policies[if self.shared { 0 } else { agent }]
    }

    /// Distinct parameter sets; one when shared, one per agent otherwise.
    pub fn policies(&self) -> &[GaussianPolicy] {
        &self.policies
    }

    pub fn policies_mut(&mut self) -> &mut [GaussianPolicy] {
        &mut self.policies
    }

    /// Index into [`policies`](Self::policies) used by `agent`.
    pub fn slot_of(&self, agent: usize) -> usize {
        if self.shared {
            0
        } else {
            agent
        }
    }

    pub fn checkpoints(&self) -> Vec<Checkpoint> {
        (0..self.n_agents).map(|i| self.policy(i).checkpoint(i)).collect()
    }
}

/// Adam ascent step on a policy-gradient estimate.
pub fn actor_update(policy: &mut GaussianPolicy, ascent_grad: &[f64], opt: &mut OptState) -> Result<UpdateOutcome> {
    let descent: Vec<f64> = ascent_grad.iter().map(|g| -g).collect();
    nn::optimizer_update(&mut policy.actor, &descent, opt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn policy() -> GaussianPolicy {
        GaussianPolicy::new(6, 0.1, &mut ChaCha8Rng::seed_from_u64(21)).unwrap()
    }

    const OBS: [f64; 6] = [0.2, 0.5, 1.0, 0.0, 1.0, 0.0];

    #[test]
    fn greedy_action_is_mean() {
        let p = policy();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mu = p.mean(&OBS).unwrap();
        assert!(mu > -1.0 && mu < 1.0);
        assert_eq!(p.act(&OBS, false, 1.0, &mut rng).unwrap().action, mu);
        assert_eq!(p.act(&OBS, true, 0.0, &mut rng).unwrap().action, mu);
    }

    #[test]
    fn full_exploration_adds_seeded_noise() {
        let p = policy();
        let mu = p.mean(&OBS).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = p.act(&OBS, true, 1.0, &mut rng).unwrap();
        let mut oracle = ChaCha8Rng::seed_from_u64(5);
        let _gate: f64 = oracle.random();
        let n = Normal::new(0.0, 0.1).unwrap().sample(&mut oracle);
        assert_eq!(s.raw, mu + n);
        assert_eq!(s.action, (mu + n).clamp(-1.0, 1.0));
    }

    #[test]
    fn log_prob_values() {
        let p = policy();
        let mu = p.mean(&OBS).unwrap();
        let peak = -(0.1 * (2.0 * std::f64::consts::PI).sqrt()).ln();
        assert!((p.log_prob(&OBS, mu).unwrap() - peak).abs() < 1e-12);
        assert!((p.log_prob(&OBS, mu + 0.1).unwrap() - (peak - 0.5)).abs() < 1e-12);
    }

    #[test]
    fn score_matches_finite_differences() {
        let p = policy();
        let a = p.mean(&OBS).unwrap() + 0.07;
        let g = p.score(&OBS, a).unwrap();
        let h = 1e-5;
        let mut probe = p.clone();
        let mut checked = 0;
        for k in (0..p.actor.param_count()).step_by(97) {
            let orig = probe.actor.params()[k];
            probe.actor.params_mut()[k] = orig + h;
            let up = probe.log_prob(&OBS, a).unwrap();
            probe.actor.params_mut()[k] = orig - h;
            let down = probe.log_prob(&OBS, a).unwrap();
            probe.actor.params_mut()[k] = orig;
            let fd = (up - down) / (2.0 * h);
            if fd.abs().max(g[k].abs()) < 1e-7 {
                continue;
            }
            let err = (fd - g[k]).abs() / fd.abs().max(g[k].abs());
            assert!(err < 1e-4, "param {k}: {fd} vs {}", g[k]);
            checked += 1;
        }
        assert!(checked > 50);
    }

    #[test]
    fn actor_gradient_linearity() {
        let p = policy();
        let a = 0.3;
        assert!(p.actor_gradient(&OBS, a, 0.0).unwrap().iter().all(|g| *g == 0.0));
        let plus = p.actor_gradient(&OBS, a, 2.0).unwrap();
        let minus = p.actor_gradient(&OBS, a, -2.0).unwrap();
        assert!(plus.iter().zip(&minus).all(|(x, y)| *x == -*y));

        let obs2 = [0.7, 0.1, 0.0, 1.0, 1.0, 0.0];
        let g1 = p.actor_gradient(&OBS, a, 1.5).unwrap();
        let g2 = p.actor_gradient(&obs2, -0.2, -0.5).unwrap();
        let batch = p.batch_actor_gradient(&[(&OBS, a, 1.5), (&obs2, -0.2, -0.5)]).unwrap();
        for k in 0..batch.len() {
            assert!((batch[k] - 0.5 * (g1[k] + g2[k])).abs() < 1e-12);
        }
        assert!(p.actor_gradient(&OBS, a, f64::NAN).is_err());
    }

    #[test]
    fn degenerate_sigma_rejected() {
        assert!(GaussianPolicy::new(3, 0.0, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }

    #[test]
    fn shared_actor_set_maps_every_agent_to_one_policy() {
        let set = ActorSet::new(3, 6, 0.1, true, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(set.policies().len(), 1);
        assert_eq!(set.policy(2), set.policy(0));
        let own = ActorSet::new(3, 6, 0.1, false, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(own.policies().len(), 3);
        assert_ne!(own.policy(1), own.policy(0));
    }

    #[test]
    fn checkpoint_round_trip() {
        let p = policy();
        let back = GaussianPolicy::from_checkpoint(&p.checkpoint(2), 6).unwrap();
        assert_eq!(back, p);
        assert!(GaussianPolicy::from_checkpoint(&p.checkpoint(2), 7).is_err());
    }
}
