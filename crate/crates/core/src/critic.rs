//! Centralized action-value critic over joint observations and actions.

use rand::Rng;

use crate::error::{MacaError, Result};
use crate::nn::{
    self, Activation, Checkpoint, DenseNet, LayerSpec, NetRecord, OptState, Tape, UpdateOutcome,
    CHECKPOINT_FORMAT_VERSION,
};

pub const PROJECTION_WIDTH: usize = 32;
pub const HIDDEN_WIDTH: usize = 256;

/// Anything that scores a joint observation-action pair.
///
/// Credit assignment only needs this interface, so synthetic and
/// instrumented critics can stand in for the network.
pub trait JointCritic {
    fn n_agents(&self) -> usize;

    /// Width of one agent's observation block inside the joint observation.
    fn agent_obs_width(&self) -> usize;

    fn q_value(&self, joint_obs: &[f64], joint_act: &[f64]) -> Result<f64>;
}

/// Q(s, a): the joint observation and joint action are projected to 32
/// features each, concatenated, and passed through two 256-wide ReLU layers
/// and a linear scalar head.
#[derive(Clone, Debug, PartialEq)]
pub struct CriticNet {
    n_agents: usize,
    obs_width: usize,
    pub obs_proj: DenseNet,
    pub act_proj: DenseNet,
    pub trunk: DenseNet,
}

pub struct CriticTape {
    obs: Tape,
    act: Tape,
    trunk: Tape,
}

/// Parameter gradients for the three sub-networks.
#[derive(Clone, Debug, PartialEq)]
pub struct CriticGrads {
    pub obs_proj: Vec<f64>,
    pub act_proj: Vec<f64>,
    pub trunk: Vec<f64>,
}

impl CriticGrads {
    pub fn zeros_like(critic: &CriticNet) -> Self {
        Self {
            obs_proj: vec![0.0; critic.obs_proj.param_count()],
            act_proj: vec![0.0; critic.act_proj.param_count()],
            trunk: vec![0.0; critic.trunk.param_count()],
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.obs_proj.iter().chain(&self.act_proj).chain(&self.trunk)
    }

    pub fn scale(&mut self, s: f64) {
        for g in self
            .obs_proj
            .iter_mut()
            .chain(self.act_proj.iter_mut())
            .chain(self.trunk.iter_mut())
        {
            *g *= s;
        }
    }
}

fn architecture(n_agents: usize, obs_width: usize) -> [Vec<LayerSpec>; 3] {
    [
        vec![LayerSpec::new(n_agents * obs_width, PROJECTION_WIDTH, Activation::Identity)],
        vec![LayerSpec::new(n_agents, PROJECTION_WIDTH, Activation::Identity)],
        vec![
            LayerSpec::new(2 * PROJECTION_WIDTH, HIDDEN_WIDTH, Activation::Relu),
            LayerSpec::new(HIDDEN_WIDTH, HIDDEN_WIDTH, Activation::Relu),
            LayerSpec::new(HIDDEN_WIDTH, 1, Activation::Identity),
        ],
    ]
}

impl CriticNet {
    pub fn new<R: Rng + ?Sized>(n_agents: usize, obs_width: usize, rng: &mut R) -> Result<Self> {
        let [o, a, t] = architecture(n_agents, obs_width);
        Ok(Self {
            n_agents,
            obs_width,
            obs_proj: DenseNet::init(o, rng)?,
            act_proj: DenseNet::init(a, rng)?,
            trunk: DenseNet::init(t, rng)?,
        })
    }

    pub fn zeroed(n_agents: usize, obs_width: usize) -> Result<Self> {
        let [o, a, t] = architecture(n_agents, obs_width);
        Ok(Self {
            n_agents,
            obs_width,
            obs_proj: DenseNet::zeros(o)?,
            act_proj: DenseNet::zeros(a)?,
            trunk: DenseNet::zeros(t)?,
        })
    }

    fn check_widths(&self, joint_obs: &[f64], joint_act: &[f64]) -> Result<()> {
        if joint_obs.len() != self.n_agents * self.obs_width {
            return Err(MacaError::WidthMismatch {
                what: "joint observation",
                expected: self.n_agents * self.obs_width,
                got: joint_obs.len(),
            });
        }
        if joint_act.len() != self.n_agents {
            return Err(MacaError::WidthMismatch {
                what: "joint action",
                expected: self.n_agents,
                got: joint_act.len(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, joint_obs: &[f64], joint_act: &[f64]) -> Result<(f64, CriticTape)> {
        self.check_widths(joint_obs, joint_act)?;
        let (po, obs) = self.obs_proj.forward(joint_obs)?;
        let (pa, act) = self.act_proj.forward(joint_act)?;
        let mut features = po;
        features.extend_from_slice(&pa);
        let (q, trunk) = self.trunk.forward(&features)?;
        Ok((q[0], CriticTape { obs, act, trunk }))
    }

    /// Adds `dq * dQ/dparams` into `grads`.
    pub fn backward_accumulate(&self, tape: &CriticTape, dq: f64, grads: &mut CriticGrads) -> Result<()> {
        let dfeat = self.trunk.backward_accumulate(&tape.trunk, &[dq], &mut grads.trunk)?;
        let (dpo, dpa) = dfeat.split_at(PROJECTION_WIDTH);
        self.obs_proj.backward_accumulate(&tape.obs, dpo, &mut grads.obs_proj)?;
        self.act_proj.backward_accumulate(&tape.act, dpa, &mut grads.act_proj)?;
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.obs_proj.param_count() + self.act_proj.param_count() + self.trunk.param_count()
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            format_version: CHECKPOINT_FORMAT_VERSION,
            role: "critic".into(),
            agent_id: None,
            sigma: None,
            networks: vec![
                NetRecord::from_net("obs_proj", &self.obs_proj),
                NetRecord::from_net("act_proj", &self.act_proj),
                NetRecord::from_net("trunk", &self.trunk),
            ],
        }
    }

    /// Rebuilds a critic and checks it against the expected agent count and
    /// observation width.
    pub fn from_checkpoint(ck: &Checkpoint, n_agents: usize, obs_width: usize) -> Result<Self> {
        if ck.role != "critic" {
            return Err(MacaError::Checkpoint(format!("expected role \"critic\", found {:?}", ck.role)));
        }
        let critic = Self {
            n_agents,
            obs_width,
            obs_proj: ck.network("obs_proj")?,
            act_proj: ck.network("act_proj")?,
            trunk: ck.network("trunk")?,
        };
        let expected = Self::zeroed(n_agents, obs_width)?;
        if !(critic.obs_proj.same_architecture(&expected.obs_proj)
            && critic.act_proj.same_architecture(&expected.act_proj)
            && critic.trunk.same_architecture(&expected.trunk))
        {
            return Err(MacaError::ArchitectureMismatch(format!(
                "critic checkpoint does not fit {n_agents} agents with observation width {obs_width}"
            )));
        }
        Ok(critic)
    }
}

impl JointCritic for CriticNet {
    fn n_agents(&self) -> usize {
        self.n_agents
    }

    fn agent_obs_width(&self) -> usize {
        self.obs_width
    }

    fn q_value(&self, joint_obs: &[f64], joint_act: &[f64]) -> Result<f64> {
        self.check_widths(joint_obs, joint_act)?;
        let mut features = self.obs_proj.predict(joint_obs)?;
        features.extend(self.act_proj.predict(joint_act)?);
        Ok(self.trunk.predict(&features)?[0])
    }
}

/// Copies every parameter of `critic` into `target`.
pub fn sync_target(critic: &CriticNet, target: &mut CriticNet) -> Result<()> {
    nn::sync_target(&critic.obs_proj, &mut target.obs_proj)?;
    nn::sync_target(&critic.act_proj, &mut target.act_proj)?;
    nn::sync_target(&critic.trunk, &mut target.trunk)
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CriticOpt {
    pub obs_proj: OptState,
    pub act_proj: OptState,
    pub trunk: OptState,
}

impl CriticOpt {
    pub fn adam(critic: &CriticNet, learning_rate: f64) -> Self {
        Self {
            obs_proj: OptState::adam(critic.obs_proj.param_count(), learning_rate),
            act_proj: OptState::adam(critic.act_proj.param_count(), learning_rate),
            trunk: OptState::adam(critic.trunk.param_count(), learning_rate),
        }
    }
}

/// Applies one Adam step to all sub-networks, or none if any gradient is
/// non-finite.
pub fn critic_update(critic: &mut CriticNet, grads: &CriticGrads, opt: &mut CriticOpt) -> Result<UpdateOutcome> {
    if grads.iter().any(|g| !g.is_finite()) {
        let msg = "non-finite critic gradient; update skipped".to_string();
        log::warn!("{msg}");
        return Ok(UpdateOutcome::Skipped(msg));
    }
    nn::optimizer_update(&mut critic.obs_proj, &grads.obs_proj, &mut opt.obs_proj)?;
    nn::optimizer_update(&mut critic.act_proj, &grads.act_proj, &mut opt.act_proj)?;
    nn::optimizer_update(&mut critic.trunk, &grads.trunk, &mut opt.trunk)
}

/// Bootstrapped regression target for one transition.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TdTarget {
    pub y: f64,
}

/// `y = r` at terminal steps, else `y = r + gamma * Q_target(s', a')`.
pub fn td_target(
    reward: f64,
    next_obs: &[f64],
    next_act: &[f64],
    done: bool,
    gamma: f64,
    target: &dyn JointCritic,
) -> Result<TdTarget> {
    if !(0.0..1.0).contains(&gamma) {
        return Err(MacaError::InvalidConfig(format!("gamma {gamma} outside [0, 1)")));
    }
    let y = if done || gamma == 0.0 {
        reward
    } else {
        reward + gamma * target.q_value(next_obs, next_act)?
    };
    if !y.is_finite() {
        return Err(MacaError::NonFinite(format!("TD target {y}")));
    }
    Ok(TdTarget { y })
}

/// Squared TD error; the target is treated as a constant.
pub fn critic_loss(y: f64, q: f64) -> f64 {
    (y - q) * (y - q)
}

/// Derivative of [`critic_loss`] with respect to `q`.
pub fn critic_loss_grad(y: f64, q: f64) -> f64 {
    -2.0 * (y - q)
}

/// Mean squared TD error over a minibatch.
pub fn batch_critic_loss(targets: &[f64], qs: &[f64]) -> f64 {
    targets.iter().zip(qs).map(|(y, q)| critic_loss(*y, *q)).sum::<f64>() / targets.len() as f64
}
