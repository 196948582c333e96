//! Two-team partially observable games: level-based foraging and
//! predator-prey, plus the fixed policy sets that drive the modeled agents.
//!
//! Every simulator is a pure function of its state and the joint action;
//! randomness only enters through [`Env::reset`].

pub mod lbf;
pub mod log;
pub mod lbf_policies;
pub mod policy;
pub mod pp;
pub mod pp_policies;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{ClamError, Result};
pub use lbf::{Lbf, LbfConfig, LbfState};
pub use policy::{sample_modeled_policy, FixedPolicy, PolicySet};
pub use pp::{PpConfig, PpState, PredatorPrey};

/// Hard episode cap shared by both games.
pub const MAX_EPISODE_STEPS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvKind {
    Lbf,
    Pp,
}

impl EnvKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EnvKind::Lbf => "lbf",
            EnvKind::Pp => "pp",
        }
    }
}

impl std::str::FromStr for EnvKind {
    type Err = ClamError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lbf" => Ok(EnvKind::Lbf),
            "pp" => Ok(EnvKind::Pp),
            other => Err(ClamError::Config(format!("unknown environment `{other}` (expected lbf or pp)"))),
        }
    }
}

impl std::fmt::Display for EnvKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Static description of a game from the ego agent's point of view.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub kind: EnvKind,
    /// Ego plus modeled agents.
    pub agent_count: usize,
    /// Number of agents driven by the sampled fixed policy.
    pub modeled_agents: usize,
    pub ego_obs_dim: usize,
    pub modeled_obs_dim: usize,
    /// Per agent.
    pub action_count: usize,
    pub max_episode_steps: usize,
    pub reward_semantics: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    #[serde(default)]
    pub lbf: LbfConfig,
    #[serde(default)]
    pub pp: PpConfig,
}

/// Observations of every agent after reset or step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointObs {
    pub ego: Vec<f64>,
    /// One vector per modeled agent.
    pub modeled: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub obs: JointObs,
    pub ego_reward: f64,
    /// Summed over modeled agents.
    pub modeled_reward: f64,
    pub done: bool,
}

impl StepOutcome {
    /// Ego plus modeled rewards; the cooperative team return in foraging.
    pub fn team_reward(&self) -> f64 {
        self.ego_reward + self.modeled_reward
    }
}

/// One environment step as seen by the learner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub obs_ego: Vec<f64>,
    pub obs_modeled: Vec<Vec<f64>>,
    pub action_ego: usize,
    pub action_modeled: Vec<usize>,
    pub reward: f64,
    pub reward_modeled: f64,
    pub done: bool,
}

#[derive(Debug, Clone)]
pub enum Env {
    Lbf(Lbf),
    Pp(PredatorPrey),
}

impl Env {
    pub fn new(kind: EnvKind, config: &EnvConfig) -> Result<Self> {
        Ok(match kind {
            EnvKind::Lbf => Env::Lbf(Lbf::new(config.lbf.clone())?),
            EnvKind::Pp => Env::Pp(PredatorPrey::new(config.pp.clone())?),
        })
    }

    pub fn kind(&self) -> EnvKind {
        match self {
            Env::Lbf(_) => EnvKind::Lbf,
            Env::Pp(_) => EnvKind::Pp,
        }
    }

    pub fn spec(&self) -> EnvSpec {
        match self {
            Env::Lbf(e) => e.spec(),
            Env::Pp(e) => e.spec(),
        }
    }

    pub fn reset(&mut self, rng: &mut dyn RngCore) -> Result<JointObs> {
        match self {
            Env::Lbf(e) => e.reset(rng),
            Env::Pp(e) => e.reset(rng),
        }
    }

    pub fn step(&mut self, ego_action: usize, modeled_actions: &[usize]) -> Result<StepOutcome> {
        let spec = self.spec();
        if ego_action >= spec.action_count {
            return Err(ClamError::Env(format!("ego action {ego_action} out of range")));
        }
        if modeled_actions.len() != spec.modeled_agents || modeled_actions.iter().any(|&a| a >= spec.action_count) {
            return Err(ClamError::Env(format!("invalid modeled actions {modeled_actions:?}")));
        }
        match self {
            Env::Lbf(e) => e.step(ego_action, modeled_actions[0]),
            Env::Pp(e) => e.step(ego_action, modeled_actions),
        }
    }

    pub fn is_done(&self) -> bool {
        match self {
            Env::Lbf(e) => e.is_done(),
            Env::Pp(e) => e.is_done(),
        }
    }

    pub fn step_count(&self) -> usize {
        match self {
            Env::Lbf(e) => e.state().map_or(0, |s| s.step_count),
            Env::Pp(e) => e.state().map_or(0, |s| s.step_count),
        }
    }
}

pub fn env_spec(kind: EnvKind, config: &EnvConfig) -> Result<EnvSpec> {
    Ok(Env::new(kind, config)?.spec())
}
