use std::collections::BTreeMap;

use ndiff::{AdamState, ParamStore};
use rand::RngCore;
use rand_chacha::ChaCha8Rng;

use super::config::TrainConfig;
use crate::envs::{env_spec, EnvSpec};
use crate::error::Result;
use crate::model::ClamModel;
use crate::ppo::{ActionSample, ActorCritic};
use crate::rng::{stream, Stream};

/// Per-component random streams of a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct Rngs {
    pub env: ChaCha8Rng,
    pub policy: ChaCha8Rng,
    pub augmentation: ChaCha8Rng,
    pub action: ChaCha8Rng,
    pub modeled: ChaCha8Rng,
    pub minibatch: ChaCha8Rng,
}

impl Rngs {
    pub fn new(seed: u64) -> Self {
        Self {
            env: stream(seed, Stream::Env),
            policy: stream(seed, Stream::PolicySampling),
            augmentation: stream(seed, Stream::Augmentation),
            action: stream(seed, Stream::Action),
            modeled: stream(seed, Stream::Modeled),
            minibatch: stream(seed, Stream::Minibatch),
        }
    }

    pub fn to_map(&self) -> BTreeMap<String, ChaCha8Rng> {
        [
            ("env", &self.env),
            ("policy", &self.policy),
            ("augmentation", &self.augmentation),
            ("action", &self.action),
            ("modeled", &self.modeled),
            ("minibatch", &self.minibatch),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v.clone()))
        .collect()
    }

    pub fn from_map(map: &BTreeMap<String, ChaCha8Rng>) -> Option<Self> {
        let get = |k: &str| map.get(k).cloned();
        Some(Self {
            env: get("env")?,
            policy: get("policy")?,
            augmentation: get("augmentation")?,
            action: get("action")?,
            modeled: get("modeled")?,
            minibatch: get("minibatch")?,
        })
    }
}

/// Everything a run owns besides its environment and buffers: networks,
/// EMA targets, optimizers, random streams and counters.
#[derive(Debug, Clone)]
pub struct Learner {
    pub config: TrainConfig,
    pub spec: EnvSpec,
    pub model: ClamModel,
    pub ac: ActorCritic,
    pub encoder: ParamStore,
    pub encoder_target: ParamStore,
    pub encoder_adam: AdamState,
    pub policy: ParamStore,
    pub policy_target: ParamStore,
    pub policy_adam: AdamState,
    pub rngs: Rngs,
    pub episode: u64,
    pub ppo_updates: u64,
    pub clam_updates: u64,
    pub summary: BTreeMap<String, f64>,
}

impl Learner {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let spec = env_spec(config.env, &config.env_config())?;
        let model = ClamModel::new(config.model.clone(), spec.ego_obs_dim)?;
        let ac = ActorCritic::new(spec.ego_obs_dim, model.embedding_dim(), config.ppo.hidden, spec.action_count);
        let mut init = stream(config.seed, Stream::Init);
        let encoder = model.init(&mut init)?;
        let policy = ac.init(&mut init)?;
        Ok(Self {
            encoder_adam: AdamState::new(&encoder, config.contrastive.lr),
            policy_adam: AdamState::new(&policy, config.ppo.lr),
            encoder_target: encoder.clone(),
            policy_target: policy.clone(),
            rngs: Rngs::new(config.seed),
            config,
            spec,
            model,
            ac,
            encoder,
            policy,
            episode: 0,
            ppo_updates: 0,
            clam_updates: 0,
            summary: BTreeMap::new(),
        })
    }

    /// Conditioning vector for the actor-critic: the target-encoder embedding
    /// of the trajectory so far, or zeros without agent modeling.
    pub fn embedding(&self, traj: &[Vec<f64>]) -> Result<Vec<f64>> {
        if !self.config.variant.models_agent() {
            return Ok(vec![0.0; self.model.embedding_dim()]);
        }
        let max = self.model.config().max_len;
        self.model.embed_trajectory(&self.encoder_target, &traj[..traj.len().min(max)])
    }

    pub fn act(&self, obs: &[f64], c: &[f64], rng: &mut dyn RngCore) -> Result<ActionSample> {
        self.ac.act(&self.policy, obs, c, rng)
    }
}
