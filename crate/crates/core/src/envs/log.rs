//! JSON-lines episode logs and bit-exact replay.
//!
//! One line per episode: the reset seed, the modeled policy index and every
//! step's observations, joint action and rewards. Replaying feeds the logged
//! actions back through a freshly reset simulator.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::{Env, EnvConfig, EnvKind, JointObs, StepOutcome};
use crate::error::{ClamError, Result};
use crate::rng::derived;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    /// Ego observation the action was chosen from.
    pub obs_ego: Vec<f64>,
    pub obs_modeled: Vec<Vec<f64>>,
    pub action_ego: usize,
    pub action_modeled: Vec<usize>,
    pub reward_ego: f64,
    pub reward_modeled: f64,
    pub done: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub env: EnvKind,
    pub env_config: EnvConfig,
    pub episode: u64,
    pub seed: u64,
    pub policy: usize,
    pub steps: Vec<StepRecord>,
}

impl EpisodeRecord {
    pub fn new(env: EnvKind, env_config: EnvConfig, episode: u64, seed: u64, policy: usize) -> Self {
        Self {
            env,
            env_config,
            episode,
            seed,
            policy,
            steps: Vec::new(),
        }
    }

    pub fn push(&mut self, obs: &JointObs, action_ego: usize, action_modeled: &[usize], out: &StepOutcome) {
        self.steps.push(StepRecord {
            obs_ego: obs.ego.clone(),
            obs_modeled: obs.modeled.clone(),
            action_ego,
            action_modeled: action_modeled.to_vec(),
            reward_ego: out.ego_reward,
            reward_modeled: out.modeled_reward,
            done: out.done,
        });
    }

    pub fn ego_return(&self) -> f64 {
        self.steps.iter().map(|s| s.reward_ego).sum()
    }
}

pub fn write_jsonl<W: Write>(mut w: W, records: &[EpisodeRecord]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_jsonl<R: BufRead>(r: R) -> Result<Vec<EpisodeRecord>> {
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayReport {
    pub episode: u64,
    pub steps: usize,
    /// First step whose observation, reward or done flag differed, if any.
    pub first_mismatch: Option<usize>,
    pub replayed_rewards: Vec<f64>,
}

impl ReplayReport {
    pub fn exact(&self) -> bool {
        self.first_mismatch.is_none()
    }
}

fn bits(v: &[f64]) -> Vec<u64> {
    v.iter().map(|x| x.to_bits()).collect()
}

fn same_obs(a: &JointObs, ego: &[f64], modeled: &[Vec<f64>]) -> bool {
    bits(&a.ego) == bits(ego)
        && a.modeled.len() == modeled.len()
        && a.modeled.iter().zip(modeled).all(|(x, y)| bits(x) == bits(y))
}

/// Re-simulates a logged episode and compares every value bit for bit.
pub fn replay(record: &EpisodeRecord) -> Result<ReplayReport> {
    let mut env = Env::new(record.env, &record.env_config)?;
    let mut obs = env.reset(&mut derived(record.seed))?;
    let mut first_mismatch = None;
    let mut rewards = Vec::with_capacity(record.steps.len());
    for (t, step) in record.steps.iter().enumerate() {
        if first_mismatch.is_none() && !same_obs(&obs, &step.obs_ego, &step.obs_modeled) {
            first_mismatch = Some(t);
        }
        let out = env
            .step(step.action_ego, &step.action_modeled)
            .map_err(|e| ClamError::Env(format!("replay step {t}: {e}")))?;
        rewards.push(out.ego_reward);
        let same = out.ego_reward.to_bits() == step.reward_ego.to_bits()
            && out.modeled_reward.to_bits() == step.reward_modeled.to_bits()
            && out.done == step.done;
        if first_mismatch.is_none() && !same {
            first_mismatch = Some(t);
        }
        obs = out.obs;
    }
    Ok(ReplayReport {
        episode: record.episode,
        steps: record.steps.len(),
        first_mismatch,
        replayed_rewards: rewards,
    })
}
