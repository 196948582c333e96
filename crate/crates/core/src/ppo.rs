//! Actor-critic conditioned on the ego observation and a policy embedding,
//! trained with the clipped PPO objective, an entropy bonus and a squared
//! value regression.

use ndiff::{AdamState, Graph, ParamStore, Tensor, Var};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{ClamError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PpoConfig {
    pub clip: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub epochs: usize,
    pub minibatch_size: usize,
    pub lr: f64,
    pub hidden: usize,
    pub normalize_advantages: bool,
    /// Global gradient-norm ceiling; non-positive disables clipping.
    pub max_grad_norm: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            clip: 0.2,
            entropy_coef: 0.01,
            value_coef: 0.5,
            gamma: 0.99,
            lambda: 0.95,
            epochs: 4,
            minibatch_size: 256,
            lr: 3e-4,
            hidden: 128,
            normalize_advantages: true,
            max_grad_norm: 0.5,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(ClamError::Config(m.to_string()));
        if !(self.clip > 0.0) {
            return bad("clip must be positive");
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad("gamma must lie in (0, 1)");
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return bad("lambda must lie in [0, 1]");
        }
        if self.epochs == 0 || self.minibatch_size == 0 || self.hidden == 0 {
            return bad("epochs, minibatch size and hidden width must be positive");
        }
        if !(self.lr > 0.0) {
            return bad("learning rate must be positive");
        }
        Ok(())
    }
}

/// Shapes of the actor and critic networks; parameters live in a
/// [`ParamStore`] under `actor.*` and `critic.*`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ActorCritic {
    pub obs_dim: usize,
    pub emb_dim: usize,
    pub hidden: usize,
    pub actions: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActionSample {
    pub action: usize,
    pub log_prob: f64,
    pub value: f64,
}

pub struct Heads {
    pub logits: Var,
    pub values: Var,
}

impl ActorCritic {
    pub fn new(obs_dim: usize, emb_dim: usize, hidden: usize, actions: usize) -> Self {
        Self {
            obs_dim,
            emb_dim,
            hidden,
            actions,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.obs_dim + self.emb_dim
    }

    /// Hidden layers use `1/sqrt(fan_in)` Gaussians; the policy output starts
    /// near zero so the initial policy is close to uniform.
    pub fn init(&self, rng: &mut dyn RngCore) -> Result<ParamStore> {
        let mut s = ParamStore::new();
        let n = self.input_dim();
        let h = self.hidden;
        for net in ["actor", "critic"] {
            s.insert_normal(format!("{net}.l1.w"), n, h, 1.0 / (n as f64).sqrt(), rng)?;
            s.insert_constant(format!("{net}.l1.b"), 1, h, 0.0)?;
            s.insert_normal(format!("{net}.l2.w"), h, h, 1.0 / (h as f64).sqrt(), rng)?;
            s.insert_constant(format!("{net}.l2.b"), 1, h, 0.0)?;
        }
        s.insert_normal("actor.out.w", h, self.actions, 0.01, rng)?;
        s.insert_constant("actor.out.b", 1, self.actions, 0.0)?;
        s.insert_normal("critic.out.w", h, 1, 1.0 / (h as f64).sqrt(), rng)?;
        s.insert_constant("critic.out.b", 1, 1, 0.0)?;
        Ok(s)
    }

    fn mlp(&self, g: &mut Graph, store: &ParamStore, net: &str, x: Var) -> Result<Var> {
        let mut h = x;
        for layer in ["l1", "l2", "out"] {
            let w = g.param(store, &format!("{net}.{layer}.w"))?;
            let b = g.param(store, &format!("{net}.{layer}.b"))?;
            let xw = g.matmul(h, w)?;
            h = g.add_row(xw, b)?;
            if layer != "out" {
                h = g.tanh(h);
            }
        }
        Ok(h)
    }

    /// Logits (B x actions) and values (B x 1) for input rows `[obs, c]`.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, input: Var) -> Result<Heads> {
        Ok(Heads {
            logits: self.mlp(g, store, "actor", input)?,
            values: self.mlp(g, store, "critic", input)?,
        })
    }

    pub fn input_row(&self, obs: &[f64], c: &[f64]) -> Result<Vec<f64>> {
        if obs.len() != self.obs_dim || c.len() != self.emb_dim {
            return Err(ClamError::Config(format!(
                "actor-critic expects {}+{} inputs, got {}+{}",
                self.obs_dim,
                self.emb_dim,
                obs.len(),
                c.len()
            )));
        }
        let mut row = obs.to_vec();
        row.extend_from_slice(c);
        Ok(row)
    }

    /// Action probabilities and value for one input.
    pub fn evaluate(&self, store: &ParamStore, obs: &[f64], c: &[f64]) -> Result<(Vec<f64>, f64)> {
        let mut g = Graph::inference();
        let x = g.constant(Tensor::row(&self.input_row(obs, c)?));
        let heads = self.forward(&mut g, store, x)?;
        let logits = &g.value(heads.logits).data;
        if logits.iter().any(|x| !x.is_finite()) {
            return Err(ClamError::NonFiniteLogits);
        }
        let probs = g.row_softmax(heads.logits)?;
        Ok((g.value(probs).data.clone(), g.value(heads.values).item()))
    }

    /// Samples an action from the categorical policy.
    pub fn act(&self, store: &ParamStore, obs: &[f64], c: &[f64], rng: &mut dyn RngCore) -> Result<ActionSample> {
        let (probs, value) = self.evaluate(store, obs, c)?;
        let dist = WeightedIndex::new(&probs).map_err(|_| ClamError::NonFiniteLogits)?;
        let action = dist.sample(rng);
        Ok(ActionSample {
            action,
            log_prob: probs[action].ln(),
            value,
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RolloutBuffer {
    /// Network inputs `[obs, c]`; the embedding is a plain copy.
    pub inputs: Vec<Vec<f64>>,
    pub actions: Vec<usize>,
    pub log_probs: Vec<f64>,
    pub rewards: Vec<f64>,
    pub values: Vec<f64>,
    pub dones: Vec<bool>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl RolloutBuffer {
    pub fn push(&mut self, input: Vec<f64>, sample: ActionSample, reward: f64, done: bool) {
        self.inputs.push(input);
        self.actions.push(sample.action);
        self.log_probs.push(sample.log_prob);
        self.values.push(sample.value);
        self.rewards.push(reward);
        self.dones.push(done);
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn clear(&mut self) {
        *self = Self::default();
    }

    /// Fills advantages and returns; the rollout must end on a finished episode.
    pub fn finish(&mut self, gamma: f64, lambda: f64) {
        let (a, r) = compute_gae(&self.rewards, &self.values, &self.dones, 0.0, gamma, lambda);
        self.advantages = a;
        self.returns = r;
    }
}

/// Generalized advantage estimation; `bootstrap` is the value after the last step.
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    bootstrap: f64,
    gamma: f64,
    lambda: f64,
) -> (Vec<f64>, Vec<f64>) {
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut next_adv = 0.0;
    let mut next_value = bootstrap;
    for t in (0..n).rev() {
        let live = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * next_value * live - values[t];
        adv[t] = delta + gamma * lambda * live * next_adv;
        next_adv = adv[t];
        next_value = values[t];
    }
    let ret = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, ret)
}

/// Rescales to mean 0 and standard deviation 1 (population std, guarded).
pub fn normalize_advantages(adv: &mut [f64]) {
    if adv.is_empty() {
        return;
    }
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let var = adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt().max(1e-8);
    adv.iter_mut().for_each(|a| *a = (*a - mean) / std);
}

/// Scalar pieces of the PPO loss for one minibatch.
pub struct PpoLoss {
    pub total: Var,
    pub policy: Var,
    pub value: Var,
    pub entropy: Var,
}

/// Minibatch view: inputs, actions, old log-probs, advantages, returns.
pub struct PpoBatch<'a> {
    pub inputs: &'a [Vec<f64>],
    pub actions: &'a [usize],
    pub old_log_probs: &'a [f64],
    pub advantages: &'a [f64],
    pub returns: &'a [f64],
}

pub fn ppo_loss(ac: &ActorCritic, g: &mut Graph, store: &ParamStore, b: &PpoBatch, cfg: &PpoConfig) -> Result<PpoLoss> {
    let n = b.inputs.len();
    if n == 0 {
        return Err(ClamError::Empty("rollout"));
    }
    let column = |v: &[f64]| Tensor::matrix(v.len(), 1, v.to_vec());
    let x = g.constant(Tensor::from_rows(b.inputs)?);
    let heads = ac.forward(g, store, x)?;
    let logp = g.row_log_softmax(heads.logits)?;
    let logp_a = g.gather(logp, b.actions)?;
    let old = g.constant(column(b.old_log_probs)?);
    let adv = g.constant(column(b.advantages)?);
    let ret = g.constant(column(b.returns)?);

    let diff = g.sub(logp_a, old)?;
    let ratio = g.exp(diff);
    let unclipped = g.mul(ratio, adv)?;
    let clipped_ratio = g.clamp(ratio, 1.0 - cfg.clip, 1.0 + cfg.clip);
    let clipped = g.mul(clipped_ratio, adv)?;
    let surrogate = g.minimum(unclipped, clipped)?;
    let objective = g.mean(surrogate);
    let policy = g.scale(objective, -1.0);

    let probs = g.exp(logp);
    let plogp = g.mul(probs, logp)?;
    let per_row = g.row_sum(plogp)?;
    let neg_entropy = g.mean(per_row);
    let entropy = g.scale(neg_entropy, -1.0);

    let err = g.sub(heads.values, ret)?;
    let sq = g.mul(err, err)?;
    let value = g.mean(sq);

    let ent_term = g.scale(neg_entropy, cfg.entropy_coef);
    let val_term = g.scale(value, cfg.value_coef);
    let total = g.add(policy, ent_term)?;
    let total = g.add(total, val_term)?;
    Ok(PpoLoss {
        total,
        policy,
        value,
        entropy,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PpoStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub minibatches: usize,
}

/// Several epochs of shuffled minibatch steps over a finished rollout.
pub fn ppo_update(
    ac: &ActorCritic,
    store: &mut ParamStore,
    adam: &mut AdamState,
    rollout: &RolloutBuffer,
    cfg: &PpoConfig,
    rng: &mut dyn RngCore,
) -> Result<PpoStats> {
    let n = rollout.len();
    if n == 0 {
        return Err(ClamError::Empty("rollout"));
    }
    if rollout.advantages.len() != n {
        return Err(ClamError::Dataset("advantages have not been computed".into()));
    }
    let mut adv = rollout.advantages.clone();
    if cfg.normalize_advantages {
        normalize_advantages(&mut adv);
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut stats = PpoStats::default();
    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        for chunk in order.chunks(cfg.minibatch_size) {
            let pick = |v: &[f64]| chunk.iter().map(|&i| v[i]).collect::<Vec<_>>();
            let inputs: Vec<Vec<f64>> = chunk.iter().map(|&i| rollout.inputs[i].clone()).collect();
            let actions: Vec<usize> = chunk.iter().map(|&i| rollout.actions[i]).collect();
            let (old, a, r) = (pick(&rollout.log_probs), pick(&adv), pick(&rollout.returns));
            let batch = PpoBatch {
                inputs: &inputs,
                actions: &actions,
                old_log_probs: &old,
                advantages: &a,
                returns: &r,
            };
            let mut g = Graph::new();
            let loss = ppo_loss(ac, &mut g, store, &batch, cfg)?;
            stats.policy_loss += g.value(loss.policy).item();
            stats.value_loss += g.value(loss.value).item();
            stats.entropy += g.value(loss.entropy).item();
            stats.minibatches += 1;
            store.zero_grad();
            g.backward(loss.total, store)?;
            if cfg.max_grad_norm > 0.0 {
                store.clip_grad_norm(cfg.max_grad_norm);
            }
            adam.step(store)?;
        }
    }
    let k = stats.minibatches as f64;
    stats.policy_loss /= k;
    stats.value_loss /= k;
    stats.entropy /= k;
    Ok(stats)
}
