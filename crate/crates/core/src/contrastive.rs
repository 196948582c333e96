//! Episodic replay buffer, asymmetric crop/mask augmentation and the InfoNCE
//! update of the online encoder, pooler and projection head.

use std::collections::VecDeque;

use log::{debug, warn};
use ndiff::{AdamState, Graph, ParamStore, Var};
use rand::seq::index::sample;
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::{ClamError, Result};
use crate::model::ClamModel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ContrastiveConfig {
    pub batch_size: usize,
    pub temperature: f64,
    pub mask_ratio: f64,
    pub crop_len_min: usize,
    pub crop_len_max: usize,
    pub lr: f64,
    /// Buffer capacity in episodes; updates wait until the buffer is full.
    pub capacity: usize,
    /// Skip masking so both branches are plain crops.
    pub symmetric: bool,
    /// Average the loss with its transposed direction.
    pub bidirectional: bool,
    /// Draw the two windows from opposite sides of a random split point, so
    /// a positive pair never shares an observation row.
    pub disjoint_crops: bool,
}

impl Default for ContrastiveConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            temperature: 0.1,
            mask_ratio: 0.3,
            crop_len_min: 8,
            crop_len_max: 50,
            lr: 3e-4,
            capacity: 512,
            symmetric: false,
            bidirectional: false,
            disjoint_crops: false,
        }
    }
}

impl ContrastiveConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(ClamError::Config(m.to_string()));
        if !(1 <= self.crop_len_min && self.crop_len_min <= self.crop_len_max && self.crop_len_max <= 50) {
            return bad("crop lengths must satisfy 1 <= min <= max <= 50");
        }
        if self.disjoint_crops && 2 * self.crop_len_min > 50 {
            return bad("disjoint crops need 2 * crop_len_min <= 50");
        }
        if !(self.temperature > 0.0) {
            return bad("temperature must be positive");
        }
        if !(0.0..=1.0).contains(&self.mask_ratio) {
            return bad("mask ratio must lie in [0, 1]");
        }
        if self.batch_size == 0 || self.capacity < self.batch_size {
            return bad("buffer capacity must be at least the batch size");
        }
        if !(self.lr > 0.0) {
            return bad("learning rate must be positive");
        }
        Ok(())
    }

    /// Shortest episode the buffer accepts: one window, or two with disjoint crops.
    pub fn min_episode_len(&self) -> usize {
        if self.disjoint_crops {
            2 * self.crop_len_min
        } else {
            self.crop_len_min
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StoredEpisode {
    pub obs: Vec<Vec<f64>>,
    /// Modeled policy index, kept for diagnostics only.
    pub label: usize,
}

/// FIFO ring of ego observation trajectories.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    min_len: usize,
    episodes: VecDeque<StoredEpisode>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, min_len: usize) -> Self {
        Self {
            capacity,
            min_len,
            episodes: VecDeque::with_capacity(capacity),
        }
    }

    /// Appends an episode, evicting the oldest at capacity. Episodes shorter
    /// than the minimum crop are skipped; returns whether it was stored.
    pub fn store(&mut self, obs: Vec<Vec<f64>>, label: usize) -> bool {
        if obs.len() < self.min_len {
            debug!("skipping episode of length {} (< {})", obs.len(), self.min_len);
            return false;
        }
        if self.capacity == 0 {
            return false;
        }
        if self.episodes.len() == self.capacity {
            self.episodes.pop_front();
        }
        self.episodes.push_back(StoredEpisode { obs, label });
        true
    }

    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn is_full(&self) -> bool {
        self.episodes.len() >= self.capacity
    }

    pub fn get(&self, i: usize) -> Option<&StoredEpisode> {
        self.episodes.get(i)
    }

    pub fn iter(&self) -> impl Iterator<Item = &StoredEpisode> {
        self.episodes.iter()
    }
}

/// A contiguous window `[start, start + len)` of a trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Crop {
    pub start: usize,
    pub len: usize,
}

impl Crop {
    pub fn apply<'a>(&self, traj: &'a [Vec<f64>]) -> &'a [Vec<f64>] {
        &traj[self.start..self.start + self.len]
    }
}

/// Uniform length in `[min, min(max, traj_len)]`, then a uniform valid start.
pub fn crop_window(traj_len: usize, min: usize, max: usize, rng: &mut dyn RngCore) -> Result<Crop> {
    if traj_len < min || min == 0 {
        return Err(ClamError::Dataset(format!(
            "cannot crop a window of at least {min} from a trajectory of length {traj_len}"
        )));
    }
    let hi = max.min(traj_len).max(min);
    let len = rng.random_range(min..=hi);
    let start = rng.random_range(0..=traj_len - len);
    Ok(Crop { start, len })
}

/// Two crops of the same trajectory: independent, or on either side of a
/// uniform split point (in random order) when `disjoint_crops` is set.
pub fn crop_pair(traj_len: usize, cfg: &ContrastiveConfig, rng: &mut dyn RngCore) -> Result<(Crop, Crop)> {
    let (min, max) = (cfg.crop_len_min, cfg.crop_len_max);
    if !cfg.disjoint_crops {
        let a = crop_window(traj_len, min, max, rng)?;
        let b = crop_window(traj_len, min, max, rng)?;
        return Ok((a, b));
    }
    if traj_len < 2 * min {
        return Err(ClamError::Dataset(format!(
            "cannot crop two disjoint windows of at least {min} from a trajectory of length {traj_len}"
        )));
    }
    let split = rng.random_range(min..=traj_len - min);
    let early = crop_window(split, min, max, rng)?;
    let mut late = crop_window(traj_len - split, min, max, rng)?;
    late.start += split;
    Ok(if rng.random_bool(0.5) { (early, late) } else { (late, early) })
}

/// Number of rows zeroed for a window of `len` rows.
pub fn mask_count(len: usize, ratio: f64) -> usize {
    ((ratio * len as f64) + 1e-9).floor().min(len as f64) as usize
}

/// Zeroes `floor(ratio * len)` distinct, uniformly chosen rows.
pub fn mask_strong(s: &[Vec<f64>], ratio: f64, rng: &mut dyn RngCore) -> Vec<Vec<f64>> {
    let mut out = s.to_vec();
    let k = mask_count(s.len(), ratio);
    for i in sample(rng, s.len(), k) {
        out[i].iter_mut().for_each(|x| *x = 0.0);
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedBatch {
    pub weak: Vec<Vec<Vec<f64>>>,
    pub strong: Vec<Vec<Vec<f64>>>,
    /// Buffer index of the source episode of pair `i`.
    pub sources: Vec<usize>,
    pub labels: Vec<usize>,
}

/// Samples `batch_size` distinct episodes and builds weak/strong views.
pub fn build_batch(buffer: &ReplayBuffer, cfg: &ContrastiveConfig, rng: &mut dyn RngCore) -> Result<AugmentedBatch> {
    if buffer.len() < cfg.batch_size {
        return Err(ClamError::Dataset(format!(
            "buffer holds {} episodes, batch needs {}",
            buffer.len(),
            cfg.batch_size
        )));
    }
    let picks = sample(rng, buffer.len(), cfg.batch_size).into_vec();
    let mut batch = AugmentedBatch {
        weak: Vec::with_capacity(picks.len()),
        strong: Vec::with_capacity(picks.len()),
        sources: Vec::with_capacity(picks.len()),
        labels: Vec::with_capacity(picks.len()),
    };
    for idx in picks {
        let ep = buffer.get(idx).expect("sampled index is in range");
        let (a, b) = crop_pair(ep.obs.len(), cfg, rng)?;
        let strong = if cfg.symmetric {
            b.apply(&ep.obs).to_vec()
        } else {
            mask_strong(b.apply(&ep.obs), cfg.mask_ratio, rng)
        };
        batch.weak.push(a.apply(&ep.obs).to_vec());
        batch.strong.push(strong);
        batch.sources.push(idx);
        batch.labels.push(ep.label);
    }
    Ok(batch)
}

/// `-(1/N) sum_i log softmax_k(c1_i . c2_k / temperature)[i]`.
pub fn info_nce_loss(g: &mut Graph, c1: Var, c2: Var, temperature: f64, bidirectional: bool) -> Result<Var> {
    let n = g.shape(c1)[0];
    if n < 2 {
        warn!("contrastive batch of size {n} gives a degenerate loss");
    }
    let diag: Vec<usize> = (0..n).collect();
    let one_way = |g: &mut Graph, a: Var, b: Var| -> Result<Var> {
        let bt = g.transpose(b)?;
        let logits = g.matmul(a, bt)?;
        let logits = g.scale(logits, 1.0 / temperature);
        let lsm = g.row_log_softmax(logits)?;
        let pos = g.gather(lsm, &diag)?;
        let m = g.mean(pos);
        Ok(g.scale(m, -1.0))
    };
    let forward = one_way(g, c1, c2)?;
    if !bidirectional {
        return Ok(forward);
    }
    let backward = one_way(g, c2, c1)?;
    let both = g.add(forward, backward)?;
    Ok(g.scale(both, 0.5))
}

fn embed_rows(model: &ClamModel, g: &mut Graph, store: &ParamStore, windows: &[Vec<Vec<f64>>]) -> Result<Var> {
    let rows = windows
        .iter()
        .map(|w| model.embed_var(g, store, w))
        .collect::<Result<Vec<_>>>()?;
    let c = g.concat_rows(&rows)?;
    model.project(g, store, c)
}

/// Contrastive loss of a batch under the given parameters.
pub fn batch_loss(
    model: &ClamModel,
    g: &mut Graph,
    store: &ParamStore,
    batch: &AugmentedBatch,
    cfg: &ContrastiveConfig,
) -> Result<Var> {
    let c1 = embed_rows(model, g, store, &batch.weak)?;
    let c2 = embed_rows(model, g, store, &batch.strong)?;
    info_nce_loss(g, c1, c2, cfg.temperature, cfg.bidirectional)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum UpdateStatus {
    Skipped { buffered: usize, capacity: usize },
    Updated { loss: f64 },
}

/// One gradient step on a freshly sampled batch, gated on a full buffer.
pub fn clam_update(
    model: &ClamModel,
    online: &mut ParamStore,
    adam: &mut AdamState,
    buffer: &ReplayBuffer,
    cfg: &ContrastiveConfig,
    rng: &mut dyn RngCore,
) -> Result<UpdateStatus> {
    if !buffer.is_full() {
        return Ok(UpdateStatus::Skipped {
            buffered: buffer.len(),
            capacity: buffer.capacity(),
        });
    }
    let batch = build_batch(buffer, cfg, rng)?;
    let loss = step_on_batch(model, online, adam, &batch, cfg)?;
    Ok(UpdateStatus::Updated { loss })
}

/// Forward, backward and Adam step on a fixed batch; returns the pre-step loss.
pub fn step_on_batch(
    model: &ClamModel,
    online: &mut ParamStore,
    adam: &mut AdamState,
    batch: &AugmentedBatch,
    cfg: &ContrastiveConfig,
) -> Result<f64> {
    let mut g = Graph::new();
    let loss = batch_loss(model, &mut g, online, batch, cfg)?;
    let value = g.value(loss).item();
    online.zero_grad();
    g.backward(loss, online)?;
    adam.step(online)?;
    Ok(value)
}
