//! Evaluation: clustering ratio of embeddings, embedding dumps, supervised
//! probes on frozen embeddings, and return evaluation with confidence
//! intervals.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use ndiff::{AdamState, Graph, ParamStore, Tensor};
use rand::seq::SliceRandom;
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::envs::lbf_policies::NearestApple;
use crate::envs::log::EpisodeRecord;
use crate::envs::{sample_modeled_policy, Env, EnvKind, FixedPolicy, PolicySet};
use crate::error::{ClamError, Result};
use crate::orchestrator::Learner;
use crate::rng::{derived, stream, Stream};

/// Mean pairwise Euclidean distance within labels over the mean across labels.
pub fn iicr(embeddings: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    if embeddings.len() != labels.len() {
        return Err(ClamError::Dataset("embedding and label counts differ".into()));
    }
    let distinct: BTreeSet<usize> = labels.iter().copied().collect();
    if distinct.len() < 2 {
        return Err(ClamError::Degenerate("at least two policy labels are required".into()));
    }
    let (mut intra, mut n_intra, mut inter, mut n_inter) = (0.0, 0usize, 0.0, 0usize);
    for i in 0..embeddings.len() {
        for j in i + 1..embeddings.len() {
            let d = embeddings[i]
                .iter()
                .zip(&embeddings[j])
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt();
            if labels[i] == labels[j] {
                intra += d;
                n_intra += 1;
            } else {
                inter += d;
                n_inter += 1;
            }
        }
    }
    if n_intra == 0 {
        return Err(ClamError::Degenerate("every label needs at least two points".into()));
    }
    if inter == 0.0 {
        return Err(ClamError::Degenerate("all points coincide".into()));
    }
    Ok((intra / n_intra as f64) / (inter / n_inter as f64))
}

/// Who controls the ego agent during evaluation.
pub enum Controller<'a> {
    Learned(&'a Learner),
    Random,
    Scripted(Box<dyn FixedPolicy>),
}

impl Controller<'_> {
    /// Scripted nearest-apple forager for the ego seat of foraging.
    pub fn scripted(kind: EnvKind, lbf_rows: usize, lbf_cols: usize) -> Result<Controller<'static>> {
        match kind {
            EnvKind::Lbf => Ok(Controller::Scripted(Box::new(NearestApple {
                rows: lbf_rows,
                cols: lbf_cols,
            }))),
            EnvKind::Pp => Err(ClamError::Config("no scripted ego controller for predator-prey".into())),
        }
    }
}

/// One evaluation episode.
#[derive(Debug, Clone, PartialEq)]
pub struct Played {
    pub record: EpisodeRecord,
    /// Index into the evaluated policy set.
    pub policy_index: usize,
    pub ego_return: f64,
    pub team_return: f64,
    /// `prefix[k]` embeds the first `k` ego observations (k = 0..=steps).
    pub prefix_embeddings: Vec<Vec<f64>>,
}

impl Played {
    /// Foraging reports the team return, predator-prey the ego return.
    pub fn score(&self) -> f64 {
        match self.record.env {
            EnvKind::Lbf => self.team_return,
            EnvKind::Pp => self.ego_return,
        }
    }
}

/// Plays one episode from `episode_seed`; all randomness derives from it.
pub fn play(
    controller: &Controller,
    env: &mut Env,
    policies: &PolicySet,
    policy_index: usize,
    episode: u64,
    episode_seed: u64,
    with_embeddings: bool,
) -> Result<Played> {
    let spec = env.spec();
    let mut obs = env.reset(&mut derived(episode_seed))?;
    let mut action_rng = stream(episode_seed, Stream::Action);
    let mut modeled_rng = stream(episode_seed, Stream::Modeled);
    let learner = match controller {
        Controller::Learned(l) => Some(*l),
        _ => None,
    };
    if with_embeddings && learner.is_none() {
        return Err(ClamError::Config("embeddings need a learned controller".into()));
    }
    let mut record = EpisodeRecord::new(
        spec.kind,
        env_config_of(env),
        episode,
        episode_seed,
        policies.label(policy_index),
    );
    let mut prefix = Vec::new();
    if let (true, Some(l)) = (with_embeddings, learner) {
        prefix.push(l.embedding(&[])?);
    }
    let mut traj = vec![obs.ego.clone()];
    let (mut ego_return, mut team_return) = (0.0, 0.0);
    loop {
        let action = match controller {
            Controller::Learned(l) => {
                let c = l.embedding(&traj)?;
                let a = l.act(&obs.ego, &c, &mut action_rng)?.action;
                if with_embeddings {
                    prefix.push(c);
                }
                a
            }
            Controller::Random => (action_rng.next_u64() % spec.action_count as u64) as usize,
            Controller::Scripted(p) => p.act(std::slice::from_ref(&obs.ego), &mut action_rng)[0],
        };
        let modeled = policies.get(policy_index).act(&obs.modeled, &mut modeled_rng);
        let out = env.step(action, &modeled)?;
        record.push(&obs, action, &modeled, &out);
        ego_return += out.ego_reward;
        team_return += out.team_reward();
        traj.push(out.obs.ego.clone());
        let done = out.done;
        obs = out.obs;
        if done {
            break;
        }
    }
    Ok(Played {
        record,
        policy_index,
        ego_return,
        team_return,
        prefix_embeddings: prefix,
    })
}

fn env_config_of(env: &Env) -> crate::envs::EnvConfig {
    let mut c = crate::envs::EnvConfig::default();
    match env {
        Env::Lbf(e) => c.lbf = e.config().clone(),
        Env::Pp(e) => c.pp = e.config().clone(),
    }
    c
}

/// Round-robin schedule: `episodes_per_policy` episodes for each policy in
/// turn, fanned out over `threads` workers. Results are in schedule order
/// and independent of the worker count.
pub fn play_schedule(
    controller: &Controller,
    env: &Env,
    policies: &PolicySet,
    episodes_per_policy: usize,
    seed: u64,
    with_embeddings: bool,
    threads: usize,
) -> Result<Vec<Played>> {
    let mut rng = stream(seed, Stream::Eval);
    let jobs: Vec<(usize, u64, u64)> = (0..policies.len())
        .flat_map(|i| (0..episodes_per_policy).map(move |j| (i, (i * episodes_per_policy + j) as u64)))
        .map(|(i, id)| (i, id, rng.next_u64()))
        .collect();
    let run = |chunk: &[(usize, u64, u64)]| -> Result<Vec<Played>> {
        let mut env = env.clone();
        chunk
            .iter()
            .map(|&(i, id, s)| play(controller, &mut env, policies, i, id, s, with_embeddings))
            .collect()
    };
    let threads = threads.max(1);
    if threads == 1 || jobs.len() < 2 {
        return run(&jobs);
    }
    let size = jobs.len().div_ceil(threads);
    let parts: Vec<Result<Vec<Played>>> = std::thread::scope(|scope| {
        let handles: Vec<_> = jobs.chunks(size).map(|c| scope.spawn(move || run(c))).collect();
        handles.into_iter().map(|h| h.join().expect("evaluation worker panicked")).collect()
    });
    let mut out = Vec::with_capacity(jobs.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRecord {
    pub episode: u64,
    pub step: usize,
    pub policy: usize,
    pub embedding: Vec<f64>,
}

/// Embeddings of the first `step` observations for each requested step.
/// Episodes that ended before a step contribute nothing to it.
pub fn embeddings_at(played: &[Played], steps: &[usize]) -> Result<Vec<EmbeddingRecord>> {
    let mut out = Vec::new();
    for &s in steps {
        for p in played {
            if s > p.record.steps.len() {
                continue;
            }
            let c = p.prefix_embeddings.get(s).ok_or_else(|| {
                ClamError::Dataset(format!("episode {} has no embedding at step {s}", p.record.episode))
            })?;
            out.push(EmbeddingRecord {
                episode: p.record.episode,
                step: s,
                policy: p.record.policy,
                embedding: c.clone(),
            });
        }
    }
    Ok(out)
}

pub fn write_embeddings<W: Write>(mut w: W, records: &[EmbeddingRecord]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IicrRow {
    pub step: usize,
    pub value: f64,
    pub n: usize,
}

pub fn iicr_by_step(records: &[EmbeddingRecord], steps: &[usize]) -> Result<Vec<IicrRow>> {
    steps
        .iter()
        .map(|&s| {
            let (emb, lab): (Vec<Vec<f64>>, Vec<usize>) = records
                .iter()
                .filter(|r| r.step == s)
                .map(|r| (r.embedding.clone(), r.policy))
                .unzip();
            Ok(IicrRow {
                step: s,
                value: iicr(&emb, &lab)?,
                n: emb.len(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProbeTarget {
    /// First modeled agent's action at the current step.
    Action,
    /// Index of the modeled policy within the evaluated set.
    Policy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProbeInput {
    EmbeddingAndObs,
    ObsOnly,
    Embedding,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeSample {
    pub episode: usize,
    pub step: usize,
    pub input: Vec<f64>,
    pub target: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeDataset {
    pub train: Vec<ProbeSample>,
    pub test: Vec<ProbeSample>,
    pub classes: usize,
}

/// Samples at steps `0..max_steps`: the embedding of the first `k` ego
/// observations and/or the current observation, paired with the target.
/// Episodes are split 80/20 after a seeded shuffle.
pub fn probe_dataset(
    played: &[Played],
    target: ProbeTarget,
    input: ProbeInput,
    classes: usize,
    max_steps: usize,
    seed: u64,
) -> Result<ProbeDataset> {
    if played.len() < 2 {
        return Err(ClamError::Dataset("need at least two episodes to split".into()));
    }
    // 80/20 by episode within each policy, so both splits keep the schedule's balance.
    let mut rng = stream(seed, Stream::Probe);
    let mut by_policy: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (e, p) in played.iter().enumerate() {
        by_policy.entry(p.policy_index).or_default().push(e);
    }
    let mut train_set = BTreeSet::new();
    for episodes in by_policy.values_mut() {
        episodes.shuffle(&mut rng);
        let n = ((episodes.len() as f64) * 0.8).round() as usize;
        train_set.extend(episodes[..n.min(episodes.len())].iter().copied());
    }
    if train_set.is_empty() || train_set.len() == played.len() {
        let mut order: Vec<usize> = (0..played.len()).collect();
        order.shuffle(&mut rng);
        train_set = order[..played.len() - 1].iter().copied().collect();
    }
    let mut ds = ProbeDataset {
        train: Vec::new(),
        test: Vec::new(),
        classes,
    };
    for (e, p) in played.iter().enumerate() {
        for (k, step) in p.record.steps.iter().enumerate().take(max_steps) {
            let mut x = Vec::new();
            if input != ProbeInput::ObsOnly {
                let c = p.prefix_embeddings.get(k).ok_or_else(|| {
                    ClamError::Dataset("probe inputs need embeddings for every prefix".into())
                })?;
                x.extend_from_slice(c);
            }
            if input != ProbeInput::Embedding {
                x.extend_from_slice(&step.obs_ego);
            }
            let y = match target {
                ProbeTarget::Action => step.action_modeled[0],
                ProbeTarget::Policy => p.policy_index,
            };
            let sample = ProbeSample {
                episode: e,
                step: k,
                input: x,
                target: y,
            };
            if train_set.contains(&e) {
                ds.train.push(sample);
            } else {
                ds.test.push(sample);
            }
        }
    }
    Ok(ds)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeConfig {
    pub hidden: usize,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            lr: 1e-3,
            epochs: 20,
            batch_size: 64,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Probe {
    pub params: ParamStore,
    pub classes: usize,
    /// Per-feature mean and standard deviation of the train split.
    pub scale: Vec<(f64, f64)>,
}

fn feature_scale(rows: &[ProbeSample]) -> Vec<(f64, f64)> {
    let n = rows.len() as f64;
    (0..rows[0].input.len())
        .map(|j| {
            let mean = rows.iter().map(|s| s.input[j]).sum::<f64>() / n;
            let var = rows.iter().map(|s| (s.input[j] - mean).powi(2)).sum::<f64>() / n;
            (mean, var.sqrt().max(1e-6))
        })
        .collect()
}

fn probe_logits(g: &mut Graph, p: &ParamStore, scale: &[(f64, f64)], rows: &[&Vec<f64>]) -> Result<ndiff::Var> {
    let owned: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| r.iter().zip(scale).map(|(x, (m, s))| (x - m) / s).collect())
        .collect();
    let x = g.constant(Tensor::from_rows(&owned)?);
    let w1 = g.param(p, "l1.w")?;
    let b1 = g.param(p, "l1.b")?;
    let h = g.matmul(x, w1)?;
    let h = g.add_row(h, b1)?;
    let h = g.relu(h);
    let w2 = g.param(p, "l2.w")?;
    let b2 = g.param(p, "l2.b")?;
    let o = g.matmul(h, w2)?;
    Ok(g.add_row(o, b2)?)
}

/// Cross-entropy training of a two-layer classifier on the train split.
pub fn train_probe(ds: &ProbeDataset, cfg: &ProbeConfig, seed: u64) -> Result<Probe> {
    let seen: BTreeSet<usize> = ds.train.iter().map(|s| s.target).collect();
    if seen.len() < 2 {
        return Err(ClamError::Dataset("probe targets contain a single class".into()));
    }
    if let Some(bad) = ds.train.iter().chain(&ds.test).find(|s| s.target >= ds.classes) {
        return Err(ClamError::Dataset(format!("target {} outside {} classes", bad.target, ds.classes)));
    }
    let dim = ds.train[0].input.len();
    let scale = feature_scale(&ds.train);
    let mut rng = stream(seed, Stream::Probe);
    let mut params = ParamStore::new();
    params.insert_normal("l1.w", dim, cfg.hidden, (2.0 / dim as f64).sqrt(), &mut rng)?;
    params.insert_constant("l1.b", 1, cfg.hidden, 0.0)?;
    params.insert_normal("l2.w", cfg.hidden, ds.classes, (1.0 / cfg.hidden as f64).sqrt(), &mut rng)?;
    params.insert_constant("l2.b", 1, ds.classes, 0.0)?;
    let mut adam = AdamState::new(&params, cfg.lr);
    let mut order: Vec<usize> = (0..ds.train.len()).collect();
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let rows: Vec<&Vec<f64>> = chunk.iter().map(|&i| &ds.train[i].input).collect();
            let targets: Vec<usize> = chunk.iter().map(|&i| ds.train[i].target).collect();
            let mut g = Graph::new();
            let logits = probe_logits(&mut g, &params, &scale, &rows)?;
            let lsm = g.row_log_softmax(logits)?;
            let picked = g.gather(lsm, &targets)?;
            let m = g.mean(picked);
            let loss = g.scale(m, -1.0);
            params.zero_grad();
            g.backward(loss, &mut params)?;
            adam.step(&mut params)?;
        }
    }
    Ok(Probe {
        params,
        classes: ds.classes,
        scale,
    })
}

impl Probe {
    pub fn predict(&self, samples: &[ProbeSample]) -> Result<Vec<usize>> {
        if samples.is_empty() {
            return Ok(Vec::new());
        }
        let mut g = Graph::inference();
        let rows: Vec<&Vec<f64>> = samples.iter().map(|s| &s.input).collect();
        let logits = probe_logits(&mut g, &self.params, &self.scale, &rows)?;
        let t = g.value(logits);
        Ok((0..t.rows())
            .map(|r| {
                let row = t.row_slice(r);
                (0..row.len()).fold(0, |best, j| if row[j] > row[best] { j } else { best })
            })
            .collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepAccuracy {
    pub step: usize,
    pub accuracy: f64,
    pub n: usize,
}

/// Test accuracy per trajectory length; steps without samples are omitted.
pub fn probe_accuracy_by_step(probe: &Probe, test: &[ProbeSample], max_steps: usize) -> Result<Vec<StepAccuracy>> {
    let pred = probe.predict(test)?;
    let mut hits = vec![0usize; max_steps];
    let mut counts = vec![0usize; max_steps];
    for (s, p) in test.iter().zip(pred) {
        if s.step < max_steps {
            counts[s.step] += 1;
            hits[s.step] += usize::from(p == s.target);
        }
    }
    Ok((0..max_steps)
        .filter(|&k| counts[k] > 0)
        .map(|k| StepAccuracy {
            step: k,
            accuracy: hits[k] as f64 / counts[k] as f64,
            n: counts[k],
        })
        .collect())
}

/// Sample-weighted mean accuracy over steps in `[from, to)`.
pub fn mean_accuracy(curve: &[StepAccuracy], from: usize, to: usize) -> Option<f64> {
    let (hits, n) = curve
        .iter()
        .filter(|a| a.step >= from && a.step < to)
        .fold((0.0, 0usize), |(h, n), a| (h + a.accuracy * a.n as f64, n + a.n));
    (n > 0).then(|| hits / n as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReturnReport {
    pub mean: f64,
    /// Half-width of the normal-approximation 95% interval.
    pub ci95: f64,
    pub n: usize,
    pub per_seed: Vec<f64>,
}

/// Mean evaluation return with modeled policies sampled uniformly per episode.
pub fn evaluate_returns(
    controller: &Controller,
    env: &mut Env,
    policies: &PolicySet,
    episodes: usize,
    seeds: &[u64],
) -> Result<ReturnReport> {
    if episodes == 0 || seeds.is_empty() {
        return Err(ClamError::Dataset("no evaluation episodes requested".into()));
    }
    let mut all = Vec::new();
    let mut per_seed = Vec::new();
    for &seed in seeds {
        let mut rng = stream(seed, Stream::Eval);
        let mut sum = 0.0;
        for e in 0..episodes {
            let idx = sample_modeled_policy(policies, &mut rng);
            let ep_seed = rng.next_u64();
            let p = play(controller, env, policies, idx, e as u64, ep_seed, false)?;
            sum += p.score();
            all.push(p.score());
        }
        per_seed.push(sum / episodes as f64);
    }
    let n = all.len();
    let mean = all.iter().sum::<f64>() / n as f64;
    let var = if n > 1 {
        all.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64
    } else {
        0.0
    };
    Ok(ReturnReport {
        mean,
        ci95: 1.96 * (var / n as f64).sqrt(),
        n,
        per_seed,
    })
}
