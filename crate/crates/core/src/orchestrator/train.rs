//! The training loop: per episode, roll out the ego policy against one
//! sampled modeled policy while embedding the growing trajectory with the
//! target encoder; then run the PPO and contrastive schedules.

use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use log::info;
use rand::RngCore;

use super::checkpoint::{load_checkpoint, save_checkpoint};
use super::config::TrainConfig;
use super::learner::Learner;
use crate::contrastive::{clam_update, ReplayBuffer, UpdateStatus};
use crate::envs::log::{write_jsonl, EpisodeRecord};
use crate::envs::{sample_modeled_policy, Env, PolicySet};
use crate::error::Result;
use crate::model::ema_update;
use crate::ppo::{ppo_update, PpoStats, RolloutBuffer};
use crate::rng::derived;

pub const METRICS_HEADER: &str = "variant,env,seed,metric,step,value,n";

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeSummary {
    pub record: EpisodeRecord,
    pub ego_return: f64,
    pub team_return: f64,
}

#[derive(Debug, Clone, Default)]
struct Interval {
    ego: Vec<f64>,
    team: Vec<f64>,
    clam: Vec<f64>,
    ppo: Vec<PpoStats>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub episodes: u64,
    pub ppo_updates: u64,
    pub clam_updates: u64,
    /// Mean ego return over the last logging interval.
    pub final_return: f64,
    pub final_team_return: f64,
    pub stopped_early: bool,
}

pub struct Trainer {
    pub learner: Learner,
    env: Env,
    policies: PolicySet,
    buffer: ReplayBuffer,
    rollout: RolloutBuffer,
    interval: Interval,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

impl Trainer {
    pub fn new(learner: Learner) -> Result<Self> {
        let c = &learner.config;
        Ok(Self {
            env: Env::new(c.env, &c.env_config())?,
            policies: c.policy_set()?,
            buffer: ReplayBuffer::new(c.contrastive.capacity, c.contrastive.min_episode_len()),
            rollout: RolloutBuffer::default(),
            interval: Interval::default(),
            learner,
        })
    }

    pub fn buffer(&self) -> &ReplayBuffer {
        &self.buffer
    }

    /// Plays one training episode and stores its transitions.
    pub fn play_episode(&mut self) -> Result<EpisodeSummary> {
        let l = &mut self.learner;
        let seed = l.rngs.env.next_u64();
        let mut obs = self.env.reset(&mut derived(seed))?;
        let pidx = sample_modeled_policy(&self.policies, &mut l.rngs.policy);
        let mut record = EpisodeRecord::new(
            l.config.env,
            l.config.env_config(),
            l.episode + 1,
            seed,
            self.policies.label(pidx),
        );
        let mut traj = vec![obs.ego.clone()];
        let (mut ego_return, mut team_return) = (0.0, 0.0);
        loop {
            let c = l.embedding(&traj)?;
            let input = l.ac.input_row(&obs.ego, &c)?;
            let sample = l.ac.act(&l.policy, &obs.ego, &c, &mut l.rngs.action)?;
            let modeled = self.policies.get(pidx).act(&obs.modeled, &mut l.rngs.modeled);
            let out = self.env.step(sample.action, &modeled)?;
            record.push(&obs, sample.action, &modeled, &out);
            self.rollout.push(input, sample, out.ego_reward, out.done);
            ego_return += out.ego_reward;
            team_return += out.team_reward();
            traj.push(out.obs.ego.clone());
            let done = out.done;
            obs = out.obs;
            if done {
                break;
            }
        }
        self.buffer.store(traj, record.policy);
        l.episode += 1;
        Ok(EpisodeSummary {
            record,
            ego_return,
            team_return,
        })
    }

    /// Runs whichever updates are scheduled after the current episode.
    pub fn scheduled_updates(&mut self) -> Result<()> {
        let l = &mut self.learner;
        let e = l.episode;
        let c = &l.config;
        if e % c.freq_ppo == 0 && !self.rollout.is_empty() {
            self.rollout.finish(c.ppo.gamma, c.ppo.lambda);
            let stats = ppo_update(
                &l.ac,
                &mut l.policy,
                &mut l.policy_adam,
                &self.rollout,
                &c.ppo,
                &mut l.rngs.minibatch,
            )?;
            self.rollout.clear();
            ema_update(&l.policy, &mut l.policy_target, c.tau_ema)?;
            l.ppo_updates += 1;
            self.interval.ppo.push(stats);
        }
        if c.variant.models_agent() && e % c.freq_clam == 0 && self.buffer.is_full() {
            for _ in 0..c.clam_steps {
                let status = clam_update(
                    &l.model,
                    &mut l.encoder,
                    &mut l.encoder_adam,
                    &self.buffer,
                    &c.contrastive,
                    &mut l.rngs.augmentation,
                )?;
                if let UpdateStatus::Updated { loss } = status {
                    self.interval.clam.push(loss);
                }
                ema_update(&l.encoder, &mut l.encoder_target, c.tau_ema)?;
            }
            l.clam_updates += 1;
        }
        Ok(())
    }

    fn metric_rows(&self) -> Vec<String> {
        let c = &self.learner.config;
        let row = |metric: &str, value: f64, n: usize| {
            format!(
                "{},{},{},{metric},{},{value},{n}",
                c.variant, c.env, c.seed, self.learner.episode
            )
        };
        let iv = &self.interval;
        let mut rows = Vec::new();
        if !iv.ego.is_empty() {
            rows.push(row("return", mean(&iv.ego), iv.ego.len()));
            rows.push(row("team_return", mean(&iv.team), iv.team.len()));
        }
        if !iv.clam.is_empty() {
            rows.push(row("clam_loss", mean(&iv.clam), iv.clam.len()));
        }
        if !iv.ppo.is_empty() {
            let n = iv.ppo.len();
            let avg = |f: fn(&PpoStats) -> f64| iv.ppo.iter().map(f).sum::<f64>() / n as f64;
            rows.push(row("policy_loss", avg(|s| s.policy_loss), n));
            rows.push(row("value_loss", avg(|s| s.value_loss), n));
            rows.push(row("entropy", avg(|s| s.entropy), n));
        }
        rows.push(row("buffer_fill", self.buffer.len() as f64, 1));
        rows
    }

    /// Trains until `config.episodes`, writing metrics, logs and the final
    /// checkpoint under `out`.
    pub fn run(&mut self, out: &Path) -> Result<TrainSummary> {
        fs::create_dir_all(out)?;
        let metrics_path = out.join("metrics.csv");
        let fresh = self.learner.episode == 0 || !metrics_path.exists();
        let mut metrics = if fresh {
            let mut f = BufWriter::new(File::create(&metrics_path)?);
            writeln!(f, "{METRICS_HEADER}")?;
            f
        } else {
            BufWriter::new(OpenOptions::new().append(true).open(&metrics_path)?)
        };
        let mut wall = BufWriter::new(if fresh {
            File::create(out.join("walltime.csv"))?
        } else {
            OpenOptions::new().append(true).create(true).open(out.join("walltime.csv"))?
        });
        if fresh {
            writeln!(wall, "episode,seconds")?;
        }
        let mut episodes_log = if self.learner.config.log_episodes {
            Some(BufWriter::new(if fresh {
                File::create(out.join("episodes.jsonl"))?
            } else {
                OpenOptions::new().append(true).create(true).open(out.join("episodes.jsonl"))?
            }))
        } else {
            None
        };
        fs::write(out.join("config.toml"), self.learner.config.to_toml_string()?)?;

        let start = Instant::now();
        let target = self.learner.config.episodes;
        let interval = self.learner.config.log_interval;
        let mut summary = TrainSummary {
            episodes: self.learner.episode,
            ppo_updates: self.learner.ppo_updates,
            clam_updates: self.learner.clam_updates,
            final_return: f64::NAN,
            final_team_return: f64::NAN,
            stopped_early: false,
        };
        while self.learner.episode < target {
            let ep = self.play_episode()?;
            self.interval.ego.push(ep.ego_return);
            self.interval.team.push(ep.team_return);
            if let Some(w) = episodes_log.as_mut() {
                write_jsonl(&mut *w, std::slice::from_ref(&ep.record))?;
            }
            self.scheduled_updates()?;
            let e = self.learner.episode;
            if e % interval == 0 || e == target {
                for r in self.metric_rows() {
                    writeln!(metrics, "{r}")?;
                }
                writeln!(wall, "{e},{:.3}", start.elapsed().as_secs_f64())?;
                summary.final_return = mean(&self.interval.ego);
                summary.final_team_return = mean(&self.interval.team);
                info!(
                    "episode {e}: return {:.4} team {:.4} clam updates {}",
                    summary.final_return, summary.final_team_return, self.learner.clam_updates
                );
                self.interval = Interval::default();
                if let Some(goal) = self.learner.config.early_stop_return {
                    if summary.final_return >= goal {
                        summary.stopped_early = true;
                        break;
                    }
                }
            }
        }
        metrics.flush()?;
        wall.flush()?;
        if let Some(w) = episodes_log.as_mut() {
            w.flush()?;
        }
        summary.episodes = self.learner.episode;
        summary.ppo_updates = self.learner.ppo_updates;
        summary.clam_updates = self.learner.clam_updates;
        let l = &mut self.learner;
        l.summary.insert("final_return".into(), summary.final_return);
        l.summary.insert("final_team_return".into(), summary.final_team_return);
        save_checkpoint(l, &out.join("checkpoint"))?;
        Ok(summary)
    }
}

/// Fresh run of `config` into `out`.
pub fn train_run(config: &TrainConfig, out: &Path) -> Result<TrainSummary> {
    Trainer::new(Learner::new(config.clone())?)?.run(out)
}

/// Continues a checkpointed run up to `episodes` (or its configured total).
/// The replay buffer starts empty again.
pub fn resume_run(checkpoint: &Path, out: &Path, episodes: Option<u64>) -> Result<TrainSummary> {
    let mut learner = load_checkpoint(checkpoint)?;
    if let Some(n) = episodes {
        learner.config.episodes = n;
    }
    Trainer::new(learner)?.run(out)
}
