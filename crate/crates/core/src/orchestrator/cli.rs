//! Command-line surface. Exit codes: 0 success, 1 usage, 2 runtime failure.

use std::ffi::OsString;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{CommandFactory, Parser, Subcommand, ValueEnum};

use super::checkpoint::{load_checkpoint, MANIFEST};
use super::config::{Preset, TrainConfig, Variant};
use super::learner::Learner;
use super::train::{resume_run, train_run};
use crate::envs::log::{read_jsonl, replay};
use crate::envs::{Env, EnvKind};
use crate::error::{ClamError, Result};
use crate::eval::{
    embeddings_at, evaluate_returns, iicr_by_step, play_schedule, probe_accuracy_by_step, probe_dataset, train_probe,
    write_embeddings, Controller, ProbeConfig, ProbeInput, ProbeTarget,
};

pub const OUT_DIR_VAR: &str = "CLAM_OUT_DIR";
pub const THREADS_VAR: &str = "CLAM_THREADS";

#[derive(Debug, Parser)]
#[command(name = "clam", version, about = "Contrastive agent modeling: training and evaluation")]
pub struct Cli {
    /// TOML configuration file; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Environment: lbf or pp.
    #[arg(long, global = true)]
    pub env: Option<EnvKind>,
    /// clam, nam, clam-avg, clam-p or clam-sym.
    #[arg(long, global = true)]
    pub variant: Option<Variant>,
    /// Output directory (overrides CLAM_OUT_DIR and the config).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Checkpoint directory, or a run directory containing `checkpoint/`.
    #[arg(long, global = true)]
    pub checkpoint: Option<PathBuf>,
    /// Base settings when no config file is given: desk (default) or full.
    #[arg(long, global = true)]
    pub preset: Option<Preset>,
    /// Repeat for more log output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ControllerKind {
    Checkpoint,
    Random,
    Scripted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ProbeKind {
    Action,
    Policy,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train an ego agent; resumes when --checkpoint is given.
    Train {
        #[arg(long)]
        episodes: Option<u64>,
        /// Comma-separated indices into the full modeled policy set.
        #[arg(long, value_delimiter = ',')]
        policies: Option<Vec<usize>>,
        /// Write every training episode to episodes.jsonl.
        #[arg(long)]
        log_episodes: bool,
    },
    /// Mean evaluation return with a 95% interval.
    Eval {
        #[arg(long, default_value_t = 100)]
        episodes: usize,
        #[arg(long, value_delimiter = ',', default_value = "0")]
        seeds: Vec<u64>,
        #[arg(long, value_enum, default_value_t = ControllerKind::Checkpoint)]
        controller: ControllerKind,
    },
    /// Train a probe on frozen embeddings and report accuracy per step.
    Probe {
        #[arg(long, value_enum, default_value_t = ProbeKind::Action)]
        target: ProbeKind,
        /// Episodes per modeled policy.
        #[arg(long, default_value_t = 20)]
        episodes: usize,
    },
    /// Clustering ratio of embeddings at the given steps.
    Iicr {
        #[arg(long, value_delimiter = ',', default_value = "10,20,30,40,50")]
        steps: Vec<usize>,
        #[arg(long, default_value_t = 20)]
        episodes: usize,
    },
    /// Dump embeddings as JSON lines.
    ExportEmbeddings {
        #[arg(long, default_value_t = 20)]
        episodes: usize,
        #[arg(long, value_delimiter = ',', default_value = "25")]
        steps: Vec<usize>,
        /// Destination file; defaults to <out>/embeddings.jsonl.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Re-simulate logged episodes and compare bit for bit.
    Replay {
        #[arg(long)]
        log: PathBuf,
    },
}

enum Failure {
    Usage(clap::Error),
    Runtime(ClamError),
}

impl From<ClamError> for Failure {
    fn from(e: ClamError) -> Self {
        Failure::Runtime(e)
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

fn usage(msg: &str) -> Failure {
    Failure::Usage(Cli::command().error(ErrorKind::MissingRequiredArgument, msg))
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    let mut stdout = io::stdout().lock();
    match dispatch(&cli, &mut stdout) {
        Ok(()) => 0,
        Err(Failure::Usage(e)) => {
            let _ = e.print();
            1
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            2
        }
    }
}

fn out_dir(cli: &Cli, config: Option<&TrainConfig>) -> PathBuf {
    cli.out
        .clone()
        .or_else(|| std::env::var_os(OUT_DIR_VAR).map(PathBuf::from))
        .or_else(|| config.map(|c| c.out_dir.clone()))
        .unwrap_or_else(|| PathBuf::from("."))
}

/// Worker count for evaluation fan-out.
pub fn thread_count() -> Result<usize> {
    match std::env::var(THREADS_VAR) {
        Ok(v) => v
            .parse::<usize>()
            .ok()
            .filter(|&n| n >= 1)
            .ok_or_else(|| ClamError::Config(format!("{THREADS_VAR} must be a positive integer, got `{v}`"))),
        Err(_) => Ok(1),
    }
}

fn resolve_config(cli: &Cli) -> Result<TrainConfig> {
    let mut c = match &cli.config {
        Some(path) => {
            let mut c = TrainConfig::from_file(path)?;
            if let Some(env) = cli.env {
                c.env = env;
            }
            if let Some(v) = cli.variant {
                c.variant = v;
            }
            if let Some(s) = cli.seed {
                c.seed = s;
            }
            c
        }
        None => TrainConfig::preset(
            cli.preset.unwrap_or(Preset::Desk),
            cli.env.unwrap_or(EnvKind::Lbf),
            cli.variant.unwrap_or(Variant::Clam),
            cli.seed.unwrap_or(0),
        ),
    };
    c.apply_variant();
    Ok(c)
}

fn checkpoint_dir(path: &Path) -> PathBuf {
    if !path.join(MANIFEST).exists() && path.join("checkpoint").join(MANIFEST).exists() {
        path.join("checkpoint")
    } else {
        path.to_path_buf()
    }
}

fn load_for(cli: &Cli) -> std::result::Result<Learner, Failure> {
    let path = cli
        .checkpoint
        .as_ref()
        .ok_or_else(|| usage("this command requires --checkpoint <path>"))?;
    let learner = load_checkpoint(&checkpoint_dir(path))?;
    if let Some(env) = cli.env {
        if env != learner.config.env {
            return Err(ClamError::Config(format!(
                "checkpoint was trained on {}, not {env}",
                learner.config.env
            ))
            .into());
        }
    }
    Ok(learner)
}

fn schedule(learner: &Learner, episodes: usize, seed: u64) -> Result<Vec<crate::eval::Played>> {
    let policies = learner.config.policy_set()?;
    let env = Env::new(learner.config.env, &learner.config.env_config())?;
    play_schedule(
        &Controller::Learned(learner),
        &env,
        &policies,
        episodes,
        seed,
        true,
        thread_count()?,
    )
}

fn dispatch(cli: &Cli, out: &mut dyn Write) -> std::result::Result<(), Failure> {
    let eval_seed = cli.seed.unwrap_or(0);
    match &cli.command {
        Command::Train {
            episodes,
            policies,
            log_episodes,
        } => {
            if let Some(ckpt) = &cli.checkpoint {
                let dir = out_dir(cli, None);
                let s = resume_run(&checkpoint_dir(ckpt), &dir, *episodes)?;
                writeln!(out, "trained to episode {} into {}", s.episodes, dir.display())?;
                return Ok(());
            }
            let mut c = resolve_config(cli)?;
            if let Some(n) = episodes {
                c.episodes = *n;
            }
            if let Some(p) = policies {
                c.policies = Some(p.clone());
            }
            c.log_episodes |= *log_episodes;
            let dir = out_dir(cli, Some(&c));
            c.out_dir = dir.clone();
            c.validate()?;
            let s = train_run(&c, &dir)?;
            writeln!(
                out,
                "trained {} episodes ({} PPO updates, {} CLAM updates); final return {:.4}, team return {:.4}; output in {}",
                s.episodes,
                s.ppo_updates,
                s.clam_updates,
                s.final_return,
                s.final_team_return,
                dir.display()
            )?;
        }
        Command::Eval {
            episodes,
            seeds,
            controller,
        } => {
            let learner = load_for(cli)?;
            let c = &learner.config;
            let mut env = Env::new(c.env, &c.env_config())?;
            let policies = c.policy_set()?;
            let ctl = match controller {
                ControllerKind::Checkpoint => Controller::Learned(&learner),
                ControllerKind::Random => Controller::Random,
                ControllerKind::Scripted => Controller::scripted(c.env, c.lbf.rows, c.lbf.cols)?,
            };
            let r = evaluate_returns(&ctl, &mut env, &policies, *episodes, seeds)?;
            writeln!(out, "controller,env,mean,ci95,n")?;
            writeln!(
                out,
                "{},{},{},{},{}",
                controller.to_possible_value().expect("no skipped variants").get_name(),
                c.env,
                r.mean,
                r.ci95,
                r.n
            )?;
        }
        Command::Probe { target, episodes } => {
            let learner = load_for(cli)?;
            let played = schedule(&learner, *episodes, eval_seed)?;
            let steps = learner.spec.max_episode_steps;
            let (kind, classes, inputs) = match target {
                ProbeKind::Action => (
                    ProbeTarget::Action,
                    learner.spec.action_count,
                    vec![("embedding+obs", ProbeInput::EmbeddingAndObs), ("obs-only", ProbeInput::ObsOnly)],
                ),
                ProbeKind::Policy => (
                    ProbeTarget::Policy,
                    learner.config.policy_set()?.len(),
                    vec![("embedding", ProbeInput::Embedding)],
                ),
            };
            writeln!(out, "input,step,accuracy,n")?;
            for (name, input) in inputs {
                let ds = probe_dataset(&played, kind, input, classes, steps, eval_seed)?;
                let probe = train_probe(&ds, &ProbeConfig::default(), eval_seed)?;
                for a in probe_accuracy_by_step(&probe, &ds.test, steps)? {
                    writeln!(out, "{name},{},{},{}", a.step, a.accuracy, a.n)?;
                }
            }
        }
        Command::Iicr { steps, episodes } => {
            let learner = load_for(cli)?;
            let played = schedule(&learner, *episodes, eval_seed)?;
            let records = embeddings_at(&played, steps)?;
            writeln!(out, "step,iicr,n")?;
            for row in iicr_by_step(&records, steps)? {
                writeln!(out, "{},{},{}", row.step, row.value, row.n)?;
            }
        }
        Command::ExportEmbeddings {
            episodes,
            steps,
            output,
        } => {
            let learner = load_for(cli)?;
            let played = schedule(&learner, *episodes, eval_seed)?;
            let records = embeddings_at(&played, steps)?;
            let path = match output {
                Some(p) => p.clone(),
                None => {
                    let dir = out_dir(cli, None);
                    std::fs::create_dir_all(&dir)?;
                    dir.join("embeddings.jsonl")
                }
            };
            let mut w = BufWriter::new(File::create(&path)?);
            write_embeddings(&mut w, &records)?;
            w.flush()?;
            writeln!(out, "wrote {} embeddings to {}", records.len(), path.display())?;
        }
        Command::Replay { log } => {
            let file = File::open(log).map_err(|e| ClamError::Config(format!("cannot open {}: {e}", log.display())))?;
            let records = read_jsonl(BufReader::new(file))?;
            writeln!(out, "episode,steps,exact,return")?;
            let mut all_exact = true;
            for r in &records {
                let rep = replay(r)?;
                all_exact &= rep.exact();
                writeln!(
                    out,
                    "{},{},{},{}",
                    rep.episode,
                    rep.steps,
                    rep.exact(),
                    rep.replayed_rewards.iter().sum::<f64>()
                )?;
            }
            if !all_exact {
                return Err(ClamError::Env("replay diverged from the log".into()).into());
            }
        }
    }
    Ok(())
}
