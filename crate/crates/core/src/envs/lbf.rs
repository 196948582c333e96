//! Two-agent level-based foraging on a grid.
//!
//! Agent 0 is the ego agent, agent 1 the modeled teammate. An apple is
//! collected when the loading agents standing in its four neighbouring cells
//! have summed levels at least the apple's level. Each apple is worth its
//! level over the total apple level, split among its loaders in proportion
//! to their levels, so a fully cleared board pays exactly 1 in total.
//!
//! Observation layout (all agents, dimension `7 + 4 * apples`):
//! `[row, col, level, visible, other_row, other_col, other_level,
//!   (apple_row, apple_col, apple_level, collected) * apples]`,
//! positions scaled by `1 / (size - 1)` and levels by `1 / LEVEL_SCALE`.

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use super::{EnvKind, EnvSpec, JointObs, StepOutcome, MAX_EPISODE_STEPS};
use crate::error::{ClamError, Result};

pub const UP: usize = 0;
pub const DOWN: usize = 1;
pub const LEFT: usize = 2;
pub const RIGHT: usize = 3;
pub const STAY: usize = 4;
pub const LOAD: usize = 5;
pub const ACTION_COUNT: usize = 6;
pub const LEVEL_SCALE: f64 = 3.0;

const PLACEMENT_ATTEMPTS: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LbfConfig {
    pub rows: usize,
    pub cols: usize,
    pub apples: usize,
    pub max_agent_level: u32,
    pub max_apple_level: u32,
}

impl Default for LbfConfig {
    fn default() -> Self {
        Self {
            rows: 8,
            cols: 8,
            apples: 4,
            max_agent_level: 2,
            max_apple_level: 3,
        }
    }
}

pub type Cell = (usize, usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LbfAgent {
    pub pos: Cell,
    pub level: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Apple {
    pub pos: Cell,
    pub level: u32,
    pub collected: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LbfState {
    pub rows: usize,
    pub cols: usize,
    pub agents: [LbfAgent; 2],
    pub apples: Vec<Apple>,
    pub step_count: usize,
}

impl LbfState {
    fn occupied_by_apple(&self, cell: Cell) -> bool {
        self.apples.iter().any(|a| !a.collected && a.pos == cell)
    }

    pub fn total_apple_level(&self) -> u32 {
        self.apples.iter().map(|a| a.level).sum()
    }

    pub fn all_collected(&self) -> bool {
        self.apples.iter().all(|a| a.collected)
    }
}

pub fn adjacent(a: Cell, b: Cell) -> bool {
    a.0.abs_diff(b.0) + a.1.abs_diff(b.1) == 1
}

/// Cell reached by `action` from `cell`, if it stays on the grid.
pub fn moved(cell: Cell, action: usize, rows: usize, cols: usize) -> Option<Cell> {
    let (r, c) = cell;
    match action {
        UP if r > 0 => Some((r - 1, c)),
        DOWN if r + 1 < rows => Some((r + 1, c)),
        LEFT if c > 0 => Some((r, c - 1)),
        RIGHT if c + 1 < cols => Some((r, c + 1)),
        _ => None,
    }
}

#[derive(Debug, Clone)]
pub struct Lbf {
    config: LbfConfig,
    state: Option<LbfState>,
}

impl Lbf {
    pub fn new(config: LbfConfig) -> Result<Self> {
        if config.rows < 3 || config.cols < 3 || config.apples == 0 {
            return Err(ClamError::Config(format!("unusable foraging grid {config:?}")));
        }
        if config.max_agent_level == 0 || config.max_apple_level <= config.max_agent_level {
            return Err(ClamError::Config(
                "apple levels must be able to exceed a single agent's level".into(),
            ));
        }
        Ok(Self { config, state: None })
    }

    pub fn config(&self) -> &LbfConfig {
        &self.config
    }

    pub fn obs_dim(&self) -> usize {
        7 + 4 * self.config.apples
    }

    pub fn spec(&self) -> EnvSpec {
        EnvSpec {
            kind: EnvKind::Lbf,
            agent_count: 2,
            modeled_agents: 1,
            ego_obs_dim: self.obs_dim(),
            modeled_obs_dim: self.obs_dim(),
            action_count: ACTION_COUNT,
            max_episode_steps: MAX_EPISODE_STEPS,
            reward_semantics: "level-proportional share of normalized apple value; a cleared board sums to 1".into(),
        }
    }

    pub fn state(&self) -> Option<&LbfState> {
        self.state.as_ref()
    }

    /// Installs an explicit layout (used by tests and replays).
    pub fn set_state(&mut self, state: LbfState) -> JointObs {
        self.state = Some(state);
        self.observe()
    }

    pub fn is_done(&self) -> bool {
        self.state
            .as_ref()
            .is_some_and(|s| s.all_collected() || s.step_count >= MAX_EPISODE_STEPS)
    }

    pub fn reset(&mut self, rng: &mut dyn RngCore) -> Result<JointObs> {
        let cfg = &self.config;
        // Apples live off the border so every apple has four neighbours.
        let interior = (cfg.rows - 2) * (cfg.cols - 2);
        if cfg.apples > interior || cfg.apples + 2 > cfg.rows * cfg.cols {
            return Err(ClamError::Env(format!(
                "cannot place {} apples on a {}x{} grid",
                cfg.apples, cfg.rows, cfg.cols
            )));
        }
        let mut apples: Vec<Apple> = Vec::with_capacity(cfg.apples);
        let mut attempts = 0;
        while apples.len() < cfg.apples {
            attempts += 1;
            if attempts > PLACEMENT_ATTEMPTS {
                return Err(ClamError::Env(format!(
                    "no non-adjacent placement for {} apples on a {}x{} grid",
                    cfg.apples, cfg.rows, cfg.cols
                )));
            }
            let pos = (rng.random_range(1..cfg.rows - 1), rng.random_range(1..cfg.cols - 1));
            if apples.iter().any(|a| a.pos == pos || adjacent(a.pos, pos)) {
                continue;
            }
            apples.push(Apple {
                pos,
                level: 1,
                collected: false,
            });
        }
        let mut agents = [LbfAgent { pos: (0, 0), level: 1 }; 2];
        for i in 0..2 {
            loop {
                let pos = (rng.random_range(0..cfg.rows), rng.random_range(0..cfg.cols));
                if apples.iter().any(|a| a.pos == pos) || agents[..i].iter().any(|a| a.pos == pos) {
                    continue;
                }
                agents[i] = LbfAgent {
                    pos,
                    level: rng.random_range(1..=cfg.max_agent_level),
                };
                break;
            }
        }
        let solo = agents[0].level.max(agents[1].level);
        let team = agents[0].level + agents[1].level;
        let top = cfg.max_apple_level.min(team);
        for a in apples.iter_mut() {
            a.level = rng.random_range(1..=top);
        }
        if apples.iter().all(|a| a.level <= solo) {
            apples[0].level = rng.random_range(solo + 1..=top);
        }
        self.state = Some(LbfState {
            rows: cfg.rows,
            cols: cfg.cols,
            agents,
            apples,
            step_count: 0,
        });
        Ok(self.observe())
    }

    pub fn step(&mut self, ego_action: usize, modeled_action: usize) -> Result<StepOutcome> {
        if self.is_done() {
            return Err(ClamError::EpisodeDone);
        }
        let state = self.state.as_mut().ok_or(ClamError::Env("step before reset".into()))?;
        let actions = [ego_action, modeled_action];

        // Moves resolve in agent-index order against the current board.
        for i in 0..2 {
            if let Some(target) = moved(state.agents[i].pos, actions[i], state.rows, state.cols) {
                let blocked = state.occupied_by_apple(target) || state.agents[1 - i].pos == target;
                if !blocked {
                    state.agents[i].pos = target;
                }
            }
        }

        let total_level = state.total_apple_level() as f64;
        let mut rewards = [0.0; 2];
        let mut consumed = [false; 2];
        for apple in state.apples.iter_mut().filter(|a| !a.collected) {
            let loaders: Vec<usize> = (0..2)
                .filter(|&i| actions[i] == LOAD && !consumed[i] && adjacent(state.agents[i].pos, apple.pos))
                .collect();
            let level_sum: u32 = loaders.iter().map(|&i| state.agents[i].level).sum();
            if loaders.is_empty() || level_sum < apple.level {
                continue;
            }
            apple.collected = true;
            let value = apple.level as f64 / total_level;
            for &i in &loaders {
                rewards[i] += value * state.agents[i].level as f64 / level_sum as f64;
                consumed[i] = true;
            }
        }
        state.step_count += 1;
        let done = state.all_collected() || state.step_count >= MAX_EPISODE_STEPS;
        Ok(StepOutcome {
            obs: self.observe(),
            ego_reward: rewards[0],
            modeled_reward: rewards[1],
            done,
        })
    }

    fn observe(&self) -> JointObs {
        let s = self.state.as_ref().expect("observe after reset");
        JointObs {
            ego: observation(s, 0),
            modeled: vec![observation(s, 1)],
        }
    }
}

pub fn observation(s: &LbfState, agent: usize) -> Vec<f64> {
    let rs = (s.rows - 1) as f64;
    let cs = (s.cols - 1) as f64;
    let me = s.agents[agent];
    let other = s.agents[1 - agent];
    let mut o = Vec::with_capacity(7 + 4 * s.apples.len());
    o.extend([
        me.pos.0 as f64 / rs,
        me.pos.1 as f64 / cs,
        me.level as f64 / LEVEL_SCALE,
        1.0,
        other.pos.0 as f64 / rs,
        other.pos.1 as f64 / cs,
        other.level as f64 / LEVEL_SCALE,
    ]);
    for a in &s.apples {
        o.extend([
            a.pos.0 as f64 / rs,
            a.pos.1 as f64 / cs,
            a.level as f64 / LEVEL_SCALE,
            if a.collected { 1.0 } else { 0.0 },
        ]);
    }
    o
}
