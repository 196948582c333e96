//! Predator-prey on the square arena `[-1, 1]^2`.
//!
//! Three predators (the modeled team) chase one prey (the ego agent) among
//! two circular obstacles. Agents are damped point masses: each of the five
//! actions applies a fixed acceleration along one axis (or none).
//!
//! Ego observation (14): `[pos, vel, predator_rel * 3, obstacle_rel * 2]`.
//! Predator observation (16): `[pos, vel, other_predator_rel * 2, prey_rel,
//! prey_vel, obstacle_rel * 2]`. Relative positions are `other - self`.

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use super::{EnvKind, EnvSpec, JointObs, StepOutcome, MAX_EPISODE_STEPS};
use crate::error::{ClamError, Result};

pub const UP: usize = 0;
pub const DOWN: usize = 1;
pub const LEFT: usize = 2;
pub const RIGHT: usize = 3;
pub const STAY: usize = 4;
pub const ACTION_COUNT: usize = 5;
pub const PREDATORS: usize = 3;
pub const OBSTACLES: usize = 2;
pub const EGO_OBS_DIM: usize = 14;
pub const PREDATOR_OBS_DIM: usize = 16;

pub const CATCH_REWARD: f64 = 10.0;
pub const BUMP_REWARD: f64 = 3.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PpConfig {
    pub dt: f64,
    pub damping: f64,
    pub predator_accel: f64,
    pub prey_accel: f64,
    pub predator_max_speed: f64,
    pub prey_max_speed: f64,
    pub predator_radius: f64,
    pub prey_radius: f64,
    pub obstacle_radius: f64,
    /// Obstacle centres shared by every episode; drawn per episode when absent.
    pub obstacles: Option<[Vec2; OBSTACLES]>,
}

impl Default for PpConfig {
    fn default() -> Self {
        Self {
            dt: 0.1,
            damping: 0.25,
            predator_accel: 3.0,
            prey_accel: 4.0,
            predator_max_speed: 1.0,
            prey_max_speed: 1.3,
            predator_radius: 0.075,
            prey_radius: 0.05,
            obstacle_radius: 0.2,
            obstacles: None,
        }
    }
}

pub type Vec2 = [f64; 2];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Body {
    pub pos: Vec2,
    pub vel: Vec2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PpState {
    pub predators: [Body; PREDATORS],
    pub prey: Body,
    pub obstacles: [Vec2; OBSTACLES],
    pub obstacle_radius: f64,
    pub step_count: usize,
}

pub fn direction(action: usize) -> Vec2 {
    match action {
        UP => [0.0, 1.0],
        DOWN => [0.0, -1.0],
        LEFT => [-1.0, 0.0],
        RIGHT => [1.0, 0.0],
        _ => [0.0, 0.0],
    }
}

pub fn dist(a: Vec2, b: Vec2) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Free-space integration of one body for one step (no walls, no obstacles).
pub fn integrate(body: Body, action: usize, accel: f64, max_speed: f64, cfg: &PpConfig) -> Body {
    let dir = direction(action);
    let mut vel = [
        body.vel[0] * (1.0 - cfg.damping) + dir[0] * accel * cfg.dt,
        body.vel[1] * (1.0 - cfg.damping) + dir[1] * accel * cfg.dt,
    ];
    let speed = (vel[0] * vel[0] + vel[1] * vel[1]).sqrt();
    if speed > max_speed {
        vel = [vel[0] * max_speed / speed, vel[1] * max_speed / speed];
    }
    Body {
        pos: [body.pos[0] + vel[0] * cfg.dt, body.pos[1] + vel[1] * cfg.dt],
        vel,
    }
}

fn confine(mut body: Body, radius: f64, obstacles: &[Vec2], obstacle_radius: f64) -> Body {
    for k in 0..2 {
        if body.pos[k] > 1.0 {
            body.pos[k] = 1.0;
            body.vel[k] = -body.vel[k].abs();
        } else if body.pos[k] < -1.0 {
            body.pos[k] = -1.0;
            body.vel[k] = body.vel[k].abs();
        }
    }
    for &o in obstacles {
        let d = dist(body.pos, o);
        let min = radius + obstacle_radius;
        if d < min && d > 0.0 {
            let n = [(body.pos[0] - o[0]) / d, (body.pos[1] - o[1]) / d];
            body.pos = [o[0] + n[0] * min, o[1] + n[1] * min];
            let vn = body.vel[0] * n[0] + body.vel[1] * n[1];
            if vn < 0.0 {
                body.vel = [body.vel[0] - 2.0 * vn * n[0], body.vel[1] - 2.0 * vn * n[1]];
            }
        }
    }
    // An obstacle push can leave the arena near a wall; clamp again.
    for k in 0..2 {
        body.pos[k] = body.pos[k].clamp(-1.0, 1.0);
    }
    body
}

#[derive(Debug, Clone)]
pub struct PredatorPrey {
    config: PpConfig,
    state: Option<PpState>,
}

impl PredatorPrey {
    pub fn new(config: PpConfig) -> Result<Self> {
        if !(config.dt > 0.0 && (0.0..1.0).contains(&config.damping)) {
            return Err(ClamError::Config(format!("invalid predator-prey physics {config:?}")));
        }
        Ok(Self { config, state: None })
    }

    pub fn config(&self) -> &PpConfig {
        &self.config
    }

    pub fn spec(&self) -> EnvSpec {
        EnvSpec {
            kind: EnvKind::Pp,
            agent_count: PREDATORS + 1,
            modeled_agents: PREDATORS,
            ego_obs_dim: EGO_OBS_DIM,
            modeled_obs_dim: PREDATOR_OBS_DIM,
            action_count: ACTION_COUNT,
            max_episode_steps: MAX_EPISODE_STEPS,
            reward_semantics: "prey -10 / predator +10 per catch; predators -3 each / prey +3 per predator bump".into(),
        }
    }

    pub fn state(&self) -> Option<&PpState> {
        self.state.as_ref()
    }

    pub fn set_state(&mut self, state: PpState) -> JointObs {
        self.state = Some(state);
        self.observe()
    }

    pub fn is_done(&self) -> bool {
        self.state.as_ref().is_some_and(|s| s.step_count >= MAX_EPISODE_STEPS)
    }

    pub fn reset(&mut self, rng: &mut dyn RngCore) -> Result<JointObs> {
        let cfg = &self.config;
        let mut obstacles = cfg.obstacles.unwrap_or([[0.0; 2]; OBSTACLES]);
        for i in 0..OBSTACLES {
            if cfg.obstacles.is_some() {
                break;
            }
            loop {
                let p = [rng.random_range(-0.7..0.7), rng.random_range(-0.7..0.7)];
                if obstacles[..i].iter().all(|&o| dist(o, p) > 3.0 * cfg.obstacle_radius) {
                    obstacles[i] = p;
                    break;
                }
            }
        }
        let mut placed: Vec<(Vec2, f64)> = Vec::new();
        let mut spawn = |radius: f64, rng: &mut dyn RngCore| loop {
            let p = [rng.random_range(-0.95..0.95), rng.random_range(-0.95..0.95)];
            let clear_obstacles = obstacles.iter().all(|&o| dist(o, p) > radius + cfg.obstacle_radius);
            let clear_agents = placed.iter().all(|&(q, r)| dist(q, p) > radius + r + 0.05);
            if clear_obstacles && clear_agents {
                placed.push((p, radius));
                return Body { pos: p, vel: [0.0; 2] };
            }
        };
        let prey = spawn(cfg.prey_radius, rng);
        let predators = [
            spawn(cfg.predator_radius, rng),
            spawn(cfg.predator_radius, rng),
            spawn(cfg.predator_radius, rng),
        ];
        self.state = Some(PpState {
            predators,
            prey,
            obstacles,
            obstacle_radius: cfg.obstacle_radius,
            step_count: 0,
        });
        Ok(self.observe())
    }

    pub fn step(&mut self, prey_action: usize, predator_actions: &[usize]) -> Result<StepOutcome> {
        if self.is_done() {
            return Err(ClamError::EpisodeDone);
        }
        let cfg = self.config.clone();
        let s = self.state.as_mut().ok_or(ClamError::Env("step before reset".into()))?;
        let prey = integrate(s.prey, prey_action, cfg.prey_accel, cfg.prey_max_speed, &cfg);
        s.prey = confine(prey, cfg.prey_radius, &s.obstacles, s.obstacle_radius);
        for (p, &a) in s.predators.iter_mut().zip(predator_actions) {
            let moved = integrate(*p, a, cfg.predator_accel, cfg.predator_max_speed, &cfg);
            *p = confine(moved, cfg.predator_radius, &s.obstacles, s.obstacle_radius);
        }
        s.step_count += 1;
        let (ego_reward, predator_rewards) = collision_rewards(s, &cfg);
        let done = s.step_count >= MAX_EPISODE_STEPS;
        Ok(StepOutcome {
            obs: self.observe(),
            ego_reward,
            modeled_reward: predator_rewards.iter().sum(),
            done,
        })
    }

    fn observe(&self) -> JointObs {
        let s = self.state.as_ref().expect("observe after reset");
        JointObs {
            ego: prey_observation(s),
            modeled: (0..PREDATORS).map(|i| predator_observation(s, i)).collect(),
        }
    }
}

/// Prey reward and per-predator rewards for the current overlaps.
pub fn collision_rewards(s: &PpState, cfg: &PpConfig) -> (f64, [f64; PREDATORS]) {
    let mut prey = 0.0;
    let mut predators = [0.0; PREDATORS];
    for (i, p) in s.predators.iter().enumerate() {
        if dist(p.pos, s.prey.pos) < cfg.predator_radius + cfg.prey_radius {
            prey -= CATCH_REWARD;
            predators[i] += CATCH_REWARD;
        }
    }
    for i in 0..PREDATORS {
        for j in i + 1..PREDATORS {
            if dist(s.predators[i].pos, s.predators[j].pos) < 2.0 * cfg.predator_radius {
                predators[i] -= BUMP_REWARD;
                predators[j] -= BUMP_REWARD;
                prey += BUMP_REWARD;
            }
        }
    }
    (prey, predators)
}

fn rel(a: Vec2, origin: Vec2) -> [f64; 2] {
    [a[0] - origin[0], a[1] - origin[1]]
}

pub fn prey_observation(s: &PpState) -> Vec<f64> {
    let me = s.prey;
    let mut o = Vec::with_capacity(EGO_OBS_DIM);
    o.extend(me.pos);
    o.extend(me.vel);
    for p in &s.predators {
        o.extend(rel(p.pos, me.pos));
    }
    for &ob in &s.obstacles {
        o.extend(rel(ob, me.pos));
    }
    o
}

pub fn predator_observation(s: &PpState, i: usize) -> Vec<f64> {
    let me = s.predators[i];
    let mut o = Vec::with_capacity(PREDATOR_OBS_DIM);
    o.extend(me.pos);
    o.extend(me.vel);
    for (j, p) in s.predators.iter().enumerate() {
        if j != i {
            o.extend(rel(p.pos, me.pos));
        }
    }
    o.extend(rel(s.prey.pos, me.pos));
    o.extend(s.prey.vel);
    for &ob in &s.obstacles {
        o.extend(rel(ob, me.pos));
    }
    o
}
