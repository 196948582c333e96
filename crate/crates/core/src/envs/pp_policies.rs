//! Hand-coded predator-team policies. Each receives the three predator
//! observations in predator order and returns one action per predator.

use rand::{Rng, RngCore};

use super::policy::FixedPolicy;
use super::pp::{dist, integrate, Body, PpConfig, Vec2, ACTION_COUNT, PREDATORS, STAY};

/// Decoded predator observation, in absolute coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredatorView {
    pub me: Body,
    pub prey: Body,
    pub others: [Vec2; 2],
    pub obstacles: [Vec2; 2],
}

impl PredatorView {
    pub fn decode(o: &[f64]) -> Self {
        let pos = [o[0], o[1]];
        let abs = |k: usize| [pos[0] + o[k], pos[1] + o[k + 1]];
        Self {
            me: Body {
                pos,
                vel: [o[2], o[3]],
            },
            others: [abs(4), abs(6)],
            prey: Body {
                pos: abs(8),
                vel: [o[10], o[11]],
            },
            obstacles: [abs(12), abs(14)],
        }
    }
}

/// Action whose one-step free-space outcome lands closest to `target`.
/// Ties go to the lower action index.
pub fn greedy_toward(me: Body, target: Vec2, cfg: &PpConfig) -> usize {
    (0..ACTION_COUNT)
        .map(|a| {
            let next = integrate(me, a, cfg.predator_accel, cfg.predator_max_speed, cfg);
            (a, dist(next.pos, target))
        })
        .fold((STAY, f64::INFINITY), |best, (a, d)| if d < best.1 { (a, d) } else { best })
        .0
}

fn offset(p: Vec2, d: Vec2, s: f64) -> Vec2 {
    [p[0] + d[0] * s, p[1] + d[1] * s]
}

fn unit(from: Vec2, to: Vec2) -> Vec2 {
    let d = dist(from, to);
    if d < 1e-9 {
        [1.0, 0.0]
    } else {
        [(to[0] - from[0]) / d, (to[1] - from[1]) / d]
    }
}

fn perp(v: Vec2) -> Vec2 {
    [-v[1], v[0]]
}

fn views(obs: &[Vec<f64>]) -> Vec<PredatorView> {
    obs.iter().map(|o| PredatorView::decode(o)).collect()
}

macro_rules! pp_policy {
    ($ty:ident, $name:literal) => {
        #[derive(Debug, Clone)]
        pub struct $ty {
            pub physics: PpConfig,
        }

        impl FixedPolicy for $ty {
            fn name(&self) -> &'static str {
                $name
            }

            fn act(&self, obs: &[Vec<f64>], rng: &mut dyn RngCore) -> Vec<usize> {
                let v = views(obs);
                self.decide(&v, rng)
            }
        }
    };
}

pp_policy!(DirectPursuit, "all-direct-pursuit");
pp_policy!(Pincer, "pincer");
pp_policy!(LeadIntercept, "lead-intercept");
pp_policy!(ChaserAndBlockers, "one-chaser-two-blockers");
pp_policy!(SpreadPatrol, "spread-patrol");
pp_policy!(LazyPursuit, "lazy-pursuit");
pp_policy!(UniformRandom, "random");
pp_policy!(ObstacleHugger, "obstacle-hugger");
pp_policy!(PreyMirroring, "prey-mirroring");
pp_policy!(RotatingRoles, "rotating-roles");

impl DirectPursuit {
    fn decide(&self, v: &[PredatorView], _: &mut dyn RngCore) -> Vec<usize> {
        v.iter().map(|p| greedy_toward(p.me, p.prey.pos, &self.physics)).collect()
    }
}

impl Pincer {
    /// One predator from behind, two on the flanks of the prey.
    fn decide(&self, v: &[PredatorView], _: &mut dyn RngCore) -> Vec<usize> {
        let offsets = [[0.0, 0.0], [-0.3, 0.0], [0.3, 0.0]];
        v.iter()
            .zip(offsets)
            .map(|(p, o)| greedy_toward(p.me, offset(p.prey.pos, o, 1.0), &self.physics))
            .collect()
    }
}

impl LeadIntercept {
    fn decide(&self, v: &[PredatorView], _: &mut dyn RngCore) -> Vec<usize> {
        v.iter()
            .map(|p| greedy_toward(p.me, offset(p.prey.pos, p.prey.vel, 0.5), &self.physics))
            .collect()
    }
}

impl ChaserAndBlockers {
    fn decide(&self, v: &[PredatorView], _: &mut dyn RngCore) -> Vec<usize> {
        let chase_dir = unit(v[0].me.pos, v[0].prey.pos);
        let side = perp(chase_dir);
        v.iter()
            .enumerate()
            .map(|(i, p)| {
                let target = match i {
                    0 => p.prey.pos,
                    1 => offset(offset(p.prey.pos, chase_dir, 0.3), side, 0.3),
                    _ => offset(offset(p.prey.pos, chase_dir, 0.3), side, -0.3),
                };
                greedy_toward(p.me, target, &self.physics)
            })
            .collect()
    }
}

impl SpreadPatrol {
    /// Guards three posts and only charges a prey that comes close.
    fn decide(&self, v: &[PredatorView], _: &mut dyn RngCore) -> Vec<usize> {
        let posts = [[0.0, 0.6], [-0.52, -0.3], [0.52, -0.3]];
        v.iter()
            .zip(posts)
            .map(|(p, post)| {
                let target = if dist(p.me.pos, p.prey.pos) < 0.5 { p.prey.pos } else { post };
                greedy_toward(p.me, target, &self.physics)
            })
            .collect()
    }
}

impl LazyPursuit {
    fn decide(&self, v: &[PredatorView], rng: &mut dyn RngCore) -> Vec<usize> {
        v.iter()
            .map(|p| {
                if rng.random_bool(0.5) {
                    STAY
                } else {
                    greedy_toward(p.me, p.prey.pos, &self.physics)
                }
            })
            .collect()
    }
}

impl UniformRandom {
    fn decide(&self, v: &[PredatorView], rng: &mut dyn RngCore) -> Vec<usize> {
        v.iter().map(|_| rng.random_range(0..ACTION_COUNT)).collect()
    }
}

impl ObstacleHugger {
    /// Waits on the rim of the obstacle nearest the prey, facing it.
    fn decide(&self, v: &[PredatorView], _: &mut dyn RngCore) -> Vec<usize> {
        v.iter()
            .enumerate()
            .map(|(i, p)| {
                let ob = if dist(p.obstacles[0], p.prey.pos) <= dist(p.obstacles[1], p.prey.pos) {
                    p.obstacles[0]
                } else {
                    p.obstacles[1]
                };
                let d = unit(ob, p.prey.pos);
                let angle = (i as f64 - 1.0) * 0.8;
                let (s, c) = angle.sin_cos();
                let rotated = [d[0] * c - d[1] * s, d[0] * s + d[1] * c];
                let radius = self.physics.obstacle_radius + self.physics.predator_radius + 0.05;
                greedy_toward(p.me, offset(ob, rotated, radius), &self.physics)
            })
            .collect()
    }
}

impl PreyMirroring {
    /// Accelerates along the prey's current heading.
    fn decide(&self, v: &[PredatorView], _: &mut dyn RngCore) -> Vec<usize> {
        v.iter()
            .map(|p| {
                let speed = (p.prey.vel[0].powi(2) + p.prey.vel[1].powi(2)).sqrt();
                if speed < 1e-3 {
                    STAY
                } else {
                    greedy_toward(p.me, offset(p.me.pos, p.prey.vel, 1.0 / speed), &self.physics)
                }
            })
            .collect()
    }
}

impl RotatingRoles {
    /// Whoever is closest chases; the other two flank on either side.
    fn decide(&self, v: &[PredatorView], _: &mut dyn RngCore) -> Vec<usize> {
        let chaser = (0..v.len())
            .min_by(|&a, &b| {
                dist(v[a].me.pos, v[a].prey.pos)
                    .partial_cmp(&dist(v[b].me.pos, v[b].prey.pos))
                    .unwrap_or(std::cmp::Ordering::Equal)
            })
            .unwrap_or(0);
        let dir = unit(v[chaser].me.pos, v[chaser].prey.pos);
        let side = perp(dir);
        let mut flank = 0.35;
        v.iter()
            .enumerate()
            .map(|(i, p)| {
                let target = if i == chaser {
                    p.prey.pos
                } else {
                    let t = offset(p.prey.pos, side, flank);
                    flank = -flank;
                    t
                };
                greedy_toward(p.me, target, &self.physics)
            })
            .collect()
    }
}

/// The ten predator-team policies, in label order.
pub fn all(cfg: &PpConfig) -> Vec<Box<dyn FixedPolicy>> {
    let physics = cfg.clone();
    vec![
        Box::new(DirectPursuit { physics: physics.clone() }),
        Box::new(Pincer { physics: physics.clone() }),
        Box::new(LeadIntercept { physics: physics.clone() }),
        Box::new(ChaserAndBlockers { physics: physics.clone() }),
        Box::new(SpreadPatrol { physics: physics.clone() }),
        Box::new(LazyPursuit { physics: physics.clone() }),
        Box::new(UniformRandom { physics: physics.clone() }),
        Box::new(ObstacleHugger { physics: physics.clone() }),
        Box::new(PreyMirroring { physics: physics.clone() }),
        Box::new(RotatingRoles { physics }),
    ]
}

const _: () = assert!(PREDATORS == 3);
