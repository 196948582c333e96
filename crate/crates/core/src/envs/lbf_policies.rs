//! Hand-coded teammate policies for level-based foraging.
//!
//! All of them read only the teammate's own observation vector.

use rand::{Rng, RngCore};

use super::lbf::{adjacent, moved, Cell, LbfConfig, ACTION_COUNT, DOWN, LEFT, LEVEL_SCALE, LOAD, RIGHT, STAY, UP};
use super::policy::FixedPolicy;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ApplePerception {
    pub pos: Cell,
    pub level: u32,
    pub collected: bool,
}

/// Decoded foraging observation.
#[derive(Debug, Clone, PartialEq)]
pub struct LbfView {
    pub rows: usize,
    pub cols: usize,
    pub me: Cell,
    pub my_level: u32,
    pub other: Cell,
    pub other_level: u32,
    pub apples: Vec<ApplePerception>,
}

impl LbfView {
    pub fn decode(obs: &[f64], rows: usize, cols: usize) -> Self {
        let cell = |r: f64, c: f64| {
            (
                (r * (rows - 1) as f64).round() as usize,
                (c * (cols - 1) as f64).round() as usize,
            )
        };
        let level = |x: f64| (x * LEVEL_SCALE).round() as u32;
        let apples = obs[7..]
            .chunks(4)
            .map(|a| ApplePerception {
                pos: cell(a[0], a[1]),
                level: level(a[2]),
                collected: a[3] > 0.5,
            })
            .collect();
        Self {
            rows,
            cols,
            me: cell(obs[0], obs[1]),
            my_level: level(obs[2]),
            other: cell(obs[4], obs[5]),
            other_level: level(obs[6]),
            apples,
        }
    }

    fn free(&self, cell: Cell) -> bool {
        cell != self.other && !self.apples.iter().any(|a| !a.collected && a.pos == cell)
    }

    fn live(&self) -> impl Iterator<Item = (usize, &ApplePerception)> {
        self.apples.iter().enumerate().filter(|(_, a)| !a.collected)
    }

    fn adjacent_live(&self, pos: Cell) -> impl Iterator<Item = &ApplePerception> + '_ {
        self.apples.iter().filter(move |a| !a.collected && adjacent(a.pos, pos))
    }
}

fn manhattan(a: Cell, b: Cell) -> usize {
    a.0.abs_diff(b.0) + a.1.abs_diff(b.1)
}

/// First legal move that shrinks the Manhattan distance to `target`,
/// vertical moves tried before horizontal ones; `STAY` if none exists.
pub fn step_toward(view: &LbfView, target: Cell) -> usize {
    let here = manhattan(view.me, target);
    for action in [UP, DOWN, LEFT, RIGHT] {
        if let Some(next) = moved(view.me, action, view.rows, view.cols) {
            if manhattan(next, target) < here && view.free(next) {
                return action;
            }
        }
    }
    STAY
}

/// Walk to the closest free neighbour cell of apple `idx` and load once there.
pub fn approach_and_load(view: &LbfView, idx: usize) -> usize {
    let apple = view.apples[idx];
    if adjacent(view.me, apple.pos) {
        return LOAD;
    }
    let best = [UP, DOWN, LEFT, RIGHT]
        .into_iter()
        .filter_map(|a| moved(apple.pos, a, view.rows, view.cols))
        .filter(|&c| view.free(c) || c == view.me)
        .min_by_key(|&c| manhattan(view.me, c));
    match best {
        Some(cell) => step_toward(view, cell),
        None => STAY,
    }
}

fn pick_by<K: Ord>(view: &LbfView, key: impl Fn(&ApplePerception) -> K) -> Option<usize> {
    view.live().min_by_key(|(i, a)| (key(a), *i)).map(|(i, _)| i)
}

fn solo_load(view: &LbfView) -> bool {
    view.adjacent_live(view.me).any(|a| a.level <= view.my_level)
}

macro_rules! lbf_policy {
    ($ty:ident, $name:literal) => {
        #[derive(Debug, Clone)]
        pub struct $ty {
            pub rows: usize,
            pub cols: usize,
        }

        impl FixedPolicy for $ty {
            fn name(&self) -> &'static str {
                $name
            }

            fn act(&self, obs: &[Vec<f64>], rng: &mut dyn RngCore) -> Vec<usize> {
                let view = LbfView::decode(&obs[0], self.rows, self.cols);
                vec![self.decide(&view, rng)]
            }
        }
    };
}

lbf_policy!(NearestApple, "nearest-apple");
lbf_policy!(HighestLevelFirst, "highest-level-first");
lbf_policy!(RowSweep, "row-sweep");
lbf_policy!(ColumnSweep, "column-sweep");
lbf_policy!(CooperativeWaiter, "cooperative-waiter");
lbf_policy!(Follower, "follower");
lbf_policy!(Lazy, "lazy");
lbf_policy!(UniformRandom, "random");
lbf_policy!(PerimeterPatrol, "perimeter-patrol");
lbf_policy!(FarthestApple, "farthest-apple");

impl NearestApple {
    fn decide(&self, v: &LbfView, _: &mut dyn RngCore) -> usize {
        pick_by(v, |a| manhattan(v.me, a.pos)).map_or(STAY, |i| approach_and_load(v, i))
    }
}

impl HighestLevelFirst {
    fn decide(&self, v: &LbfView, _: &mut dyn RngCore) -> usize {
        pick_by(v, |a| (u32::MAX - a.level, manhattan(v.me, a.pos))).map_or(STAY, |i| approach_and_load(v, i))
    }
}

impl FarthestApple {
    fn decide(&self, v: &LbfView, _: &mut dyn RngCore) -> usize {
        pick_by(v, |a| usize::MAX - manhattan(v.me, a.pos)).map_or(STAY, |i| approach_and_load(v, i))
    }
}

impl CooperativeWaiter {
    /// Parks next to the biggest apple it cannot lift alone and keeps loading.
    fn decide(&self, v: &LbfView, rng: &mut dyn RngCore) -> usize {
        match pick_by(v, |a| (u32::MAX - a.level, manhattan(v.me, a.pos))) {
            Some(i) if v.apples[i].level > v.my_level => approach_and_load(v, i),
            _ => NearestApple {
                rows: self.rows,
                cols: self.cols,
            }
            .decide(v, rng),
        }
    }
}

fn sweep_move(v: &LbfView, primary_forward: usize, primary_back: usize, advance: usize, along_rows: bool) -> usize {
    let (lane, pos, len) = if along_rows {
        (v.me.0, v.me.1, v.cols)
    } else {
        (v.me.1, v.me.0, v.rows)
    };
    let wanted = if lane % 2 == 0 {
        if pos + 1 < len {
            primary_forward
        } else {
            advance
        }
    } else if pos > 0 {
        primary_back
    } else {
        advance
    };
    let next = moved(v.me, wanted, v.rows, v.cols);
    match next {
        Some(c) if v.free(c) => wanted,
        // Sidestep an obstacle by advancing to the next lane.
        _ => match moved(v.me, advance, v.rows, v.cols) {
            Some(c) if v.free(c) => advance,
            _ => STAY,
        },
    }
}

impl RowSweep {
    fn decide(&self, v: &LbfView, _: &mut dyn RngCore) -> usize {
        if solo_load(v) {
            return LOAD;
        }
        sweep_move(v, RIGHT, LEFT, DOWN, true)
    }
}

impl ColumnSweep {
    fn decide(&self, v: &LbfView, _: &mut dyn RngCore) -> usize {
        if solo_load(v) {
            return LOAD;
        }
        sweep_move(v, DOWN, UP, RIGHT, false)
    }
}

impl Follower {
    /// Shadows the teammate and loads whatever apple they share a border with.
    fn decide(&self, v: &LbfView, _: &mut dyn RngCore) -> usize {
        let shared = v.adjacent_live(v.me).any(|a| adjacent(a.pos, v.other));
        if shared || solo_load(v) {
            return LOAD;
        }
        step_toward(v, v.other)
    }
}

impl Lazy {
    fn decide(&self, _: &LbfView, rng: &mut dyn RngCore) -> usize {
        if rng.random_bool(0.5) {
            STAY
        } else {
            rng.random_range(0..ACTION_COUNT)
        }
    }
}

impl UniformRandom {
    fn decide(&self, _: &LbfView, rng: &mut dyn RngCore) -> usize {
        rng.random_range(0..ACTION_COUNT)
    }
}

impl PerimeterPatrol {
    /// Clockwise lap of the border, loading apples it can lift alone.
    fn decide(&self, v: &LbfView, _: &mut dyn RngCore) -> usize {
        if solo_load(v) {
            return LOAD;
        }
        let (r, c) = v.me;
        let (last_r, last_c) = (v.rows - 1, v.cols - 1);
        let on_border = r == 0 || c == 0 || r == last_r || c == last_c;
        let wanted = if !on_border {
            let to_border = [(r, UP), (last_r - r, DOWN), (c, LEFT), (last_c - c, RIGHT)];
            to_border.into_iter().min_by_key(|&(d, _)| d).map_or(STAY, |(_, a)| a)
        } else if r == 0 && c < last_c {
            RIGHT
        } else if c == last_c && r < last_r {
            DOWN
        } else if r == last_r && c > 0 {
            LEFT
        } else {
            UP
        };
        match moved(v.me, wanted, v.rows, v.cols) {
            Some(cell) if v.free(cell) => wanted,
            _ => STAY,
        }
    }
}

/// The ten foraging teammates, in label order.
pub fn all(cfg: &LbfConfig) -> Vec<Box<dyn FixedPolicy>> {
    let (rows, cols) = (cfg.rows, cfg.cols);
    vec![
        Box::new(NearestApple { rows, cols }),
        Box::new(HighestLevelFirst { rows, cols }),
        Box::new(RowSweep { rows, cols }),
        Box::new(ColumnSweep { rows, cols }),
        Box::new(CooperativeWaiter { rows, cols }),
        Box::new(Follower { rows, cols }),
        Box::new(Lazy { rows, cols }),
        Box::new(UniformRandom { rows, cols }),
        Box::new(PerimeterPatrol { rows, cols }),
        Box::new(FarthestApple { rows, cols }),
    ]
}
