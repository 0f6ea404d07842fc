//! Discrete predator-prey.
//!
//! Rule table, applied in order each step:
//!
//! 1. Predators move in agent-id order. A move into a wall or into a cell held
//!    by another predator leaves the predator in place.
//! 2. If any predator shares the prey's cell the prey is caught.
//! 3. Otherwise the prey draws one of the five moves uniformly; walls and
//!    predator-held cells block it.
//! 4. The team reward is `capture_reward` (default 1) on the step the prey is
//!    caught and 0 otherwise. The episode ends on capture or after
//!    `max_steps` steps.
//!
//! A predator's frame is its `(2r+1)²` egocentric window (prey 1, other
//! predator 0.5, empty 0, outside the grid −1) followed by its own position
//! scaled to `[−1, 1]`. The global state one-hot encodes the x and y
//! coordinates of every predator followed by the prey.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    apply_move, axis_one_hot, norm_coord, stacked_labels, EnvConfig, EnvKind, EnvSpec, FrameStack,
    Observation, Pos, StepResult, GRID_ACTIONS,
};
use crate::error::{Error, Result};

const PREY: f64 = 1.0;
const OTHER_PREDATOR: f64 = 0.5;
const WALL: f64 = -1.0;

pub(crate) fn validate(c: &EnvConfig) -> Result<()> {
    let n = c.num_agents();
    if n + 1 > c.grid_size * c.grid_size {
        return Err(Error::config("num_agents_per_team", "more entities than grid cells"));
    }
    if let Some(&r) = c.engagement_params.get("capture_reward") {
        if !r.is_finite() {
            return Err(Error::config("engagement_params.capture_reward", "must be finite"));
        }
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct PredatorPreyState {
    spec: EnvSpec,
    grid: usize,
    radius: i32,
    max_steps: usize,
    capture_reward: f64,
    step: usize,
    predators: Vec<Pos>,
    prey: Pos,
    done: bool,
    rng: ChaCha8Rng,
    frames: FrameStack,
}

impl PredatorPreyState {
    pub(crate) fn reset(c: &EnvConfig) -> Self {
        let grid = c.grid_size;
        let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
        let n = c.num_agents();
        let mut taken: Vec<Pos> = Vec::with_capacity(n + 1);
        while taken.len() < n + 1 {
            let p = (rng.gen_range(0..grid as i32), rng.gen_range(0..grid as i32));
            if !taken.contains(&p) {
                taken.push(p);
            }
        }
        let prey = taken.pop().unwrap();
        let radius = c.view_radius as i32;
        let frame_labels = frame_labels(radius);
        let spec = EnvSpec {
            kind: EnvKind::PredatorPrey,
            agent_types: c.agent_types(),
            type_names: c.num_agents_per_team.keys().cloned().collect(),
            num_actions: GRID_ACTIONS.len(),
            obs_dim: frame_labels.len() * c.frame_stack,
            state_dim: 2 * grid * (n + 1),
            obs_labels: stacked_labels(&frame_labels, c.frame_stack),
        };
        let mut s = Self {
            spec,
            grid,
            radius,
            max_steps: c.max_steps,
            capture_reward: c.engagement_params.get("capture_reward").copied().unwrap_or(1.0),
            step: 0,
            predators: taken,
            prey,
            done: false,
            rng,
            frames: FrameStack::new(c.frame_stack, Vec::new()),
        };
        s.frames = FrameStack::new(c.frame_stack, s.frames_now());
        s
    }

    pub fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    pub fn step_count(&self) -> usize {
        self.step
    }

    pub fn predators(&self) -> &[Pos] {
        &self.predators
    }

    pub fn prey(&self) -> Pos {
        self.prey
    }

    /// Places entities directly; used to set up rule-table scenarios.
    pub fn set_positions(&mut self, predators: &[Pos], prey: Pos) {
        assert_eq!(predators.len(), self.predators.len());
        self.predators = predators.to_vec();
        self.prey = prey;
        self.frames = FrameStack::new(self.frames_h(), self.frames_now());
    }

    fn frames_h(&self) -> usize {
        self.spec.obs_dim / frame_len(self.radius)
    }

    pub fn observations(&self) -> Vec<Observation> {
        self.frames.observations()
    }

    pub fn global_state(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.spec.state_dim);
        for &p in self.predators.iter().chain(std::iter::once(&self.prey)) {
            axis_one_hot(&mut out, p, self.grid);
        }
        out
    }

    fn caught(&self) -> bool {
        self.predators.contains(&self.prey)
    }

    pub(crate) fn step(&mut self, actions: &[usize]) -> Result<StepResult> {
        if self.done {
            return Err(Error::contract("step called on a finished episode"));
        }
        let g = self.grid as i32;
        for i in 0..self.predators.len() {
            let target = apply_move(self.predators[i], actions[i], g);
            let blocked = self
                .predators
                .iter()
                .enumerate()
                .any(|(j, &p)| j != i && p == target);
            if !blocked {
                self.predators[i] = target;
            }
        }
        let mut captured = self.caught();
        if !captured {
            let a = self.rng.gen_range(0..GRID_ACTIONS.len());
            let target = apply_move(self.prey, a, g);
            if !self.predators.contains(&target) {
                self.prey = target;
            }
            captured = self.caught();
        }
        self.step += 1;
        self.done = captured || self.step >= self.max_steps;
        self.frames.push(self.frames_now());
        Ok(StepResult {
            observations: self.observations(),
            global_state: self.global_state(),
            reward: if captured { self.capture_reward } else { 0.0 },
            done: self.done,
        })
    }

    fn frames_now(&self) -> Vec<Vec<f64>> {
        (0..self.predators.len()).map(|i| self.frame(i)).collect()
    }

    fn frame(&self, i: usize) -> Vec<f64> {
        let (x0, y0) = self.predators[i];
        let r = self.radius;
        let g = self.grid as i32;
        let mut out = Vec::with_capacity(frame_len(r));
        for dy in -r..=r {
            for dx in -r..=r {
                let c = (x0 + dx, y0 + dy);
                let v = if c.0 < 0 || c.1 < 0 || c.0 >= g || c.1 >= g {
                    WALL
                } else if c == self.prey {
                    PREY
                } else if self
                    .predators
                    .iter()
                    .enumerate()
                    .any(|(j, &p)| j != i && p == c)
                {
                    OTHER_PREDATOR
                } else {
                    0.0
                };
                out.push(v);
            }
        }
        out.push(norm_coord(x0, self.grid));
        out.push(norm_coord(y0, self.grid));
        out
    }
}

fn frame_len(r: i32) -> usize {
    let w = (2 * r + 1) as usize;
    w * w + 2
}

fn frame_labels(r: i32) -> Vec<String> {
    let mut out = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            out.push(format!("cell({dx},{dy})"));
        }
    }
    out.push("self_x".into());
    out.push("self_y".into());
    out
}
