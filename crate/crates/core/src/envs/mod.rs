//! Seeded dec-POMDP environments behind one interface.
//!
//! Every environment hands out one egocentric observation per controlled
//! agent, a global state vector for the central critic, and a single team
//! reward. Observations are frame-stacked over the last `frame_stack` frames
//! (oldest first); at reset the first frame is repeated.

mod ctf;
mod matrix;
mod predator_prey;
pub mod record;
pub mod schema;

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use ctf::CtfState;
pub use matrix::{matrix_game_enumerate, GameTable, JointRow, MatrixGameSpec, MatrixState};
pub use predator_prey::PredatorPreyState;

/// Discrete moves shared by the grid environments.
pub const GRID_ACTIONS: [&str; 5] = ["stay", "up", "down", "left", "right"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    PredatorPrey,
    Ctf,
    MatrixGame,
}

impl EnvKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            EnvKind::PredatorPrey => "predator_prey",
            EnvKind::Ctf => "ctf",
            EnvKind::MatrixGame => "matrix_game",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvConfig {
    pub env_kind: EnvKind,
    pub grid_size: usize,
    /// Controlled agents per type name. Iteration order (sorted by name) fixes
    /// agent ids.
    pub num_agents_per_team: BTreeMap<String, usize>,
    pub max_steps: usize,
    pub seed: u64,
    #[serde(default)]
    pub engagement_params: BTreeMap<String, f64>,
    #[serde(default = "default_frame_stack")]
    pub frame_stack: usize,
    #[serde(default = "default_view_radius")]
    pub view_radius: usize,
    #[serde(default)]
    pub matrix_game: Option<MatrixGameSpec>,
}

fn default_frame_stack() -> usize {
    4
}

fn default_view_radius() -> usize {
    2
}

impl EnvConfig {
    /// 7×7 grid, three predators, one random prey.
    pub fn predator_prey() -> Self {
        Self {
            env_kind: EnvKind::PredatorPrey,
            grid_size: 7,
            num_agents_per_team: BTreeMap::from([("predator".to_string(), 3)]),
            max_steps: 50,
            seed: 0,
            engagement_params: BTreeMap::new(),
            frame_stack: default_frame_stack(),
            view_radius: default_view_radius(),
            matrix_game: None,
        }
    }

    /// 12×12 grid, 5-vs-5 with two convoy and three normal agents per side.
    pub fn ctf() -> Self {
        Self {
            env_kind: EnvKind::Ctf,
            grid_size: 12,
            num_agents_per_team: BTreeMap::from([
                ("convoy".to_string(), 2),
                ("normal".to_string(), 3),
            ]),
            max_steps: 150,
            seed: 0,
            engagement_params: ctf::default_engagement_params(),
            frame_stack: default_frame_stack(),
            view_radius: default_view_radius(),
            matrix_game: None,
        }
    }

    pub fn matrix_game(spec: MatrixGameSpec) -> Self {
        Self {
            env_kind: EnvKind::MatrixGame,
            grid_size: 4,
            num_agents_per_team: BTreeMap::from([("player".to_string(), 2)]),
            max_steps: 1,
            seed: 0,
            engagement_params: BTreeMap::new(),
            frame_stack: 1,
            view_radius: 0,
            matrix_game: Some(spec),
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn num_agents(&self) -> usize {
        self.num_agents_per_team.values().sum()
    }

    /// Type name of each controlled agent, by agent id.
    pub fn agent_types(&self) -> Vec<String> {
        self.num_agents_per_team
            .iter()
            .flat_map(|(t, &n)| std::iter::repeat(t.clone()).take(n))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_steps < 1 {
            return Err(Error::config("max_steps", "must be at least 1"));
        }
        if self.frame_stack < 1 {
            return Err(Error::config("frame_stack", "must be at least 1"));
        }
        if self.num_agents() == 0 {
            return Err(Error::config("num_agents_per_team", "no controlled agents"));
        }
        match self.env_kind {
            EnvKind::PredatorPrey | EnvKind::Ctf => {
                if self.grid_size < 4 {
                    return Err(Error::config(
                        "grid_size",
                        format!("grid environments need grid_size >= 4, got {}", self.grid_size),
                    ));
                }
            }
            EnvKind::MatrixGame => {}
        }
        match self.env_kind {
            EnvKind::PredatorPrey => predator_prey::validate(self),
            EnvKind::Ctf => ctf::validate(self),
            EnvKind::MatrixGame => matrix::validate(self),
        }
    }
}

/// Static facts about an environment instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub kind: EnvKind,
    /// Type name per controlled agent.
    pub agent_types: Vec<String>,
    /// Distinct type names, sorted.
    pub type_names: Vec<String>,
    pub num_actions: usize,
    pub obs_dim: usize,
    pub state_dim: usize,
    /// One label per observation element.
    pub obs_labels: Vec<String>,
}

impl EnvSpec {
    pub fn agents_of_type(&self, ty: &str) -> Vec<usize> {
        (0..self.agent_types.len())
            .filter(|&i| self.agent_types[i] == ty)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub agent_id: usize,
    pub vector: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepResult {
    pub observations: Vec<Observation>,
    pub global_state: Vec<f64>,
    pub reward: f64,
    pub done: bool,
}

/// Per-agent rolling window of the last `h` frames.
#[derive(Debug, Clone)]
pub(crate) struct FrameStack {
    h: usize,
    frames: Vec<VecDeque<Vec<f64>>>,
}

impl FrameStack {
    pub(crate) fn new(h: usize, first: Vec<Vec<f64>>) -> Self {
        let frames = first
            .into_iter()
            .map(|f| std::iter::repeat(f).take(h).collect())
            .collect();
        Self { h, frames }
    }

    pub(crate) fn push(&mut self, frames: Vec<Vec<f64>>) {
        for (q, f) in self.frames.iter_mut().zip(frames) {
            q.pop_front();
            q.push_back(f);
        }
        debug_assert!(self.frames.iter().all(|q| q.len() == self.h));
    }

    pub(crate) fn observations(&self) -> Vec<Observation> {
        self.frames
            .iter()
            .enumerate()
            .map(|(agent_id, q)| Observation {
                agent_id,
                vector: q.iter().flatten().copied().collect(),
            })
            .collect()
    }
}

/// Labels for a stacked observation given the labels of one frame.
pub(crate) fn stacked_labels(frame: &[String], h: usize) -> Vec<String> {
    (0..h)
        .flat_map(|k| frame.iter().map(move |l| format!("t-{}:{l}", h - 1 - k)))
        .collect()
}

#[derive(Debug, Clone)]
pub enum EnvState {
    PredatorPrey(PredatorPreyState),
    Ctf(CtfState),
    Matrix(MatrixState),
}

impl EnvState {
    pub fn spec(&self) -> &EnvSpec {
        match self {
            EnvState::PredatorPrey(s) => s.spec(),
            EnvState::Ctf(s) => s.spec(),
            EnvState::Matrix(s) => s.spec(),
        }
    }

    pub fn step_count(&self) -> usize {
        match self {
            EnvState::PredatorPrey(s) => s.step_count(),
            EnvState::Ctf(s) => s.step_count(),
            EnvState::Matrix(s) => s.step_count(),
        }
    }

    pub fn observations(&self) -> Vec<Observation> {
        match self {
            EnvState::PredatorPrey(s) => s.observations(),
            EnvState::Ctf(s) => s.observations(),
            EnvState::Matrix(s) => s.observations(),
        }
    }

    pub fn global_state(&self) -> Vec<f64> {
        match self {
            EnvState::PredatorPrey(s) => s.global_state(),
            EnvState::Ctf(s) => s.global_state(),
            EnvState::Matrix(s) => s.global_state(),
        }
    }

    pub fn step(&mut self, joint_action: &[usize]) -> Result<StepResult> {
        let spec = self.spec();
        if joint_action.len() != spec.agent_types.len() {
            return Err(Error::contract(format!(
                "expected {} actions, got {}",
                spec.agent_types.len(),
                joint_action.len()
            )));
        }
        if let Some((i, &a)) = joint_action
            .iter()
            .enumerate()
            .find(|(_, &a)| a >= spec.num_actions)
        {
            return Err(Error::contract(format!(
                "action {a} for agent {i} out of range 0..{}",
                spec.num_actions
            )));
        }
        match self {
            EnvState::PredatorPrey(s) => s.step(joint_action),
            EnvState::Ctf(s) => s.step(joint_action),
            EnvState::Matrix(s) => s.step(joint_action),
        }
    }
}

/// Fresh episode from `config`; identical configs give identical resets.
pub fn env_reset(config: &EnvConfig) -> Result<(EnvState, Vec<Observation>, Vec<f64>)> {
    config.validate()?;
    let state = match config.env_kind {
        EnvKind::PredatorPrey => EnvState::PredatorPrey(PredatorPreyState::reset(config)),
        EnvKind::Ctf => EnvState::Ctf(CtfState::reset(config)),
        EnvKind::MatrixGame => EnvState::Matrix(MatrixState::reset(config)?),
    };
    let obs = state.observations();
    let gs = state.global_state();
    Ok((state, obs, gs))
}

pub fn env_step(state: &mut EnvState, joint_action: &[usize]) -> Result<StepResult> {
    state.step(joint_action)
}

/// Spec of the environment `config` describes, without keeping the state.
pub fn env_spec(config: &EnvConfig) -> Result<EnvSpec> {
    Ok(env_reset(config)?.0.spec().clone())
}

// grid helpers

pub(crate) type Pos = (i32, i32);

pub(crate) fn apply_move(p: Pos, action: usize, grid: i32) -> Pos {
    let (x, y) = p;
    let (nx, ny) = match action {
        1 => (x, y - 1),
        2 => (x, y + 1),
        3 => (x - 1, y),
        4 => (x + 1, y),
        _ => (x, y),
    };
    if nx < 0 || ny < 0 || nx >= grid || ny >= grid {
        p
    } else {
        (nx, ny)
    }
}

pub(crate) fn axis_one_hot(out: &mut Vec<f64>, p: Pos, grid: usize) {
    let base = out.len();
    out.resize(base + 2 * grid, 0.0);
    out[base + p.0 as usize] = 1.0;
    out[base + grid + p.1 as usize] = 1.0;
}

pub(crate) fn norm_coord(v: i32, grid: usize) -> f64 {
    2.0 * v as f64 / (grid - 1) as f64 - 1.0
}

pub(crate) fn chebyshev(a: Pos, b: Pos) -> i32 {
    (a.0 - b.0).abs().max((a.1 - b.1).abs())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_below_four_is_config_error() {
        let mut c = EnvConfig::predator_prey();
        c.grid_size = 3;
        match env_reset(&c) {
            Err(Error::Config { field, .. }) => assert_eq!(field, "grid_size"),
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn zero_max_steps_is_config_error() {
        let mut c = EnvConfig::ctf();
        c.max_steps = 0;
        assert!(matches!(env_reset(&c), Err(Error::Config { .. })));
    }

    #[test]
    fn out_of_range_action_is_contract_error() {
        let (mut s, _, _) = env_reset(&EnvConfig::predator_prey()).unwrap();
        assert!(matches!(s.step(&[0, 0, 5]), Err(Error::Contract(_))));
        assert!(matches!(s.step(&[0, 0]), Err(Error::Contract(_))));
    }

    #[test]
    fn agent_types_follow_sorted_type_names() {
        let c = EnvConfig::ctf();
        assert_eq!(
            c.agent_types(),
            vec!["convoy", "convoy", "normal", "normal", "normal"]
        );
    }

    #[test]
    fn moves_stay_inside_grid() {
        assert_eq!(apply_move((0, 0), 1, 5), (0, 0));
        assert_eq!(apply_move((0, 0), 3, 5), (0, 0));
        assert_eq!(apply_move((4, 4), 4, 5), (4, 4));
        assert_eq!(apply_move((2, 2), 2, 5), (2, 3));
    }
}
