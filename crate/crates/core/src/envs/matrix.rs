//! Two-agent tabular game, small enough to enumerate exactly.
//!
//! `payoffs[s][a0][a1]` is the team reward for joint action `(a0, a1)` in
//! state `s`. `transitions[s][a0][a1]` is an unnormalized next-state
//! distribution; without it every state maps to itself. Both agents observe
//! the one-hot state.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{EnvConfig, EnvKind, EnvSpec, FrameStack, Observation, StepResult};
use crate::error::{Error, Result};

pub const MAX_STATES: usize = 16;
pub const MAX_ACTIONS: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixGameSpec {
    pub num_states: usize,
    pub num_actions: usize,
    #[serde(default)]
    pub initial_state: usize,
    pub payoffs: Vec<Vec<Vec<f64>>>,
    #[serde(default)]
    pub transitions: Option<Vec<Vec<Vec<Vec<f64>>>>>,
    /// Per-state reward used for values computed from occupancies.
    #[serde(default)]
    pub state_rewards: Option<Vec<f64>>,
    /// Per-state feature vectors; one-hot when absent.
    #[serde(default)]
    pub features: Option<Vec<Vec<f64>>>,
}

impl MatrixGameSpec {
    /// One-state game with a single `n×n` payoff matrix.
    pub fn one_shot(payoffs: Vec<Vec<f64>>) -> Self {
        Self {
            num_states: 1,
            num_actions: payoffs.len(),
            initial_state: 0,
            payoffs: vec![payoffs],
            transitions: None,
            state_rewards: None,
            features: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (ns, na) = (self.num_states, self.num_actions);
        if ns == 0 || ns > MAX_STATES {
            return Err(Error::config(
                "matrix_game.num_states",
                format!("must lie in 1..={MAX_STATES}, got {ns}"),
            ));
        }
        if na == 0 || na > MAX_ACTIONS {
            return Err(Error::config(
                "matrix_game.num_actions",
                format!("must lie in 1..={MAX_ACTIONS}, got {na}"),
            ));
        }
        if self.initial_state >= ns {
            return Err(Error::config("matrix_game.initial_state", "out of range"));
        }
        let square = |v: &Vec<Vec<f64>>| v.len() == na && v.iter().all(|r| r.len() == na);
        if self.payoffs.len() != ns || !self.payoffs.iter().all(square) {
            return Err(Error::config(
                "matrix_game.payoffs",
                format!("expected shape [{ns}][{na}][{na}]"),
            ));
        }
        if self.payoffs.iter().flatten().flatten().any(|v| !v.is_finite()) {
            return Err(Error::config("matrix_game.payoffs", "entries must be finite"));
        }
        if let Some(t) = &self.transitions {
            let shape_ok = t.len() == ns
                && t.iter().all(|s| {
                    s.len() == na
                        && s.iter().all(|r| r.len() == na && r.iter().all(|p| p.len() == ns))
                });
            if !shape_ok {
                return Err(Error::config(
                    "matrix_game.transitions",
                    format!("expected shape [{ns}][{na}][{na}][{ns}]"),
                ));
            }
            for p in t.iter().flatten().flatten() {
                if p.iter().any(|v| !v.is_finite() || *v < 0.0) || p.iter().sum::<f64>() <= 0.0 {
                    return Err(Error::config(
                        "matrix_game.transitions",
                        "each row must be nonnegative with positive mass",
                    ));
                }
            }
        }
        if let Some(r) = &self.state_rewards {
            if r.len() != ns || r.iter().any(|v| !v.is_finite()) {
                return Err(Error::config(
                    "matrix_game.state_rewards",
                    format!("expected {ns} finite values"),
                ));
            }
        }
        if let Some(f) = &self.features {
            let k = f.first().map_or(0, |r| r.len());
            if f.len() != ns || k == 0 || f.iter().any(|r| r.len() != k) {
                return Err(Error::config(
                    "matrix_game.features",
                    format!("expected {ns} rows of equal nonzero length"),
                ));
            }
        }
        Ok(())
    }

    pub fn feature(&self, s: usize) -> Vec<f64> {
        match &self.features {
            Some(f) => f[s].clone(),
            None => one_hot(s, self.num_states),
        }
    }
}

pub(crate) fn validate(c: &EnvConfig) -> Result<()> {
    if c.num_agents() != 2 {
        return Err(Error::config(
            "num_agents_per_team",
            format!("matrix games have exactly 2 agents, got {}", c.num_agents()),
        ));
    }
    match &c.matrix_game {
        Some(g) => g.validate(),
        None => Err(Error::config("matrix_game", "required when env_kind is matrix_game")),
    }
}

/// One joint action in one state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointRow {
    pub state: usize,
    pub actions: [usize; 2],
    pub reward: f64,
    /// Next-state distribution, summing to 1.
    pub next: Vec<f64>,
}

/// Complete enumeration of a matrix game.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameTable {
    pub num_states: usize,
    pub num_actions: usize,
    pub initial_state: usize,
    /// Ordered by state, then first agent's action, then second's.
    pub rows: Vec<JointRow>,
    pub state_rewards: Option<Vec<f64>>,
    pub features: Vec<Vec<f64>>,
}

impl GameTable {
    pub fn row(&self, s: usize, a0: usize, a1: usize) -> &JointRow {
        let na = self.num_actions;
        &self.rows[(s * na + a0) * na + a1]
    }

    pub fn reward(&self, s: usize, a0: usize, a1: usize) -> f64 {
        self.row(s, a0, a1).reward
    }

    pub fn num_joint_actions(&self) -> usize {
        self.num_actions * self.num_actions
    }
}

/// Enumerates every (state, joint action) of a matrix-game config.
pub fn matrix_game_enumerate(config: &EnvConfig) -> Result<GameTable> {
    if config.env_kind != EnvKind::MatrixGame {
        return Err(Error::contract(format!(
            "enumeration needs a matrix_game config, got {}",
            config.env_kind.as_str()
        )));
    }
    validate(config)?;
    let g = config.matrix_game.as_ref().unwrap();
    let (ns, na) = (g.num_states, g.num_actions);
    let mut rows = Vec::with_capacity(ns * na * na);
    for s in 0..ns {
        for a0 in 0..na {
            for a1 in 0..na {
                let next = match &g.transitions {
                    Some(t) => normalized(&t[s][a0][a1]),
                    None => one_hot(s, ns),
                };
                rows.push(JointRow {
                    state: s,
                    actions: [a0, a1],
                    reward: g.payoffs[s][a0][a1],
                    next,
                });
            }
        }
    }
    Ok(GameTable {
        num_states: ns,
        num_actions: na,
        initial_state: g.initial_state,
        rows,
        state_rewards: g.state_rewards.clone(),
        features: (0..ns).map(|s| g.feature(s)).collect(),
    })
}

fn normalized(p: &[f64]) -> Vec<f64> {
    let z: f64 = p.iter().sum();
    p.iter().map(|v| v / z).collect()
}

fn one_hot(i: usize, n: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[i] = 1.0;
    v
}

#[derive(Debug, Clone)]
pub struct MatrixState {
    spec: EnvSpec,
    table: GameTable,
    max_steps: usize,
    step: usize,
    state: usize,
    rng: ChaCha8Rng,
    frames: FrameStack,
    done: bool,
}

impl MatrixState {
    pub(crate) fn reset(c: &EnvConfig) -> Result<Self> {
        let table = matrix_game_enumerate(c)?;
        let ns = table.num_states;
        let frame_labels: Vec<String> = (0..ns).map(|s| format!("state_{s}")).collect();
        let spec = EnvSpec {
            kind: EnvKind::MatrixGame,
            agent_types: c.agent_types(),
            type_names: c.num_agents_per_team.keys().cloned().collect(),
            num_actions: table.num_actions,
            obs_dim: ns * c.frame_stack,
            state_dim: ns,
            obs_labels: super::stacked_labels(&frame_labels, c.frame_stack),
        };
        let state = table.initial_state;
        let frames = FrameStack::new(c.frame_stack, vec![one_hot(state, ns); 2]);
        Ok(Self {
            spec,
            table,
            max_steps: c.max_steps,
            step: 0,
            state,
            rng: ChaCha8Rng::seed_from_u64(c.seed),
            frames,
            done: false,
        })
    }

    pub fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    pub fn step_count(&self) -> usize {
        self.step
    }

    pub fn state(&self) -> usize {
        self.state
    }

    pub fn table(&self) -> &GameTable {
        &self.table
    }

    pub fn observations(&self) -> Vec<Observation> {
        self.frames.observations()
    }

    pub fn global_state(&self) -> Vec<f64> {
        one_hot(self.state, self.table.num_states)
    }

    pub(crate) fn step(&mut self, actions: &[usize]) -> Result<StepResult> {
        if self.done {
            return Err(Error::contract("step called on a finished episode"));
        }
        let row = self.table.row(self.state, actions[0], actions[1]);
        let reward = row.reward;
        let u: f64 = self.rng.gen();
        let mut acc = 0.0;
        let mut next = row.next.len() - 1;
        for (s, p) in row.next.iter().enumerate() {
            acc += p;
            if u < acc {
                next = s;
                break;
            }
        }
        self.state = next;
        self.step += 1;
        self.done = self.step >= self.max_steps;
        let ns = self.table.num_states;
        self.frames.push(vec![one_hot(next, ns); 2]);
        Ok(StepResult {
            observations: self.observations(),
            global_state: self.global_state(),
            reward,
            done: self.done,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::env_reset;

    fn coordination() -> EnvConfig {
        EnvConfig::matrix_game(MatrixGameSpec::one_shot(vec![
            vec![1.0, 0.0],
            vec![0.0, 1.0],
        ]))
    }

    #[test]
    fn two_by_two_one_shot_has_four_rows() {
        let t = matrix_game_enumerate(&coordination()).unwrap();
        assert_eq!(t.rows.len(), 4);
        assert_eq!(t.reward(0, 0, 0), 1.0);
        assert_eq!(t.reward(0, 0, 1), 0.0);
        assert_eq!(t.reward(0, 1, 0), 0.0);
        assert_eq!(t.reward(0, 1, 1), 1.0);
    }

    #[test]
    fn rows_are_probability_distributions() {
        let mut spec = MatrixGameSpec::one_shot(vec![vec![0.0; 3]; 3]);
        spec.num_states = 3;
        spec.payoffs = vec![vec![vec![0.5; 3]; 3]; 3];
        spec.transitions = Some(vec![vec![vec![vec![0.1, 0.7, 3.0]; 3]; 3]; 3]);
        let t = matrix_game_enumerate(&EnvConfig::matrix_game(spec)).unwrap();
        for r in &t.rows {
            assert!((r.next.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn grid_config_is_not_enumerable() {
        assert!(matches!(
            matrix_game_enumerate(&EnvConfig::ctf()),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn oversize_game_is_rejected() {
        let mut spec = MatrixGameSpec::one_shot(vec![vec![0.0; 5]; 5]);
        spec.num_actions = 5;
        match matrix_game_enumerate(&EnvConfig::matrix_game(spec)) {
            Err(Error::Config { field, .. }) => assert_eq!(field, "matrix_game.num_actions"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn stepping_pays_the_table_reward() {
        let (mut s, obs, _) = env_reset(&coordination()).unwrap();
        assert_eq!(obs[0].vector, vec![1.0]);
        let r = s.step(&[1, 1]).unwrap();
        assert_eq!(r.reward, 1.0);
        assert!(r.done);
    }
}
