//! Grid capture-the-flag between a controlled team and a scripted opponent.
//!
//! The controlled team owns the west half of the grid (`x < grid/2`), the
//! opponent the east half. Each side has one flag inside its territory.
//!
//! Each step, in order:
//!
//! 1. Controlled agents apply their actions, then opponents apply a scripted
//!    move: with probability `seek_bias` a greedy step toward the controlled
//!    flag, otherwise a uniform random move. Convoy agents (strong, slow) only
//!    move on even steps; normal agents move every step. Cells may be shared.
//! 2. Flag captures: a controlled agent on the opponent flag earns
//!    `capture_reward`; an opponent on the controlled flag costs
//!    `concede_penalty`. A captured flag respawns uniformly inside its own
//!    team's territory at once.
//! 3. Engagements: every opposing pair within Chebyshev distance 1, each agent
//!    taking part in at most one engagement per step, is resolved by one draw.
//!    An agent's weight is `strength(kind) × (p_home if on its own territory
//!    else p_away) × (1 + ally_bonus × allies within distance 1)`, and it wins
//!    with probability `w_self / (w_self + w_other)`. The loser is removed and
//!    respawns uniformly inside its own territory.
//! 4. The episode ends after `max_steps` steps.
//!
//! A controlled agent's frame is its `(2r+1)²` window over four channels
//! (allies, opponents, flags with opponent +1 / own −1, territory with own +1
//! / opponent −1 / off-grid 0), then its own position, a convoy indicator and
//! the offsets to the opponent and own flags, all scaled into `[−1, 1]`.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    apply_move, axis_one_hot, chebyshev, norm_coord, stacked_labels, EnvConfig, EnvKind, EnvSpec,
    FrameStack, Observation, Pos, StepResult, GRID_ACTIONS,
};
use crate::error::{Error, Result};

pub const CONVOY: &str = "convoy";
pub const NORMAL: &str = "normal";

const PARAM_NAMES: [&str; 8] = [
    "p_home",
    "p_away",
    "convoy_strength",
    "normal_strength",
    "ally_bonus",
    "seek_bias",
    "capture_reward",
    "concede_penalty",
];

pub(crate) fn default_engagement_params() -> BTreeMap<String, f64> {
    BTreeMap::from([
        ("p_home".to_string(), 0.7),
        ("p_away".to_string(), 0.3),
        ("convoy_strength".to_string(), 2.0),
        ("normal_strength".to_string(), 1.0),
        ("ally_bonus".to_string(), 0.5),
        ("seek_bias".to_string(), 0.3),
        ("capture_reward".to_string(), 1.0),
        ("concede_penalty".to_string(), 1.0),
    ])
}

pub(crate) fn validate(c: &EnvConfig) -> Result<()> {
    for k in c.num_agents_per_team.keys() {
        if k != CONVOY && k != NORMAL {
            return Err(Error::config(
                "num_agents_per_team",
                format!("unknown agent type `{k}`, expected `convoy` or `normal`"),
            ));
        }
    }
    for (k, v) in &c.engagement_params {
        if !PARAM_NAMES.contains(&k.as_str()) {
            return Err(Error::config(
                format!("engagement_params.{k}"),
                format!("unknown parameter; valid: {}", PARAM_NAMES.join(", ")),
            ));
        }
        if !v.is_finite() {
            return Err(Error::config(format!("engagement_params.{k}"), "must be finite"));
        }
    }
    for k in ["p_home", "p_away", "seek_bias"] {
        if let Some(&v) = c.engagement_params.get(k) {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::config(format!("engagement_params.{k}"), "must lie in [0, 1]"));
            }
        }
    }
    let half = c.grid_size / 2;
    if c.num_agents() > half * c.grid_size {
        return Err(Error::config("num_agents_per_team", "team does not fit its territory"));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CtfAgent {
    pub pos: Pos,
    pub convoy: bool,
}

#[derive(Debug, Clone, Copy)]
struct Params {
    p_home: f64,
    p_away: f64,
    convoy_strength: f64,
    normal_strength: f64,
    ally_bonus: f64,
    seek_bias: f64,
    capture_reward: f64,
    concede_penalty: f64,
}

impl Params {
    fn from_config(c: &EnvConfig) -> Self {
        let d = default_engagement_params();
        let get = |k: &str| c.engagement_params.get(k).copied().unwrap_or(d[k]);
        Self {
            p_home: get("p_home"),
            p_away: get("p_away"),
            convoy_strength: get("convoy_strength"),
            normal_strength: get("normal_strength"),
            ally_bonus: get("ally_bonus"),
            seek_bias: get("seek_bias"),
            capture_reward: get("capture_reward"),
            concede_penalty: get("concede_penalty"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct CtfState {
    spec: EnvSpec,
    grid: usize,
    radius: i32,
    max_steps: usize,
    params: Params,
    step: usize,
    /// Index 0: controlled team (west). Index 1: scripted team (east).
    teams: [Vec<CtfAgent>; 2],
    flags: [Pos; 2],
    rng: ChaCha8Rng,
    frames: FrameStack,
    done: bool,
    /// Engagement and capture counts of the last step, for diagnostics.
    pub last_events: CtfEvents,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CtfEvents {
    pub captures: usize,
    pub concessions: usize,
    pub engagements: usize,
}

impl CtfState {
    pub(crate) fn reset(c: &EnvConfig) -> Self {
        let grid = c.grid_size;
        let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
        let kinds: Vec<bool> = c.agent_types().iter().map(|t| t == CONVOY).collect();
        let mut teams: [Vec<CtfAgent>; 2] = [Vec::new(), Vec::new()];
        for (team, members) in teams.iter_mut().enumerate() {
            for &convoy in &kinds {
                let pos = random_in_territory(&mut rng, grid, team);
                members.push(CtfAgent { pos, convoy });
            }
        }
        let flags = [
            random_in_territory(&mut rng, grid, 0),
            random_in_territory(&mut rng, grid, 1),
        ];
        let radius = c.view_radius as i32;
        let frame_labels = frame_labels(radius);
        let n = kinds.len();
        let spec = EnvSpec {
            kind: EnvKind::Ctf,
            agent_types: c.agent_types(),
            type_names: c.num_agents_per_team.keys().cloned().collect(),
            num_actions: GRID_ACTIONS.len(),
            obs_dim: frame_labels.len() * c.frame_stack,
            state_dim: 2 * grid * (2 * n + 2),
            obs_labels: stacked_labels(&frame_labels, c.frame_stack),
        };
        let mut s = Self {
            spec,
            grid,
            radius,
            max_steps: c.max_steps,
            params: Params::from_config(c),
            step: 0,
            teams,
            flags,
            rng,
            frames: FrameStack::new(c.frame_stack, Vec::new()),
            done: false,
            last_events: CtfEvents::default(),
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

    pub fn team(&self, t: usize) -> &[CtfAgent] {
        &self.teams[t]
    }

    pub fn flag(&self, t: usize) -> Pos {
        self.flags[t]
    }

    /// Team owning `p`: 0 for the west half, 1 for the east half.
    pub fn territory_of(&self, p: Pos) -> usize {
        territory(p, self.grid)
    }

    /// Places entities directly; used to set up rule-table scenarios.
    pub fn set_layout(&mut self, controlled: &[Pos], opponents: &[Pos], flags: [Pos; 2]) {
        for (a, &p) in self.teams[0].iter_mut().zip(controlled) {
            a.pos = p;
        }
        for (a, &p) in self.teams[1].iter_mut().zip(opponents) {
            a.pos = p;
        }
        self.flags = flags;
        let h = self.spec.obs_dim / frame_len(self.radius);
        self.frames = FrameStack::new(h, self.frames_now());
    }

    pub fn observations(&self) -> Vec<Observation> {
        self.frames.observations()
    }

    pub fn global_state(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.spec.state_dim);
        for a in self.teams[0].iter().chain(&self.teams[1]) {
            axis_one_hot(&mut out, a.pos, self.grid);
        }
        for &f in &self.flags {
            axis_one_hot(&mut out, f, self.grid);
        }
        out
    }

    pub(crate) fn step(&mut self, actions: &[usize]) -> Result<StepResult> {
        if self.done {
            return Err(Error::contract("step called on a finished episode"));
        }
        let g = self.grid as i32;
        let moves_now = self.step % 2 == 0;
        for (a, &act) in self.teams[0].iter_mut().zip(actions) {
            if !a.convoy || moves_now {
                a.pos = apply_move(a.pos, act, g);
            }
        }
        for k in 0..self.teams[1].len() {
            let a = self.teams[1][k];
            let act = if self.rng.gen::<f64>() < self.params.seek_bias {
                toward(a.pos, self.flags[0])
            } else {
                self.rng.gen_range(0..GRID_ACTIONS.len())
            };
            if !a.convoy || moves_now {
                self.teams[1][k].pos = apply_move(a.pos, act, g);
            }
        }

        let mut events = CtfEvents::default();
        let mut reward = 0.0;
        if self.teams[0].iter().any(|a| a.pos == self.flags[1]) {
            reward += self.params.capture_reward;
            events.captures += 1;
            self.respawn_flag(1);
        }
        if self.teams[1].iter().any(|a| a.pos == self.flags[0]) {
            reward -= self.params.concede_penalty;
            events.concessions += 1;
            self.respawn_flag(0);
        }
        events.engagements = self.resolve_engagements();
        self.last_events = events;

        self.step += 1;
        self.done = self.step >= self.max_steps;
        self.frames.push(self.frames_now());
        Ok(StepResult {
            observations: self.observations(),
            global_state: self.global_state(),
            reward,
            done: self.done,
        })
    }

    fn respawn_flag(&mut self, team: usize) {
        let old = self.flags[team];
        loop {
            let p = random_in_territory(&mut self.rng, self.grid, team);
            if p != old {
                self.flags[team] = p;
                return;
            }
        }
    }

    fn weight(&self, team: usize, idx: usize) -> f64 {
        let p = &self.params;
        let a = self.teams[team][idx];
        let strength = if a.convoy { p.convoy_strength } else { p.normal_strength };
        let field = if territory(a.pos, self.grid) == team { p.p_home } else { p.p_away };
        let allies = self.teams[team]
            .iter()
            .enumerate()
            .filter(|&(j, b)| j != idx && chebyshev(a.pos, b.pos) <= 1)
            .count();
        strength * field * (1.0 + p.ally_bonus * allies as f64)
    }

    fn resolve_engagements(&mut self) -> usize {
        let (n0, n1) = (self.teams[0].len(), self.teams[1].len());
        let mut engaged = [vec![false; n0], vec![false; n1]];
        let mut count = 0;
        for i in 0..n0 {
            for j in 0..n1 {
                if engaged[0][i] || engaged[1][j] {
                    continue;
                }
                if chebyshev(self.teams[0][i].pos, self.teams[1][j].pos) > 1 {
                    continue;
                }
                let (w0, w1) = (self.weight(0, i), self.weight(1, j));
                let p0 = if w0 + w1 > 0.0 { w0 / (w0 + w1) } else { 0.5 };
                let (lt, li) = if self.rng.gen::<f64>() < p0 { (1, j) } else { (0, i) };
                engaged[0][i] = true;
                engaged[1][j] = true;
                count += 1;
                self.teams[lt][li].pos = random_in_territory(&mut self.rng, self.grid, lt);
            }
        }
        count
    }

    fn frames_now(&self) -> Vec<Vec<f64>> {
        (0..self.teams[0].len()).map(|i| self.frame(i)).collect()
    }

    fn frame(&self, i: usize) -> Vec<f64> {
        let me = self.teams[0][i];
        let (x0, y0) = me.pos;
        let r = self.radius;
        let g = self.grid as i32;
        let w = ((2 * r + 1) * (2 * r + 1)) as usize;
        let mut out = vec![0.0; frame_len(r)];
        let mut k = 0;
        for dy in -r..=r {
            for dx in -r..=r {
                let c = (x0 + dx, y0 + dy);
                let inside = c.0 >= 0 && c.1 >= 0 && c.0 < g && c.1 < g;
                if inside {
                    let ally = self.teams[0]
                        .iter()
                        .enumerate()
                        .any(|(j, a)| j != i && a.pos == c);
                    let foe = self.teams[1].iter().any(|a| a.pos == c);
                    out[k] = if ally { 1.0 } else { 0.0 };
                    out[w + k] = if foe { 1.0 } else { 0.0 };
                    out[2 * w + k] = if c == self.flags[1] {
                        1.0
                    } else if c == self.flags[0] {
                        -1.0
                    } else {
                        0.0
                    };
                    out[3 * w + k] = if territory(c, self.grid) == 0 { 1.0 } else { -1.0 };
                }
                k += 1;
            }
        }
        let base = 4 * w;
        let span = (self.grid - 1) as f64;
        out[base] = norm_coord(x0, self.grid);
        out[base + 1] = norm_coord(y0, self.grid);
        out[base + 2] = if me.convoy { 1.0 } else { -1.0 };
        out[base + 3] = (self.flags[1].0 - x0) as f64 / span;
        out[base + 4] = (self.flags[1].1 - y0) as f64 / span;
        out[base + 5] = (self.flags[0].0 - x0) as f64 / span;
        out[base + 6] = (self.flags[0].1 - y0) as f64 / span;
        out
    }
}

fn territory(p: Pos, grid: usize) -> usize {
    if (p.0 as usize) < grid / 2 {
        0
    } else {
        1
    }
}

fn random_in_territory<R: Rng>(rng: &mut R, grid: usize, team: usize) -> Pos {
    let half = (grid / 2) as i32;
    let x = if team == 0 {
        rng.gen_range(0..half)
    } else {
        rng.gen_range(half..grid as i32)
    };
    (x, rng.gen_range(0..grid as i32))
}

fn toward(from: Pos, to: Pos) -> usize {
    let (dx, dy) = (to.0 - from.0, to.1 - from.1);
    if dx == 0 && dy == 0 {
        0
    } else if dx.abs() >= dy.abs() {
        if dx > 0 {
            4
        } else {
            3
        }
    } else if dy > 0 {
        2
    } else {
        1
    }
}

fn frame_len(r: i32) -> usize {
    let w = ((2 * r + 1) * (2 * r + 1)) as usize;
    4 * w + 7
}

fn frame_labels(r: i32) -> Vec<String> {
    let mut out = Vec::new();
    for ch in ["ally", "opponent", "flag", "territory"] {
        for dy in -r..=r {
            for dx in -r..=r {
                out.push(format!("{ch}({dx},{dy})"));
            }
        }
    }
    for l in [
        "self_x",
        "self_y",
        "is_convoy",
        "opp_flag_dx",
        "opp_flag_dy",
        "own_flag_dx",
        "own_flag_dy",
    ] {
        out.push(l.to_string());
    }
    out
}
