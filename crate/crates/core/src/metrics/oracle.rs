use serde::{Deserialize, Serialize};

use crate::envs::GameTable;
use crate::error::{Error, Result};

/// Per-agent action distributions, indexed `[agent][state][action]`.
pub type TabularPolicy = Vec<Vec<Vec<f64>>>;

const TOLERANCE: f64 = 1e-10;
const MAX_ITERS: usize = 1_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularOracleResult {
    /// Row `s·A² + a0·A + a1` holds the discounted occupancy of each state
    /// after taking joint action `(a0, a1)` in `s`, counting from the next
    /// state on.
    pub sr_matrix: Vec<Vec<f64>>,
    /// `M` averaged over the policy's joint actions, one row per state.
    pub state_sr: Vec<Vec<f64>>,
    /// `M·Φ`: successor features per state and joint action.
    pub sf_table: Vec<Vec<f64>>,
    /// `[state][joint action]`.
    pub q_table: Vec<Vec<f64>>,
    pub v_table: Vec<f64>,
    /// Reward per state used for `Q = M·R`.
    pub state_rewards: Vec<f64>,
    pub iterations: usize,
}

fn joint_probs(policy: &TabularPolicy, s: usize, na: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(na * na);
    for a0 in 0..na {
        for a1 in 0..na {
            out.push(policy[0][s][a0] * policy[1][s][a1]);
        }
    }
    out
}

fn check_policy(table: &GameTable, policy: &TabularPolicy) -> Result<()> {
    let (ns, na) = (table.num_states, table.num_actions);
    if policy.len() != 2 {
        return Err(Error::contract(format!("policy for {} agents, need 2", policy.len())));
    }
    for (i, p) in policy.iter().enumerate() {
        if p.len() != ns || p.iter().any(|r| r.len() != na) {
            return Err(Error::contract(format!(
                "policy of agent {i} must have shape [{ns}][{na}]"
            )));
        }
        for (s, row) in p.iter().enumerate() {
            let sum: f64 = row.iter().sum();
            if row.iter().any(|v| *v < 0.0 || !v.is_finite()) || (sum - 1.0).abs() > 1e-9 {
                return Err(Error::contract(format!(
                    "policy of agent {i} in state {s} is not a distribution"
                )));
            }
        }
    }
    Ok(())
}

/// Successor representation of a tabular game under `policy`, iterated as
/// `M ← P + γ·P·Π·M` until the largest change is below `1e-10`. `Q = M·R`
/// uses the game's state rewards, or the policy's expected payoff in each
/// state when the game has none.
pub fn sr_oracle(table: &GameTable, policy: &TabularPolicy, gamma: f64) -> Result<TabularOracleResult> {
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::contract(format!("gamma must lie in [0,1), got {gamma}")));
    }
    check_policy(table, policy)?;
    let (ns, na) = (table.num_states, table.num_actions);
    let nj = na * na;
    let pi: Vec<Vec<f64>> = (0..ns).map(|s| joint_probs(policy, s, na)).collect();

    let mut m = vec![vec![0.0; ns]; ns * nj];
    let mut iterations = 0;
    loop {
        iterations += 1;
        let mut ms = vec![vec![0.0; ns]; ns];
        for s in 0..ns {
            for j in 0..nj {
                for (x, v) in ms[s].iter_mut().zip(&m[s * nj + j]) {
                    *x += pi[s][j] * v;
                }
            }
        }
        let mut delta: f64 = 0.0;
        let mut next = vec![vec![0.0; ns]; ns * nj];
        for (r, row) in table.rows.iter().enumerate() {
            let out = &mut next[r];
            for (s2, &p) in row.next.iter().enumerate() {
                if p == 0.0 {
                    continue;
                }
                out[s2] += p;
                for (x, v) in out.iter_mut().zip(&ms[s2]) {
                    *x += gamma * p * v;
                }
            }
            for (a, b) in out.iter().zip(&m[r]) {
                delta = delta.max((a - b).abs());
            }
        }
        m = next;
        if delta < TOLERANCE {
            break;
        }
        if iterations >= MAX_ITERS {
            return Err(Error::contract("successor representation did not converge"));
        }
    }

    let state_rewards = match &table.state_rewards {
        Some(r) => r.clone(),
        None => (0..ns)
            .map(|s| (0..nj).map(|j| pi[s][j] * table.rows[s * nj + j].reward).sum())
            .collect(),
    };
    let k = table.features[0].len();
    let sf_table = m
        .iter()
        .map(|row| {
            let mut f = vec![0.0; k];
            for (s2, &occ) in row.iter().enumerate() {
                for (x, v) in f.iter_mut().zip(&table.features[s2]) {
                    *x += occ * v;
                }
            }
            f
        })
        .collect();
    let q_flat: Vec<f64> = m
        .iter()
        .map(|row| row.iter().zip(&state_rewards).map(|(a, b)| a * b).sum())
        .collect();
    let q_table: Vec<Vec<f64>> = q_flat.chunks(nj).map(|c| c.to_vec()).collect();
    let v_table = (0..ns)
        .map(|s| (0..nj).map(|j| pi[s][j] * q_table[s][j]).sum())
        .collect();
    let state_sr = (0..ns)
        .map(|s| {
            let mut acc = vec![0.0; ns];
            for j in 0..nj {
                for (x, v) in acc.iter_mut().zip(&m[s * nj + j]) {
                    *x += pi[s][j] * v;
                }
            }
            acc
        })
        .collect();
    Ok(TabularOracleResult {
        sr_matrix: m,
        state_sr,
        sf_table,
        q_table,
        v_table,
        state_rewards,
        iterations,
    })
}
