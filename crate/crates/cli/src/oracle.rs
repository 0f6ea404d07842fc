use std::path::Path;

use anyhow::Result;
use dissc::envs::{matrix_game_enumerate, EnvConfig, MatrixGameSpec};
use dissc::metrics::{
    all_moves, exact_edu, factoredness_bruteforce, learnability_bruteforce, sr_oracle, Factoredness,
    Move, TabularOracleResult,
};
use serde::{Deserialize, Serialize};

use crate::config::read_document;
use crate::exit::Failure;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MoveScores {
    pub state: usize,
    pub actions: [usize; 2],
    /// `None` where the ratio is undefined.
    pub learnability_global: Option<f64>,
    pub learnability_edu: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentScores {
    pub agent: usize,
    pub factoredness_global: Factoredness,
    pub factoredness_edu: Factoredness,
    pub moves: Vec<MoveScores>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub gamma: f64,
    pub num_states: usize,
    pub num_actions: usize,
    /// Under uniformly random policies for both agents.
    pub successor: TabularOracleResult,
    /// Immediate payoff as the global utility, EDU marginalized over a
    /// uniform own action.
    pub agents: Vec<AgentScores>,
}

/// Brute-force scores and the tabular successor representation of a game
/// spec file.
pub fn cmd_oracle(path: &Path, gamma: f64) -> Result<OracleReport> {
    let doc = read_document(path)?;
    let spec: MatrixGameSpec =
        serde_json::from_value(doc).map_err(|e| Failure::config(format!("{}: {e}", path.display())))?;
    let table = matrix_game_enumerate(&EnvConfig::matrix_game(spec)).map_err(|e| Failure::config(e.to_string()))?;
    let (ns, na) = (table.num_states, table.num_actions);
    let uniform = vec![vec![vec![1.0 / na as f64; na]; ns]; 2];
    let successor = sr_oracle(&table, &uniform, gamma).map_err(|e| Failure::config(e.to_string()))?;

    let global = |m: Move| table.reward(m.state, m.actions[0], m.actions[1]);
    let own = vec![1.0 / na as f64; na];
    let mut agents = Vec::new();
    for agent in 0..2 {
        let edu = |m: Move| exact_edu(&global, m, agent, &own);
        let moves = all_moves(&table)
            .into_iter()
            .map(|z| -> Result<MoveScores> {
                Ok(MoveScores {
                    state: z.state,
                    actions: z.actions,
                    learnability_global: learnability_bruteforce(&global, &table, z, agent)?.value(),
                    learnability_edu: learnability_bruteforce(&edu, &table, z, agent)?.value(),
                })
            })
            .collect::<Result<_>>()?;
        agents.push(AgentScores {
            agent,
            factoredness_global: factoredness_bruteforce(&global, &global, &table)?,
            factoredness_edu: factoredness_bruteforce(&edu, &global, &table)?,
            moves,
        });
    }
    Ok(OracleReport {
        gamma,
        num_states: ns,
        num_actions: na,
        successor,
        agents,
    })
}
