use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::disentangle::Learnability;
use crate::envs::GameTable;
use crate::error::{Error, Result};

/// Largest number of ordered pairs the brute-force factoredness will visit.
pub const MAX_PAIRS: usize = 1 << 22;

/// A joint move of a two-agent tabular game: the state plus both actions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Move {
    pub state: usize,
    pub actions: [usize; 2],
}

impl Move {
    pub fn new(state: usize, a0: usize, a1: usize) -> Self {
        Self {
            state,
            actions: [a0, a1],
        }
    }

    pub fn with_action(mut self, agent: usize, a: usize) -> Self {
        self.actions[agent] = a;
        self
    }
}

pub fn all_moves(table: &GameTable) -> Vec<Move> {
    let na = table.num_actions;
    table
        .rows
        .iter()
        .map(|r| Move::new(r.state, r.actions[0], r.actions[1]))
        .inspect(|m| debug_assert!(m.actions[0] < na))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Factoredness {
    /// Ordered pairs `(z, z')`, `z ≠ z'`, whose private and global
    /// differences have a strictly positive product.
    pub aligned: usize,
    pub pairs: usize,
    pub value: f64,
    /// Pairs whose global utilities differ, and the aligned share of them.
    pub distinct_pairs: usize,
    pub distinct_value: Option<f64>,
}

fn factoredness_of(private: &[f64], global: &[f64]) -> Result<Factoredness> {
    let n = private.len();
    if global.len() != n {
        return Err(Error::dim("factoredness", &[n], &[global.len()]));
    }
    let pairs = n * n.saturating_sub(1);
    if pairs > MAX_PAIRS {
        return Err(Error::contract(format!(
            "{n} moves give {pairs} ordered pairs, above the limit of {MAX_PAIRS}"
        )));
    }
    let (mut aligned, mut distinct) = (0, 0);
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let dg = global[i] - global[j];
            if dg != 0.0 {
                distinct += 1;
            }
            // unit step with u(0) = 0
            if (private[i] - private[j]) * dg > 0.0 {
                aligned += 1;
            }
        }
    }
    Ok(Factoredness {
        aligned,
        pairs,
        value: if pairs == 0 { 0.0 } else { aligned as f64 / pairs as f64 },
        distinct_pairs: distinct,
        distinct_value: (distinct > 0).then(|| aligned as f64 / distinct as f64),
    })
}

/// Fraction of ordered pairs of distinct joint moves on which `private`
/// and `global` change in the same direction.
pub fn factoredness_bruteforce(
    private: &dyn Fn(Move) -> f64,
    global: &dyn Fn(Move) -> f64,
    table: &GameTable,
) -> Result<Factoredness> {
    let moves = all_moves(table);
    let n = moves.len();
    if n * n.saturating_sub(1) > MAX_PAIRS {
        return Err(Error::contract(format!(
            "{n} joint moves exceed the brute-force limit of {MAX_PAIRS} pairs"
        )));
    }
    let p: Vec<f64> = moves.iter().map(|&m| private(m)).collect();
    let g: Vec<f64> = moves.iter().map(|&m| global(m)).collect();
    factoredness_of(&p, &g)
}

/// Factoredness over `num_pairs` uniformly drawn ordered pairs of distinct
/// samples. `None` when fewer than two samples are given.
pub fn factoredness_sampled<R: Rng>(
    private: &[f64],
    global: &[f64],
    num_pairs: usize,
    rng: &mut R,
) -> Result<Option<f64>> {
    let n = private.len();
    if global.len() != n {
        return Err(Error::dim("factoredness_sampled", &[n], &[global.len()]));
    }
    if n < 2 || num_pairs == 0 {
        return Ok(None);
    }
    let mut aligned = 0;
    for _ in 0..num_pairs {
        let i = rng.gen_range(0..n);
        let mut j = rng.gen_range(0..n - 1);
        if j >= i {
            j += 1;
        }
        if (private[i] - private[j]) * (global[i] - global[j]) > 0.0 {
            aligned += 1;
        }
    }
    Ok(Some(aligned as f64 / num_pairs as f64))
}

/// Sensitivity of `private` to `agent`'s own action over its sensitivity to
/// the other agent's action, both as mean absolute changes over the
/// alternative actions at `z`; the state stays fixed.
pub fn learnability_bruteforce(
    private: &dyn Fn(Move) -> f64,
    table: &GameTable,
    z: Move,
    agent: usize,
) -> Result<Learnability> {
    if agent > 1 {
        return Err(Error::contract(format!("agent {agent} out of range 0..2")));
    }
    let na = table.num_actions;
    if z.state >= table.num_states || z.actions.iter().any(|&a| a >= na) {
        return Err(Error::contract(format!("move {z:?} not in the game")));
    }
    if na < 2 {
        return Ok(Learnability::Undefined);
    }
    let other = 1 - agent;
    let here = private(z);
    let mean_change = |who: usize| -> f64 {
        let alts: Vec<usize> = (0..na).filter(|&a| a != z.actions[who]).collect();
        alts.iter()
            .map(|&a| (here - private(z.with_action(who, a))).abs())
            .sum::<f64>()
            / alts.len() as f64
    };
    Ok(Learnability::from_ratio(mean_change(agent), mean_change(other)))
}

/// Estimated difference utility `G(z) − E_{a∼p}[G(z with agent's action a)]`.
pub fn exact_edu(global: &dyn Fn(Move) -> f64, z: Move, agent: usize, own_probs: &[f64]) -> f64 {
    let marginal: f64 = own_probs
        .iter()
        .enumerate()
        .map(|(a, p)| p * global(z.with_action(agent, a)))
        .sum();
    global(z) - marginal
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoordinationScores {
    pub factoredness: f64,
    /// `None` stands for an undefined ratio.
    pub learnability_bruteforce: Option<f64>,
    pub learnability_sf: Option<f64>,
}

/// Both brute-force scores of `private` at `z` plus a precomputed SF
/// learnability estimate.
pub fn coordination_scores(
    private: &dyn Fn(Move) -> f64,
    global: &dyn Fn(Move) -> f64,
    table: &GameTable,
    z: Move,
    agent: usize,
    sf_estimate: Learnability,
) -> Result<CoordinationScores> {
    let f = factoredness_bruteforce(private, global, table)?;
    let l = learnability_bruteforce(private, table, z, agent)?;
    Ok(CoordinationScores {
        factoredness: f.value,
        learnability_bruteforce: l.value(),
        learnability_sf: sf_estimate.value(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{matrix_game_enumerate, EnvConfig, MatrixGameSpec};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn game(payoffs: Vec<Vec<f64>>) -> GameTable {
        matrix_game_enumerate(&EnvConfig::matrix_game(MatrixGameSpec::one_shot(payoffs))).unwrap()
    }

    #[test]
    fn identity_and_negated_utilities() {
        let t = game(vec![vec![1.0, 0.0, 2.0], vec![0.0, 1.0, -1.0], vec![3.0, 0.5, 0.0]]);
        let g = |m: Move| t.reward(m.state, m.actions[0], m.actions[1]);
        let same = factoredness_bruteforce(&g, &g, &t).unwrap();
        assert_eq!(same.distinct_value, Some(1.0));
        let neg = |m: Move| -g(m);
        assert_eq!(factoredness_bruteforce(&neg, &g, &t).unwrap().value, 0.0);
    }

    #[test]
    fn coordination_game_with_row_only_private_utility() {
        // pinned from an exhaustive enumeration of the 16 ordered pairs
        let t = game(vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        let g = |m: Move| t.reward(m.state, m.actions[0], m.actions[1]);
        let row = |m: Move| t.reward(m.state, m.actions[0], 0);
        let f = factoredness_bruteforce(&row, &g, &t).unwrap();
        assert_eq!((f.aligned, f.pairs), (2, 12));
        assert!((f.value - 1.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn oversize_space_is_refused() {
        let p = vec![0.0; 3000];
        assert!(matches!(factoredness_of(&p, &p), Err(Error::Contract(_))));
    }

    #[test]
    fn learnability_of_self_only_and_other_only_utilities() {
        let t = game(vec![vec![0.0; 3]; 3]);
        let z = Move::new(0, 1, 2);
        let own = |m: Move| m.actions[0] as f64;
        assert_eq!(learnability_bruteforce(&own, &t, z, 0).unwrap(), Learnability::Undefined);
        let others = |m: Move| (m.actions[1] * m.actions[1]) as f64;
        assert_eq!(
            learnability_bruteforce(&others, &t, z, 0).unwrap(),
            Learnability::Defined(0.0)
        );
    }

    #[test]
    fn additive_utility_ratio() {
        let t = game(vec![vec![0.0; 2]; 2]);
        let f = [0.0, 3.0];
        let h = [1.0, -1.0];
        let g = |m: Move| f[m.actions[0]] + h[m.actions[1]];
        let l = learnability_bruteforce(&g, &t, Move::new(0, 0, 0), 0).unwrap();
        assert_eq!(l, Learnability::Defined(3.0 / 2.0));
        let l1 = learnability_bruteforce(&g, &t, Move::new(0, 0, 0), 1).unwrap();
        assert_eq!(l1, Learnability::Defined(2.0 / 3.0));
    }

    #[test]
    fn edu_drops_terms_the_agent_cannot_change() {
        let t = game(vec![vec![0.0; 3]; 3]);
        let f = [0.5, -1.0, 2.0];
        let h = [3.0, 0.0, -2.0];
        let g = |m: Move| f[m.actions[0]] + h[m.actions[1]];
        let u = [1.0 / 3.0; 3];
        for m in all_moves(&t) {
            let e = exact_edu(&g, m, 0, &u);
            assert!((e - (f[m.actions[0]] - 0.5)).abs() < 1e-12);
        }
        let l = learnability_bruteforce(&|m| exact_edu(&g, m, 0, &u), &t, Move::new(0, 0, 0), 0).unwrap();
        assert_eq!(l, Learnability::Undefined);
    }

    #[test]
    fn sampled_matches_exhaustive_on_identity() {
        let v: Vec<f64> = (0..20).map(|i| (i * 7 % 11) as f64).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = factoredness_sampled(&v, &v, 10_000, &mut rng).unwrap().unwrap();
        let exact = factoredness_of(&v, &v).unwrap().value;
        assert!((s - exact).abs() < 0.02);
        assert_eq!(factoredness_sampled(&v[..1], &v[..1], 10, &mut rng).unwrap(), None);
    }
}
