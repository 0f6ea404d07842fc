//! Ground-truth and diagnostic measurements: the tabular successor
//! representation, brute-force factoredness and learnability, and the
//! β-filtered observation sensitivity.

mod coordination;
mod oracle;
mod sensitivity;

pub use coordination::{
    coordination_scores, exact_edu, factoredness_bruteforce, factoredness_sampled, learnability_bruteforce,
    all_moves, CoordinationScores, Factoredness, Move, MAX_PAIRS,
};
pub use oracle::{sr_oracle, TabularOracleResult, TabularPolicy};
pub use sensitivity::{beta_sensitivity, SensitivityMap};
