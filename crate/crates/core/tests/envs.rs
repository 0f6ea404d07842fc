use std::collections::BTreeMap;

use dissc::envs::{env_reset, env_spec, matrix_game_enumerate, EnvConfig, EnvState, MatrixGameSpec};
use proptest::prelude::*;

fn small_configs() -> Vec<EnvConfig> {
    let mut pp = EnvConfig::predator_prey();
    pp.grid_size = 5;
    pp.max_steps = 20;
    let mut ctf = EnvConfig::ctf();
    ctf.grid_size = 6;
    ctf.max_steps = 20;
    ctf.num_agents_per_team = BTreeMap::from([("convoy".to_string(), 1), ("normal".to_string(), 2)]);
    let mg = EnvConfig::matrix_game(MatrixGameSpec::one_shot(vec![vec![1.0, 0.0], vec![0.0, 1.0]]));
    vec![pp, ctf, mg]
}

/// Rewards, dones and observation streams of a rollout.
fn rollout(cfg: &EnvConfig, actions: &[usize]) -> Vec<(f64, bool, Vec<Vec<f64>>, Vec<f64>)> {
    let (mut env, _, _): (EnvState, _, _) = env_reset(cfg).unwrap();
    let spec = env.spec().clone();
    let n = spec.agent_types.len();
    let mut out = Vec::new();
    for chunk in actions.chunks(n) {
        if chunk.len() < n {
            break;
        }
        let joint: Vec<usize> = chunk.iter().map(|a| a % spec.num_actions).collect();
        let res = env.step(&joint).unwrap();
        let done = res.done;
        out.push((
            res.reward,
            done,
            res.observations.into_iter().map(|o| o.vector).collect(),
            res.global_state,
        ));
        if done {
            break;
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn rollouts_are_reproducible_and_well_formed(
        which in 0usize..3,
        seed in 0u64..1000,
        actions in prop::collection::vec(0usize..5, 0..120),
    ) {
        let cfg = small_configs()[which].clone().with_seed(seed);
        let spec = env_spec(&cfg).unwrap();
        let a = rollout(&cfg, &actions);
        prop_assert_eq!(&a, &rollout(&cfg, &actions));
        for (reward, _, obs, state) in &a {
            prop_assert!(reward.is_finite());
            prop_assert_eq!(obs.len(), spec.agent_types.len());
            for o in obs {
                prop_assert_eq!(o.len(), spec.obs_dim);
                prop_assert!(o.iter().all(|v| v.is_finite() && v.abs() <= 1.0 + 1e-12));
            }
            prop_assert_eq!(state.len(), spec.state_dim);
        }
        // nothing may follow a terminal step
        prop_assert!(a.iter().rev().skip(1).all(|(_, d, _, _)| !d));
    }
}

#[test]
fn episodes_never_outlast_max_steps() {
    for cfg in small_configs().into_iter().filter(|c| c.max_steps > 0) {
        let actions = vec![0usize; cfg.num_agents() * (cfg.max_steps + 5)];
        let steps = rollout(&cfg, &actions);
        assert!(steps.len() <= cfg.max_steps, "{:?} ran {} steps", cfg.env_kind, steps.len());
    }
}

#[test]
fn different_seeds_change_the_start() {
    let mut cfg = EnvConfig::predator_prey();
    cfg.grid_size = 8;
    let starts: Vec<Vec<f64>> = (0..5).map(|s| env_reset(&cfg.clone().with_seed(s)).unwrap().2).collect();
    assert!(starts.windows(2).any(|w| w[0] != w[1]));
}

#[test]
fn enumeration_covers_every_joint_action_once() {
    let spec = MatrixGameSpec::one_shot(vec![vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0], vec![7.0, 8.0, 9.0]]);
    let table = matrix_game_enumerate(&EnvConfig::matrix_game(spec)).unwrap();
    assert_eq!(table.rows.len(), 9);
    for a0 in 0..3 {
        for a1 in 0..3 {
            assert_eq!(table.reward(0, a0, a1), (3 * a0 + a1 + 1) as f64);
        }
    }
}
