//! Machine-readable description of the environment configs.

use serde_json::{json, Value};

use super::{ctf, env_spec, EnvConfig, EnvSpec, MatrixGameSpec, GRID_ACTIONS};
use super::matrix::{MAX_ACTIONS, MAX_STATES};

/// JSON schema (draft 2020-12) of [`EnvConfig`] plus the default config and
/// observation layout of each built-in environment.
pub fn env_schema() -> Value {
    let defaults: Vec<Value> = [
        EnvConfig::predator_prey(),
        EnvConfig::ctf(),
        EnvConfig::matrix_game(MatrixGameSpec::one_shot(vec![
            vec![1.0, 0.0],
            vec![0.0, 1.0],
        ])),
    ]
    .into_iter()
    .map(|c| {
        let spec = env_spec(&c).expect("built-in config is valid");
        json!({ "config": c, "spec": spec_json(&spec) })
    })
    .collect();

    json!({
        "$schema": "https://json-schema.org/draft/2020-12/schema",
        "title": "EnvConfig",
        "type": "object",
        "additionalProperties": false,
        "required": ["env_kind", "grid_size", "num_agents_per_team", "max_steps", "seed"],
        "properties": {
            "env_kind": { "enum": ["predator_prey", "ctf", "matrix_game"] },
            "grid_size": { "type": "integer", "minimum": 1, "description": "at least 4 for grid environments" },
            "num_agents_per_team": {
                "type": "object",
                "additionalProperties": { "type": "integer", "minimum": 0 },
                "description": "controlled agents per type; ctf types are convoy and normal"
            },
            "max_steps": { "type": "integer", "minimum": 1 },
            "seed": { "type": "integer", "minimum": 0 },
            "engagement_params": {
                "type": "object",
                "additionalProperties": { "type": "number" },
                "default": ctf::default_engagement_params(),
            },
            "frame_stack": { "type": "integer", "minimum": 1, "default": 4 },
            "view_radius": { "type": "integer", "minimum": 0, "default": 2 },
            "matrix_game": {
                "type": ["object", "null"],
                "properties": {
                    "num_states": { "type": "integer", "minimum": 1, "maximum": MAX_STATES },
                    "num_actions": { "type": "integer", "minimum": 1, "maximum": MAX_ACTIONS },
                    "initial_state": { "type": "integer", "minimum": 0, "default": 0 },
                    "payoffs": { "description": "[state][action0][action1] team reward" },
                    "transitions": { "description": "[state][action0][action1][next] unnormalized weights; identity when absent" },
                    "state_rewards": { "description": "[state] reward for occupancy-based values" },
                    "features": { "description": "[state][k] feature vectors; one-hot when absent" }
                },
                "required": ["num_states", "num_actions", "payoffs"]
            }
        },
        "grid_actions": GRID_ACTIONS,
        "defaults": defaults,
    })
}

fn spec_json(spec: &EnvSpec) -> Value {
    json!({
        "agent_types": spec.agent_types,
        "num_actions": spec.num_actions,
        "obs_dim": spec.obs_dim,
        "state_dim": spec.state_dim,
        "obs_labels": spec.obs_labels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_deserialize_back_into_configs() {
        let s = env_schema();
        let defaults = s["defaults"].as_array().unwrap();
        assert_eq!(defaults.len(), 3);
        for d in defaults {
            let c: EnvConfig = serde_json::from_value(d["config"].clone()).unwrap();
            c.validate().unwrap();
            let n = d["spec"]["obs_labels"].as_array().unwrap().len();
            assert_eq!(n as u64, d["spec"]["obs_dim"].as_u64().unwrap());
        }
    }
}
