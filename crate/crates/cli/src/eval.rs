use std::path::{Path, PathBuf};

use anyhow::Result;
use dissc::envs::env_spec;
use dissc::numerics::serialize::load;
use dissc::training::{MetricRecord, Trainer};
use serde::{Deserialize, Serialize};

use crate::config::{apply_overrides, read_document, resolve_document, RunConfig};
use crate::exit::Failure;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub mean_return: Option<f64>,
    pub mean_length: Option<f64>,
    pub returns: Vec<f64>,
    pub lengths: Vec<u64>,
}

impl EvalSummary {
    fn of(records: &[MetricRecord]) -> Self {
        let returns: Vec<f64> = records.iter().filter_map(|r| r.episode_return).collect();
        let lengths: Vec<u64> = records.iter().filter_map(|r| r.episode_length).collect();
        let n = returns.len() as f64;
        Self {
            mean_return: (n > 0.0).then(|| returns.iter().sum::<f64>() / n),
            mean_length: (n > 0.0).then(|| lengths.iter().sum::<u64>() as f64 / n),
            returns,
            lengths,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub checkpoint: String,
    pub step: u64,
    pub config_hash: String,
    pub episodes: u64,
    pub seed: u64,
    pub greedy: EvalSummary,
    pub stochastic: EvalSummary,
}

pub struct EvalArgs {
    pub checkpoint: PathBuf,
    pub config: Option<PathBuf>,
    pub overrides: Vec<String>,
    pub episodes: u64,
    pub seed: u64,
    pub out: Option<PathBuf>,
}

fn spec_mismatch(stored: &dissc::envs::EnvSpec, given: &dissc::envs::EnvSpec) -> Option<String> {
    let mut diffs = Vec::new();
    for (name, a, b) in [
        ("obs_dim", stored.obs_dim, given.obs_dim),
        ("state_dim", stored.state_dim, given.state_dim),
        ("num_actions", stored.num_actions, given.num_actions),
    ] {
        if a != b {
            diffs.push(format!("{name} {a} in checkpoint vs {b} in env config"));
        }
    }
    if stored.type_names != given.type_names {
        diffs.push(format!(
            "agent types {:?} in checkpoint vs {:?} in env config",
            stored.type_names, given.type_names
        ));
    }
    (!diffs.is_empty()).then(|| diffs.join("; "))
}

/// Greedy and stochastic returns of a checkpoint over `episodes` episodes.
/// The env defaults to the one stored in the checkpoint.
pub fn cmd_eval(args: &EvalArgs) -> Result<EvalReport> {
    let ckpt = load(&args.checkpoint)?;
    let mut trainer = Trainer::from_checkpoint(&ckpt)?;
    let stored = RunConfig {
        train: trainer.cfg.clone(),
        env: trainer.env_cfg.clone(),
    };
    if args.config.is_some() || !args.overrides.is_empty() {
        let mut doc = match &args.config {
            Some(p) => resolve_document(Some(&read_document(p)?))?,
            None => serde_json::to_value(&stored)?,
        };
        apply_overrides(&mut doc, &args.overrides)?;
        let env: dissc::envs::EnvConfig = serde_json::from_value(doc["env"].clone())
            .map_err(|e| Failure::config(format!("env: {e}")))?;
        env.validate().map_err(|e| Failure::config(e.to_string()))?;
        let given = env_spec(&env)?;
        if let Some(m) = spec_mismatch(&trainer.spec, &given) {
            return Err(Failure::config(format!("checkpoint does not fit the env: {m}")).into());
        }
        trainer.env_cfg = env;
    }
    let greedy = trainer.evaluate(args.episodes, true, args.seed)?;
    let stochastic = trainer.evaluate(args.episodes, false, args.seed)?;
    let report = EvalReport {
        checkpoint: args.checkpoint.display().to_string(),
        step: trainer.step(),
        config_hash: stored.hash(),
        episodes: args.episodes,
        seed: args.seed,
        greedy: EvalSummary::of(&greedy),
        stochastic: EvalSummary::of(&stochastic),
    };
    if let Some(out) = &args.out {
        write_report(out, &report)?;
    }
    Ok(report)
}

fn write_report(path: &Path, report: &EvalReport) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)
            .map_err(|e| Failure::io(format!("{}: {e}", parent.display())))?;
    }
    std::fs::write(path, serde_json::to_string_pretty(report)? + "\n")
        .map_err(|e| Failure::io(format!("{}: {e}", path.display())))?;
    Ok(())
}
