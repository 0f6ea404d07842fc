use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Result;
use dissc::envs::{env_reset, EnvState};
use dissc::metrics::beta_sensitivity;
use dissc::numerics::serialize::load;
use dissc::training::{Learner, MetricRecord, RecordKind, Trainer};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::exit::Failure;
use crate::train::{CHECKPOINTS, METRICS};

/// Observations drawn for the sensitivity table, per agent.
const SENSITIVITY_STEPS: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisBundle {
    pub run_dir: String,
    pub records: usize,
    pub corrupt_lines: usize,
    pub episodes: usize,
    pub central_updates: usize,
    pub decentral_updates: usize,
    /// Checkpoint the sensitivity table was computed from.
    pub sensitivity_checkpoint: Option<String>,
    pub tables: Vec<String>,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn kind_name(k: RecordKind) -> &'static str {
    match k {
        RecordKind::Episode => "episode",
        RecordKind::Central => "central",
        RecordKind::Decentral => "decentral",
        RecordKind::Eval => "eval",
    }
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).map_err(|e| Failure::io(format!("{}: {e}", path.display())).into())
}

/// Reads a metric stream, skipping lines that do not parse.
pub fn read_metrics(path: &Path) -> Result<(Vec<MetricRecord>, usize)> {
    let text = fs::read_to_string(path).map_err(|e| Failure::io(format!("{}: {e}", path.display())))?;
    let mut records = Vec::new();
    let mut corrupt = 0;
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        match serde_json::from_str::<MetricRecord>(line) {
            Ok(r) => records.push(r),
            Err(_) => corrupt += 1,
        }
    }
    Ok((records, corrupt))
}

fn write_curves(path: &Path, records: &[MetricRecord]) -> Result<()> {
    let losses: BTreeSet<&String> = records.iter().flat_map(|r| r.losses.keys()).collect();
    let mut w = csv_writer(path)?;
    let mut header: Vec<String> = ["step", "kind", "agent_type", "episode_return", "episode_length"]
        .map(String::from)
        .to_vec();
    header.extend(losses.iter().map(|l| format!("loss_{l}")));
    header.extend(
        ["learnability_estimate", "factoredness_estimate", "beta_min", "beta_max", "beta_mean"].map(String::from),
    );
    w.write_record(&header)?;
    for r in records {
        let mut row = vec![
            r.step.to_string(),
            kind_name(r.kind).to_string(),
            r.agent_type.clone().unwrap_or_default(),
            opt(r.episode_return),
            r.episode_length.map(|v| v.to_string()).unwrap_or_default(),
        ];
        row.extend(losses.iter().map(|l| opt(r.losses.get(*l).copied())));
        row.push(opt(r.learnability_estimate));
        row.push(opt(r.factoredness_estimate));
        row.push(opt(r.beta_summary.map(|b| b.min)));
        row.push(opt(r.beta_summary.map(|b| b.max)));
        row.push(opt(r.beta_summary.map(|b| b.mean)));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn write_coordination(path: &Path, records: &[MetricRecord]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["step", "agent_type", "learnability_estimate", "factoredness_estimate"])?;
    for r in records.iter().filter(|r| r.kind == RecordKind::Decentral) {
        w.write_record([
            r.step.to_string(),
            r.agent_type.clone().unwrap_or_default(),
            opt(r.learnability_estimate),
            opt(r.factoredness_estimate),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn write_beta(path: &Path, records: &[MetricRecord]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["step", "agent_type", "min", "max", "mean"])?;
    for r in records {
        if let Some(b) = r.beta_summary {
            w.write_record([
                r.step.to_string(),
                r.agent_type.clone().unwrap_or_default(),
                b.min.to_string(),
                b.max.to_string(),
                b.mean.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn latest_checkpoint(run_dir: &Path) -> Option<PathBuf> {
    let mut files: Vec<PathBuf> = fs::read_dir(run_dir.join(CHECKPOINTS))
        .ok()?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "bin"))
        .collect();
    files.sort();
    files.pop()
}

/// Observations per agent from a uniformly random rollout.
fn sample_observations(trainer: &Trainer) -> Result<Vec<Vec<Vec<f64>>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let n = trainer.spec.agent_types.len();
    let na = trainer.spec.num_actions;
    let mut per_agent = vec![Vec::new(); n];
    let mut episode = 0;
    let (mut env, mut obs, _): (EnvState, _, _) = env_reset(&trainer.env_cfg)?;
    for _ in 0..SENSITIVITY_STEPS {
        for (i, o) in obs.iter().enumerate() {
            per_agent[i].push(o.vector.clone());
        }
        let actions: Vec<usize> = (0..n).map(|_| rng.gen_range(0..na)).collect();
        let res = env.step(&actions)?;
        obs = res.observations;
        if res.done {
            episode += 1;
            let cfg = trainer.env_cfg.clone().with_seed(trainer.env_cfg.seed + episode);
            (env, obs, _) = env_reset(&cfg)?;
        }
    }
    Ok(per_agent)
}

fn write_sensitivity(path: &Path, ckpt: Option<&Path>) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["agent_type", "index", "label", "filtered"])?;
    if let Some(ckpt) = ckpt {
        let trainer = Trainer::from_checkpoint(&load(ckpt)?)?;
        if let Learner::Dissc(l) = &trainer.learner {
            let per_agent = sample_observations(&trainer)?;
            for ty in &trainer.spec.type_names {
                let obs: Vec<Vec<f64>> = trainer
                    .spec
                    .agents_of_type(ty)
                    .into_iter()
                    .flat_map(|i| per_agent[i].clone())
                    .collect();
                let beta = l.beta(&trainer.store, ty)?;
                let map = beta_sensitivity(&trainer.store, &l.model, beta, &obs, &trainer.spec.obs_labels)?;
                for (j, (label, f)) in map.labels.iter().zip(&map.filtered).enumerate() {
                    w.write_record([ty.clone(), j.to_string(), label.clone(), f.to_string()])?;
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Writes the CSV tables and `analysis.json` for a run directory.
pub fn cmd_analyze(run_dir: &Path, out: Option<&Path>) -> Result<AnalysisBundle> {
    let metrics = run_dir.join(METRICS);
    if !metrics.exists() {
        return Err(Failure::io(format!("{} has no metric stream", run_dir.display())).into());
    }
    let (records, corrupt_lines) = read_metrics(&metrics)?;
    let out = out.map(Path::to_path_buf).unwrap_or_else(|| run_dir.join("analysis"));
    fs::create_dir_all(&out).map_err(|e| Failure::io(format!("{}: {e}", out.display())))?;

    write_curves(&out.join("curves.csv"), &records)?;
    write_coordination(&out.join("coordination.csv"), &records)?;
    write_beta(&out.join("beta.csv"), &records)?;
    let ckpt = latest_checkpoint(run_dir);
    write_sensitivity(&out.join("sensitivity.csv"), ckpt.as_deref())?;

    let count = |k: RecordKind| records.iter().filter(|r| r.kind == k).count();
    let bundle = AnalysisBundle {
        run_dir: run_dir.display().to_string(),
        records: records.len(),
        corrupt_lines,
        episodes: count(RecordKind::Episode),
        central_updates: count(RecordKind::Central),
        decentral_updates: count(RecordKind::Decentral),
        sensitivity_checkpoint: ckpt.map(|p| p.display().to_string()),
        tables: ["curves.csv", "coordination.csv", "beta.csv", "sensitivity.csv"]
            .map(String::from)
            .to_vec(),
    };
    let path = out.join("analysis.json");
    fs::write(&path, serde_json::to_string_pretty(&bundle)? + "\n")
        .map_err(|e| Failure::io(format!("{}: {e}", path.display())))?;
    Ok(bundle)
}
