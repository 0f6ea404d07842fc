use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use dissc::envs::schema::env_schema;
use dissc::training::{RecordKind, TrainEvent, Trainer};
use serde::{Deserialize, Serialize};

use crate::config::{load_run_config, RunConfig};
use crate::exit::Failure;

pub const RUN_ROOT_VAR: &str = "DISSC_RUN_ROOT";
pub const MANIFEST: &str = "manifest.json";
pub const CONFIG: &str = "config.json";
pub const ENV_SCHEMA: &str = "env_schema.json";
pub const METRICS: &str = "metrics.jsonl";
pub const CHECKPOINTS: &str = "checkpoints";
pub const REPORT: &str = "report.json";
pub const ABORT_DIR: &str = "abort";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub config_hash: String,
    pub seed: u64,
    pub code_version: String,
    pub created_at: String,
    pub finished_at: Option<String>,
    pub status: String,
    /// Artifact name to path relative to the run directory.
    pub artifacts: BTreeMap<String, String>,
}

pub fn checkpoint_name(step: u64) -> String {
    format!("step_{step:010}.bin")
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> Failure + '_ {
    move |e| Failure::io(format!("{}: {e}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").map_err(io_err(path))?;
    Ok(())
}

fn default_run_dir(cfg: &RunConfig, hash: &str) -> PathBuf {
    let root = std::env::var_os(RUN_ROOT_VAR).map(PathBuf::from).unwrap_or_else(|| "runs".into());
    root.join(format!(
        "{}-{}-seed{}-{}",
        cfg.train.algo.as_str(),
        cfg.env.env_kind.as_str(),
        cfg.train.seed,
        &hash[..12]
    ))
}

pub struct TrainArgs {
    pub config: Option<PathBuf>,
    pub overrides: Vec<String>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub quiet: bool,
}

/// Trains one run into its directory and returns that directory.
pub fn cmd_train(args: &TrainArgs) -> Result<PathBuf> {
    let cfg = load_run_config(args.config.as_deref(), &args.overrides, args.seed)?;
    let hash = cfg.hash();
    let dir = args.out.clone().unwrap_or_else(|| default_run_dir(&cfg, &hash));
    let ckpt_dir = dir.join(CHECKPOINTS);
    if ckpt_dir.exists() {
        fs::remove_dir_all(&ckpt_dir).map_err(io_err(&ckpt_dir))?;
    }
    fs::create_dir_all(&ckpt_dir).map_err(io_err(&ckpt_dir))?;

    let artifacts = BTreeMap::from(
        [
            ("config", CONFIG),
            ("env_schema", ENV_SCHEMA),
            ("metrics", METRICS),
            ("checkpoints", CHECKPOINTS),
            ("report", REPORT),
        ]
        .map(|(k, v)| (k.to_string(), v.to_string())),
    );
    let mut manifest = RunManifest {
        run_id: dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| hash[..12].to_string()),
        config_hash: hash,
        seed: cfg.train.seed,
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        created_at: chrono::Utc::now().to_rfc3339(),
        finished_at: None,
        status: "running".into(),
        artifacts,
    };
    write_json(&dir.join(MANIFEST), &manifest)?;
    write_json(&dir.join(CONFIG), &cfg)?;
    write_json(&dir.join(ENV_SCHEMA), &env_schema())?;

    let metrics_path = dir.join(METRICS);
    let mut metrics = BufWriter::new(File::create(&metrics_path).map_err(io_err(&metrics_path))?);
    let mut trainer = Trainer::new(cfg.train.clone(), cfg.env.clone()).map_err(|e| match e {
        dissc::Error::Config { .. } => anyhow::Error::new(Failure::config(e.to_string())),
        other => other.into(),
    })?;
    let quiet = args.quiet;
    let mut episodes = 0u64;
    let mut sink = |ev: TrainEvent| -> dissc::Result<()> {
        match ev {
            TrainEvent::Metric(r) => {
                writeln!(metrics, "{}", r.to_json_line())?;
                if r.kind == RecordKind::Episode {
                    episodes += 1;
                    if !quiet && episodes % 50 == 0 {
                        eprintln!(
                            "step {:>8}  episode {:>6}  return {:>8.3}  length {:>4}",
                            r.step,
                            episodes,
                            r.episode_return.unwrap_or(0.0),
                            r.episode_length.unwrap_or(0)
                        );
                    }
                }
            }
            TrainEvent::Checkpoint { step, bytes } => {
                fs::write(ckpt_dir.join(checkpoint_name(step)), bytes)?;
            }
            TrainEvent::Abort {
                step,
                reason,
                checkpoint,
                batch,
            } => {
                let abort = dir.join(ABORT_DIR);
                fs::create_dir_all(&abort)?;
                fs::write(abort.join(checkpoint_name(step)), checkpoint)?;
                let dump = serde_json::json!({ "step": step, "reason": reason, "batch": batch });
                fs::write(abort.join("batch.json"), serde_json::to_string(&dump)?)?;
            }
        }
        Ok(())
    };
    let result = trainer.run(&mut sink);
    metrics.flush().map_err(io_err(&metrics_path))?;
    drop(metrics);

    manifest.finished_at = Some(chrono::Utc::now().to_rfc3339());
    match result {
        Ok(report) => {
            manifest.status = "completed".into();
            write_json(&dir.join(REPORT), &report)?;
            write_json(&dir.join(MANIFEST), &manifest)?;
            if !quiet {
                eprintln!(
                    "done: {} env steps, {} episodes, {} central and {} decentralized updates",
                    report.env_steps, report.episodes, report.central_updates, report.decentral_updates
                );
            }
            Ok(dir)
        }
        Err(e) => {
            manifest.status = if matches!(e, dissc::Error::NonFinite { .. }) {
                manifest.artifacts.insert("abort".into(), ABORT_DIR.into());
                "aborted".into()
            } else {
                "failed".into()
            };
            write_json(&dir.join(MANIFEST), &manifest)?;
            Err(e).with_context(|| format!("training run in {}", dir.display()))
        }
    }
}
