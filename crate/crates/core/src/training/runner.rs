use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::buffer::{AgentTransition, CentralBuffer, DecentralBuffer, StateTransition};
use super::config::{Algo, TrainConfig};
use super::dissc::{BetaSummary, DisscLearner, UpdateOutcome};
use super::iac::IacLearner;
use super::ppo::PolicyView;
use crate::envs::{env_reset, EnvConfig, EnvKind, EnvSpec, EnvState, Observation};
use crate::error::{Error, Result};
use crate::numerics::serialize::{self, Checkpoint};
use crate::numerics::ParamStore;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordKind {
    Episode,
    Central,
    Decentral,
    Eval,
}

/// One line of the metric stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub step: u64,
    pub kind: RecordKind,
    pub agent_type: Option<String>,
    pub episode_return: Option<f64>,
    pub episode_length: Option<u64>,
    pub losses: BTreeMap<String, f64>,
    pub learnability_estimate: Option<f64>,
    pub factoredness_estimate: Option<f64>,
    pub beta_summary: Option<BetaSummary>,
}

impl MetricRecord {
    fn empty(step: u64, kind: RecordKind) -> Self {
        Self {
            step,
            kind,
            agent_type: None,
            episode_return: None,
            episode_length: None,
            losses: BTreeMap::new(),
            learnability_estimate: None,
            factoredness_estimate: None,
            beta_summary: None,
        }
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("metric records always serialize")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub algo: Algo,
    pub env_steps: u64,
    pub episodes: u64,
    pub central_updates: u64,
    pub decentral_updates: u64,
    pub checkpoints: u64,
    /// Means over episodes that ended in the last 10% of env steps.
    pub final_mean_return: Option<f64>,
    pub final_mean_length: Option<f64>,
    pub final_beta: BTreeMap<String, Vec<f64>>,
    #[serde(skip)]
    pub records: Vec<MetricRecord>,
}

pub enum TrainEvent<'a> {
    Metric(&'a MetricRecord),
    Checkpoint {
        step: u64,
        bytes: &'a [u8],
    },
    /// Emitted once before a non-finite value ends the run.
    Abort {
        step: u64,
        reason: String,
        checkpoint: &'a [u8],
        batch: serde_json::Value,
    },
}

pub enum Learner {
    Dissc(DisscLearner),
    Iac(IacLearner),
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Env seed of episode `index`.
pub fn episode_seed(env_seed: u64, train_seed: u64, index: u64) -> u64 {
    splitmix(splitmix(splitmix(env_seed) ^ train_seed) ^ index)
}

/// Owns every parameter, optimizer, buffer and random stream of one run.
pub struct Trainer {
    pub cfg: TrainConfig,
    pub env_cfg: EnvConfig,
    pub spec: EnvSpec,
    pub store: ParamStore,
    pub learner: Learner,
    act_rng: ChaCha8Rng,
    metric_rng: ChaCha8Rng,
    central: CentralBuffer,
    decentral: BTreeMap<String, DecentralBuffer>,
    step: u64,
    episodes: u64,
    central_updates: u64,
    decentral_updates: u64,
    checkpoints: u64,
}

impl Trainer {
    pub fn new(cfg: TrainConfig, env_cfg: EnvConfig) -> Result<Self> {
        cfg.validate()?;
        env_cfg.validate()?;
        let spec = crate::envs::env_spec(&env_cfg)?;
        let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut store = ParamStore::new();
        let learner = match cfg.algo {
            Algo::Dissc => Learner::Dissc(DisscLearner::new(&mut store, &spec, &cfg, &mut init_rng)),
            Algo::Iac => Learner::Iac(IacLearner::new(&mut store, &spec, &cfg, &mut init_rng)),
        };
        let decentral = spec
            .type_names
            .iter()
            .map(|t| (t.clone(), DecentralBuffer::new(cfg.decentral_batch)))
            .collect();
        Ok(Self {
            act_rng: ChaCha8Rng::seed_from_u64(splitmix(cfg.seed ^ 0x5EED_AC71)),
            metric_rng: ChaCha8Rng::seed_from_u64(splitmix(cfg.seed ^ 0x5EED_3E7A)),
            central: CentralBuffer::new(cfg.central_batch),
            decentral,
            cfg,
            env_cfg,
            spec,
            store,
            learner,
            step: 0,
            episodes: 0,
            central_updates: 0,
            decentral_updates: 0,
            checkpoints: 0,
        })
    }

    /// Rebuilds the networks described by a checkpoint's metadata and loads
    /// their parameters. Optimizer moments start fresh.
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let cfg: TrainConfig = serde_json::from_value(ckpt.meta["train"].clone())
            .map_err(|e| Error::Format(format!("checkpoint train config: {e}")))?;
        let env_cfg: EnvConfig = serde_json::from_value(ckpt.meta["env"].clone())
            .map_err(|e| Error::Format(format!("checkpoint env config: {e}")))?;
        let mut t = Self::new(cfg, env_cfg)?;
        ckpt.restore_into(&mut t.store)?;
        t.step = ckpt.meta["step"].as_u64().unwrap_or(0);
        Ok(t)
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn policy(&self, agent_type: &str) -> Result<PolicyView<'_>> {
        match &self.learner {
            Learner::Dissc(l) => l.policy(&self.store, agent_type),
            Learner::Iac(l) => l.policy(&self.store, agent_type),
        }
    }

    pub fn betas(&self) -> BTreeMap<String, Vec<f64>> {
        match &self.learner {
            Learner::Dissc(l) => l
                .betas
                .iter()
                .map(|(t, id)| (t.clone(), self.store.get(*id).data().to_vec()))
                .collect(),
            Learner::Iac(_) => BTreeMap::new(),
        }
    }

    pub fn checkpoint_bytes(&self) -> Result<Vec<u8>> {
        serialize::encode(
            &self.store,
            json!({
                "step": self.step,
                "algo": self.cfg.algo.as_str(),
                "train": self.cfg,
                "env": self.env_cfg,
            }),
        )
    }

    fn act(&mut self, obs: &[Observation], greedy: bool) -> Result<(Vec<usize>, Vec<f64>)> {
        let mut actions = Vec::with_capacity(obs.len());
        let mut log_probs = Vec::with_capacity(obs.len());
        for (i, o) in obs.iter().enumerate() {
            let ty = &self.spec.agent_types[i];
            let view = match &self.learner {
                Learner::Dissc(l) => l.policy(&self.store, ty)?,
                Learner::Iac(l) => l.policy(&self.store, ty)?,
            };
            let c = view.act(o, &mut self.act_rng, greedy)?;
            actions.push(c.action);
            log_probs.push(c.log_prob);
        }
        Ok((actions, log_probs))
    }

    fn truncated(&self, env: &EnvState, reward: f64) -> bool {
        let captured = self.env_cfg.env_kind == EnvKind::PredatorPrey && reward > 0.0;
        env.step_count() >= self.env_cfg.max_steps && !captured
    }

    fn reset(&self, index: u64, train_seed: u64) -> Result<(EnvState, Vec<Observation>, Vec<f64>)> {
        let seed = episode_seed(self.env_cfg.seed, train_seed, index);
        env_reset(&self.env_cfg.clone().with_seed(seed))
    }

    fn with_step(&self, e: Error) -> Error {
        match e {
            Error::NonFinite { what, .. } => Error::NonFinite {
                what,
                step: self.step,
            },
            other => other,
        }
    }

    fn abort(
        &self,
        e: Error,
        batch: serde_json::Value,
        sink: &mut dyn FnMut(TrainEvent) -> Result<()>,
    ) -> Error {
        let e = self.with_step(e);
        if matches!(e, Error::NonFinite { .. }) {
            if let Ok(bytes) = self.checkpoint_bytes() {
                let _ = sink(TrainEvent::Abort {
                    step: self.step,
                    reason: e.to_string(),
                    checkpoint: &bytes,
                    batch,
                });
            }
        }
        e
    }

    fn emit_checkpoint(&mut self, sink: &mut dyn FnMut(TrainEvent) -> Result<()>) -> Result<()> {
        let bytes = self.checkpoint_bytes()?;
        self.checkpoints += 1;
        sink(TrainEvent::Checkpoint {
            step: self.step,
            bytes: &bytes,
        })
    }

    /// Runs the rollout and update loop until `total_env_steps`, passing
    /// every metric record and checkpoint to `sink`.
    pub fn run(&mut self, sink: &mut dyn FnMut(TrainEvent) -> Result<()>) -> Result<TrainingReport> {
        let total = self.cfg.total_env_steps;
        let train_seed = self.cfg.seed;
        let mut records = Vec::new();
        self.emit_checkpoint(sink)?;
        let mut last_checkpoint = self.step;

        let (mut env, mut obs, mut gs) = self.reset(self.episodes, train_seed)?;
        let (mut ep_return, mut ep_len) = (0.0, 0u64);
        let mut finished: Vec<(u64, f64, u64)> = Vec::new();

        while self.step < total {
            let (actions, log_probs) = match self.act(&obs, false) {
                Ok(x) => x,
                Err(e) => {
                    let dump = json!({ "observations": obs });
                    return Err(self.abort(e, dump, sink));
                }
            };
            let res = env.step(&actions).map_err(|e| match e {
                Error::Contract(m) => Error::Contract(format!("env step {}: {m}", self.step)),
                other => other,
            })?;
            self.step += 1;
            ep_return += res.reward;
            ep_len += 1;
            let bootstrap = !res.done || self.truncated(&env, res.reward);

            if matches!(self.learner, Learner::Dissc(_)) {
                self.central.push(StateTransition {
                    state: gs.clone(),
                    next_state: res.global_state.clone(),
                    reward: res.reward,
                    bootstrap,
                });
            }
            for (i, o) in obs.iter().enumerate() {
                let ty = &self.spec.agent_types[i];
                self.decentral
                    .get_mut(ty)
                    .expect("buffer per type")
                    .push(AgentTransition {
                        obs: o.vector.clone(),
                        next_obs: res.observations[i].vector.clone(),
                        state: gs.clone(),
                        next_state: res.global_state.clone(),
                        action: actions[i],
                        reward: res.reward,
                        bootstrap,
                        log_prob: log_probs[i],
                    });
            }
            obs = res.observations;
            gs = res.global_state;

            if res.done {
                let mut r = MetricRecord::empty(self.step, RecordKind::Episode);
                r.episode_return = Some(ep_return);
                r.episode_length = Some(ep_len);
                sink(TrainEvent::Metric(&r))?;
                records.push(r);
                finished.push((self.step, ep_return, ep_len));
                self.episodes += 1;
                (ep_return, ep_len) = (0.0, 0);
                (env, obs, gs) = self.reset(self.episodes, train_seed)?;
            }

            if self.central.is_full() {
                let batch = self.central.drain_full()?;
                let Learner::Dissc(l) = &mut self.learner else {
                    unreachable!("only the central learner fills the central buffer")
                };
                match l.central_update(&mut self.store, &batch, &self.cfg) {
                    Ok(loss) => {
                        self.central_updates += 1;
                        let mut r = MetricRecord::empty(self.step, RecordKind::Central);
                        r.losses.insert("central_td".to_string(), loss);
                        sink(TrainEvent::Metric(&r))?;
                        records.push(r);
                    }
                    Err(e) => {
                        let dump = serde_json::to_value(&batch)?;
                        return Err(self.abort(e, dump, sink));
                    }
                }
            }

            for ty in self.spec.type_names.clone() {
                if !self.decentral[&ty].is_full() {
                    continue;
                }
                let batch = self.decentral.get_mut(&ty).expect("buffer per type").drain_full()?;
                let out: Result<UpdateOutcome> = match &mut self.learner {
                    Learner::Dissc(l) => {
                        l.decentral_update(&mut self.store, &ty, &batch, &self.cfg, &mut self.metric_rng)
                    }
                    Learner::Iac(l) => l.decentral_update(&mut self.store, &ty, &batch, &self.cfg),
                };
                match out {
                    Ok(o) => {
                        self.decentral_updates += 1;
                        let mut r = MetricRecord::empty(self.step, RecordKind::Decentral);
                        r.agent_type = Some(ty.clone());
                        r.losses = o.losses;
                        r.learnability_estimate = o.learnability_estimate;
                        r.factoredness_estimate = o.factoredness_estimate;
                        r.beta_summary = o.beta_summary;
                        sink(TrainEvent::Metric(&r))?;
                        records.push(r);
                    }
                    Err(e) => {
                        let dump = serde_json::to_value(&batch)?;
                        return Err(self.abort(e, dump, sink));
                    }
                }
            }

            let every = self.cfg.checkpoint_interval;
            if every > 0 && self.step % every == 0 {
                self.emit_checkpoint(sink)?;
                last_checkpoint = self.step;
            }
        }
        if self.step != last_checkpoint {
            self.emit_checkpoint(sink)?;
        }

        let cutoff = total - total / 10;
        let tail: Vec<&(u64, f64, u64)> = finished.iter().filter(|e| e.0 > cutoff).collect();
        let mean = |f: &dyn Fn(&(u64, f64, u64)) -> f64| -> Option<f64> {
            (!tail.is_empty()).then(|| tail.iter().map(|e| f(e)).sum::<f64>() / tail.len() as f64)
        };
        Ok(TrainingReport {
            algo: self.cfg.algo,
            env_steps: self.step,
            episodes: self.episodes,
            central_updates: self.central_updates,
            decentral_updates: self.decentral_updates,
            checkpoints: self.checkpoints,
            final_mean_return: mean(&|e| e.1),
            final_mean_length: mean(&|e| e.2 as f64),
            final_beta: self.betas(),
            records,
        })
    }

    /// Plays `episodes` episodes without learning. Env seeds come from
    /// `seed`, so evaluation never touches the training streams.
    pub fn evaluate(&mut self, episodes: u64, greedy: bool, seed: u64) -> Result<Vec<MetricRecord>> {
        let saved = std::mem::replace(&mut self.act_rng, ChaCha8Rng::seed_from_u64(splitmix(seed)));
        let mut out = Vec::new();
        let result = (|| -> Result<()> {
            for ep in 0..episodes {
                let (mut env, mut obs, _) =
                    env_reset(&self.env_cfg.clone().with_seed(episode_seed(self.env_cfg.seed, seed, ep)))?;
                let (mut ret, mut len) = (0.0, 0u64);
                loop {
                    let (actions, _) = self.act(&obs, greedy).map_err(|e| self.with_step(e))?;
                    let res = env.step(&actions)?;
                    ret += res.reward;
                    len += 1;
                    obs = res.observations;
                    if res.done {
                        break;
                    }
                }
                let mut r = MetricRecord::empty(self.step, RecordKind::Eval);
                r.episode_return = Some(ret);
                r.episode_length = Some(len);
                out.push(r);
            }
            Ok(())
        })();
        self.act_rng = saved;
        result.map(|_| out)
    }
}

/// Trains with `config.algo` and collects the metric stream in the report.
pub fn run_training(config: TrainConfig, env_config: EnvConfig) -> Result<TrainingReport> {
    Trainer::new(config, env_config)?.run(&mut |_| Ok(()))
}

/// The independent actor-critic baseline under the same loop and budget.
pub fn run_iac_baseline(config: TrainConfig, env_config: EnvConfig) -> Result<TrainingReport> {
    run_training(
        TrainConfig {
            algo: Algo::Iac,
            ..config
        },
        env_config,
    )
}

/// Episode-length and return of a uniformly random joint policy, for
/// baselines.
pub fn random_policy_episodes(env_config: &EnvConfig, episodes: u64, seed: u64) -> Result<Vec<(f64, u64)>> {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix(seed));
    let mut out = Vec::new();
    for ep in 0..episodes {
        let (mut env, _, _) =
            env_reset(&env_config.clone().with_seed(episode_seed(env_config.seed, seed, ep)))?;
        let na = env.spec().num_actions;
        let n = env.spec().agent_types.len();
        let (mut ret, mut len) = (0.0, 0u64);
        loop {
            let actions: Vec<usize> = (0..n).map(|_| rng.gen_range(0..na)).collect();
            let res = env.step(&actions)?;
            ret += res.reward;
            len += 1;
            if res.done {
                break;
            }
        }
        out.push((ret, len));
    }
    Ok(out)
}
