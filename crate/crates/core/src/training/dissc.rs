use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::buffer::{column, one_hot_rows, stack, AgentTransition, StateTransition};
use super::config::TrainConfig;
use super::ppo::{finite, ppo_update, td_loss, PolicyView, PpoBatch};
use crate::disentangle::{
    edu_advantage, individual_reward, EduAdvantageRecord, insert_beta, learnability_loss, sf_edu,
    sf_learnability_estimate, update_beta,
};
use crate::envs::EnvSpec;
use crate::error::{Error, Result};
use crate::metrics::factoredness_sampled;
use crate::numerics::{Adam, AdamConfig, Graph, Hidden, Mlp, Output, ParamId, ParamStore, Tensor};
use crate::sf_repr::{SfBatch, SfModel};

pub const CRITIC_GROUP: &str = "critic";
pub const CRITIC_TARGET_GROUP: &str = "critic_target";

pub fn actor_group(agent_type: &str) -> String {
    format!("actor:{agent_type}")
}

/// Shrinks the last layer so a fresh policy starts close to uniform.
pub(crate) fn shrink_output(store: &mut ParamStore, actor: &Mlp) {
    let last = *actor.weights().last().expect("at least one layer");
    store.get_mut(last).data_mut().iter_mut().for_each(|v| *v *= 0.01);
}

pub(crate) fn widths(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    let mut w = vec![input];
    w.extend_from_slice(hidden);
    w.push(output);
    w
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaSummary {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
}

impl BetaSummary {
    pub fn of(beta: &[f64]) -> Self {
        let min = beta.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = beta.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mean = beta.iter().sum::<f64>() / beta.len().max(1) as f64;
        Self { min, max, mean }
    }
}

/// What one decentralized update reports.
#[derive(Debug, Clone, Default)]
pub struct UpdateOutcome {
    pub losses: BTreeMap<String, f64>,
    pub learnability_estimate: Option<f64>,
    pub factoredness_estimate: Option<f64>,
    pub beta_summary: Option<BetaSummary>,
}

/// Central critic on the global state plus its periodically synced target.
#[derive(Debug, Clone)]
pub struct CentralCritic {
    pub net: Mlp,
    pub target: Mlp,
    period: usize,
    updates: u64,
}

impl CentralCritic {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        state_dim: usize,
        hidden: &[usize],
        period: usize,
        rng: &mut R,
    ) -> Self {
        let net = Mlp::new(
            store,
            CRITIC_GROUP,
            &widths(state_dim, hidden, 1),
            Hidden::Tanh,
            Output::Identity,
            rng,
        );
        let target = net.clone_into_group(store, CRITIC_TARGET_GROUP);
        Self {
            net,
            target,
            period,
            updates: 0,
        }
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    pub fn value(&self, store: &ParamStore, states: &Tensor) -> Result<Vec<f64>> {
        Ok(self.net.infer(store, states)?.into_data())
    }

    /// One step on `(r + γ·V_target(s') − V(s))²` over `batch`.
    pub fn update(
        &mut self,
        store: &mut ParamStore,
        opt: &mut Adam,
        batch: &[StateTransition],
        gamma: f64,
        max_grad_norm: f64,
    ) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::contract("central update on an empty batch"));
        }
        let s = stack(batch.iter().map(|t| &t.state))?;
        let s2 = stack(batch.iter().map(|t| &t.next_state))?;
        let v_next = self.target.infer(store, &s2)?;
        let targets = column(
            batch
                .iter()
                .zip(v_next.data())
                .map(|(t, v)| t.reward + if t.bootstrap { gamma * v } else { 0.0 }),
        );
        let params = self.net.params();
        let mut g = Graph::new();
        let x = g.input(s);
        let v = self.net.forward(&mut g, store, x)?;
        let loss = td_loss(&mut g, v, &targets)?;
        let value = finite(g.value(loss).item(), "central td loss")?;
        store.zero_grad(&params);
        g.backward(loss, store)?;
        store.clip_grad_norm(&params, max_grad_norm);
        opt.step(store, &params)?;
        store.zero_grad(&params);
        self.updates += 1;
        if self.updates % self.period as u64 == 0 {
            store.copy_values(&self.net.params(), &self.target.params())?;
        }
        Ok(value)
    }
}

/// Every network and optimizer of the successor-feature learner.
#[derive(Debug, Clone)]
pub struct DisscLearner {
    pub model: SfModel,
    pub critic: CentralCritic,
    pub actors: BTreeMap<String, Mlp>,
    pub betas: BTreeMap<String, ParamId>,
    opt_central: Adam,
    opt_pi: BTreeMap<String, Adam>,
    opt_psi: Adam,
    opt_phi: Adam,
    opt_beta: BTreeMap<String, Adam>,
}

impl DisscLearner {
    pub fn new<R: Rng>(store: &mut ParamStore, spec: &EnvSpec, cfg: &TrainConfig, rng: &mut R) -> Self {
        let model = SfModel::new(store, spec.obs_dim, spec.num_actions, &cfg.sf, rng);
        let critic = CentralCritic::new(store, spec.state_dim, &cfg.hidden, cfg.critic_target_period, rng);
        let k = cfg.sf.feature_dim;
        let mut actors = BTreeMap::new();
        let mut betas = BTreeMap::new();
        let mut opt_pi = BTreeMap::new();
        let mut opt_beta = BTreeMap::new();
        for ty in &spec.type_names {
            let actor = Mlp::new(
                store,
                &actor_group(ty),
                &widths(k, &cfg.hidden, spec.num_actions),
                Hidden::Tanh,
                Output::Identity,
                rng,
            );
            shrink_output(store, &actor);
            actors.insert(ty.clone(), actor);
            betas.insert(ty.clone(), insert_beta(store, ty, k));
            opt_pi.insert(ty.clone(), Adam::new(AdamConfig::with_lr(cfg.lr_pi)));
            opt_beta.insert(ty.clone(), Adam::new(AdamConfig::with_lr(cfg.lr_beta)));
        }
        Self {
            model,
            critic,
            actors,
            betas,
            opt_central: Adam::new(AdamConfig::with_lr(cfg.lr_central)),
            opt_pi,
            opt_psi: Adam::new(AdamConfig::with_lr(cfg.lr_psi)),
            opt_phi: Adam::new(AdamConfig::with_lr(cfg.lr_phi)),
            opt_beta,
        }
    }

    pub fn policy<'a>(&'a self, store: &'a ParamStore, agent_type: &str) -> Result<PolicyView<'a>> {
        let actor = self
            .actors
            .get(agent_type)
            .ok_or_else(|| Error::contract(format!("no actor for agent type `{agent_type}`")))?;
        Ok(PolicyView {
            store,
            encoder: Some(&self.model.encoder),
            actor,
        })
    }

    pub fn beta<'a>(&self, store: &'a ParamStore, agent_type: &str) -> Result<&'a [f64]> {
        let id = self
            .betas
            .get(agent_type)
            .ok_or_else(|| Error::contract(format!("no β for agent type `{agent_type}`")))?;
        Ok(store.get(*id).data())
    }

    pub fn central_update(
        &mut self,
        store: &mut ParamStore,
        batch: &[StateTransition],
        cfg: &TrainConfig,
    ) -> Result<f64> {
        self.critic
            .update(store, &mut self.opt_central, batch, cfg.gamma, cfg.max_grad_norm)
    }

    /// Policy step on the SF-EDU advantage, then the representation losses,
    /// then the learnability step on `β` of `agent_type`.
    pub fn decentral_update<R: Rng>(
        &mut self,
        store: &mut ParamStore,
        agent_type: &str,
        batch: &[AgentTransition],
        cfg: &TrainConfig,
        rng: &mut R,
    ) -> Result<UpdateOutcome> {
        if batch.is_empty() {
            return Err(Error::contract("decentralized update on an empty batch"));
        }
        let beta_id = *self
            .betas
            .get(agent_type)
            .ok_or_else(|| Error::contract(format!("no β for agent type `{agent_type}`")))?;
        let actor = self.actors[agent_type].clone();
        let n = batch.len();
        let na = self.model.num_actions();
        let gamma = cfg.gamma;

        // (1) utilities and advantages
        let obs = stack(batch.iter().map(|t| &t.obs))?;
        let next_obs = stack(batch.iter().map(|t| &t.next_obs))?;
        let phi = self.model.encode_batch(store, &obs)?;
        let phi_next = self.model.encode_batch(store, &next_obs)?;
        let psi = self.model.successor_batch(store, &phi)?;
        let psi_next = self.model.successor_batch(store, &phi_next)?;
        let vg = self.critic.value(store, &stack(batch.iter().map(|t| &t.state))?)?;
        let vg_next = self
            .critic
            .value(store, &stack(batch.iter().map(|t| &t.next_state))?)?;
        let w = self.model.weights(store).to_vec();
        let beta = store.get(beta_id).data().to_vec();

        let mut adv = Vec::with_capacity(n);
        let mut private = Vec::with_capacity(n);
        let mut global = Vec::with_capacity(n);
        for (i, t) in batch.iter().enumerate() {
            let rec = sf_edu(vg[i], psi.row(i), &beta, &w, gamma)?;
            let edu_next = if t.bootstrap {
                sf_edu(vg_next[i], psi_next.row(i), &beta, &w, gamma)?.edu
            } else {
                0.0
            };
            let r_i = individual_reward(t.reward, phi_next.row(i), &beta, &w)?;
            let rec = EduAdvantageRecord {
                r_individual: r_i,
                ..rec
            };
            adv.push(finite(edu_advantage(&rec, edu_next), "sf-edu advantage")?);
            private.push(r_i + gamma * edu_next);
            global.push(t.reward + if t.bootstrap { gamma * vg_next[i] } else { 0.0 });
        }
        let adv_mean = adv.iter().sum::<f64>() / n as f64;
        if cfg.normalize_advantages {
            normalize(&mut adv);
        }

        // (2) policy
        let mut losses = BTreeMap::new();
        let onehot = one_hot_rows(batch.iter().map(|t| t.action), na);
        let old_lp = column(batch.iter().map(|t| t.log_prob));
        let adv_t = column(adv.into_iter());
        let stats = ppo_update(
            store,
            &actor,
            self.opt_pi.get_mut(agent_type).expect("optimizer per type"),
            &PpoBatch {
                inputs: &phi,
                actions_onehot: &onehot,
                old_log_probs: &old_lp,
                advantages: &adv_t,
            },
            cfg.ppo_epochs,
            cfg.ppo_clip,
            cfg.entropy_coef,
            cfg.max_grad_norm,
        )?;
        losses.insert("ppo_surrogate".to_string(), stats.surrogate);
        losses.insert("entropy".to_string(), stats.entropy);
        losses.insert("advantage_mean".to_string(), adv_mean);

        // (3) representation
        let sf_batch = SfBatch {
            obs: obs.clone(),
            next_obs,
            actions_onehot: onehot,
            rewards: column(batch.iter().map(|t| t.reward)),
            not_done: column(batch.iter().map(|t| if t.bootstrap { 1.0 } else { 0.0 })),
        };
        let rep = self.model.representation_params();
        let sfp = self.model.sf_params();
        let mut g = Graph::new();
        let l = self.model.losses(&mut g, store, &sf_batch, gamma)?;
        let reward = finite(g.value(l.reward).item(), "reward loss")?;
        let prediction = finite(g.value(l.prediction).item(), "prediction loss")?;
        let td = finite(g.value(l.td).item(), "sf td loss")?;
        let a = g.add(l.reward, l.prediction)?;
        let total = g.add(a, l.td)?;
        store.zero_grad(&rep);
        store.zero_grad(&sfp);
        g.backward(total, store)?;
        store.clip_grad_norm(&rep, cfg.max_grad_norm);
        store.clip_grad_norm(&sfp, cfg.max_grad_norm);
        self.opt_phi.step(store, &rep)?;
        self.opt_psi.step(store, &sfp)?;
        store.zero_grad(&rep);
        store.zero_grad(&sfp);
        self.model.note_update(store)?;
        losses.insert("reward".to_string(), reward);
        losses.insert("prediction".to_string(), prediction);
        losses.insert("sf_td".to_string(), td);

        // (4) disentanglement
        let phi = self.model.encode_batch(store, &obs)?;
        let psi = self.model.successor_batch(store, &phi)?;
        let psi_next = self
            .model
            .successor_batch(store, &self.model.encode_batch(store, &sf_batch.next_obs)?)?;
        let w = self.model.weights(store).to_vec();
        let logits = actor.infer(store, &phi)?;
        let probs = softmax_rows(&logits);
        let mut g = Graph::new();
        let ll = learnability_loss(&mut g, store, beta_id, &probs, &psi, &psi_next, &w, cfg.c_lambda)?;
        losses.insert(
            "learnability".to_string(),
            finite(g.value(ll).item(), "learnability loss")?,
        );
        if cfg.beta_updates {
            store.get_mut(beta_id).zero_grad();
            g.backward(ll, store)?;
            update_beta(
                store,
                beta_id,
                self.opt_beta.get_mut(agent_type).expect("optimizer per type"),
            )?;
        }
        let beta = store.get(beta_id).data().to_vec();
        let estimate = sf_learnability_estimate(&psi, &psi_next, &beta, &w)?;
        let factoredness = factoredness_sampled(&private, &global, cfg.factoredness_pairs, rng)?;
        Ok(UpdateOutcome {
            losses,
            learnability_estimate: estimate.value(),
            factoredness_estimate: factoredness,
            beta_summary: Some(BetaSummary::of(&beta)),
        })
    }
}

/// Centers `v` and scales it to unit standard deviation when that is
/// nonzero.
pub(crate) fn normalize(v: &mut [f64]) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let sd = var.sqrt();
    for x in v.iter_mut() {
        *x -= mean;
        if sd > 1e-8 {
            *x /= sd;
        }
    }
}

pub(crate) fn softmax_rows(logits: &Tensor) -> Tensor {
    let c = logits.cols();
    let mut out = Vec::with_capacity(logits.numel());
    for r in 0..logits.rows() {
        let row = logits.row(r);
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
        let z: f64 = e.iter().sum();
        out.extend(e.into_iter().map(|v| v / z));
    }
    Tensor::new(&[logits.rows(), c], out).expect("same shape as logits")
}
