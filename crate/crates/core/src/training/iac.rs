use std::collections::BTreeMap;

use rand::Rng;

use super::buffer::{column, one_hot_rows, stack, AgentTransition};
use super::config::TrainConfig;
use super::dissc::{actor_group, normalize, shrink_output, widths, UpdateOutcome};
use super::ppo::{finite, ppo_update, td_loss, PolicyView, PpoBatch};
use crate::envs::EnvSpec;
use crate::error::{Error, Result};
use crate::numerics::{Adam, AdamConfig, Graph, Hidden, Mlp, Output, ParamStore};

pub fn critic_group(agent_type: &str) -> String {
    format!("critic:{agent_type}")
}

/// Independent actor-critic: per agent type, an actor and a critic on the
/// raw observation stack, both trained on the global reward.
#[derive(Debug, Clone)]
pub struct IacLearner {
    pub actors: BTreeMap<String, Mlp>,
    pub critics: BTreeMap<String, Mlp>,
    opt_pi: BTreeMap<String, Adam>,
    opt_critic: BTreeMap<String, Adam>,
}

impl IacLearner {
    pub fn new<R: Rng>(store: &mut ParamStore, spec: &EnvSpec, cfg: &TrainConfig, rng: &mut R) -> Self {
        let mut s = Self {
            actors: BTreeMap::new(),
            critics: BTreeMap::new(),
            opt_pi: BTreeMap::new(),
            opt_critic: BTreeMap::new(),
        };
        for ty in &spec.type_names {
            let actor = Mlp::new(
                store,
                &actor_group(ty),
                &widths(spec.obs_dim, &cfg.hidden, spec.num_actions),
                Hidden::Tanh,
                Output::Identity,
                rng,
            );
            let critic = Mlp::new(
                store,
                &critic_group(ty),
                &widths(spec.obs_dim, &cfg.hidden, 1),
                Hidden::Tanh,
                Output::Identity,
                rng,
            );
            shrink_output(store, &actor);
            s.actors.insert(ty.clone(), actor);
            s.critics.insert(ty.clone(), critic);
            s.opt_pi.insert(ty.clone(), Adam::new(AdamConfig::with_lr(cfg.lr_pi)));
            s.opt_critic
                .insert(ty.clone(), Adam::new(AdamConfig::with_lr(cfg.lr_central)));
        }
        s
    }

    pub fn policy<'a>(&'a self, store: &'a ParamStore, agent_type: &str) -> Result<PolicyView<'a>> {
        let actor = self
            .actors
            .get(agent_type)
            .ok_or_else(|| Error::contract(format!("no actor for agent type `{agent_type}`")))?;
        Ok(PolicyView {
            store,
            encoder: None,
            actor,
        })
    }

    /// PPO on the one-step TD advantage of the type's own critic, then one
    /// critic step.
    pub fn decentral_update(
        &mut self,
        store: &mut ParamStore,
        agent_type: &str,
        batch: &[AgentTransition],
        cfg: &TrainConfig,
    ) -> Result<UpdateOutcome> {
        if batch.is_empty() {
            return Err(Error::contract("decentralized update on an empty batch"));
        }
        let actor = self
            .actors
            .get(agent_type)
            .ok_or_else(|| Error::contract(format!("no actor for agent type `{agent_type}`")))?
            .clone();
        let critic = self.critics[agent_type].clone();
        let gamma = cfg.gamma;
        let obs = stack(batch.iter().map(|t| &t.obs))?;
        let next_obs = stack(batch.iter().map(|t| &t.next_obs))?;
        let v = critic.infer(store, &obs)?.into_data();
        let v_next = critic.infer(store, &next_obs)?.into_data();
        let targets: Vec<f64> = batch
            .iter()
            .zip(&v_next)
            .map(|(t, vn)| t.reward + if t.bootstrap { gamma * vn } else { 0.0 })
            .collect();
        let mut adv = Vec::with_capacity(batch.len());
        for (tg, vi) in targets.iter().zip(&v) {
            adv.push(finite(tg - vi, "td advantage")?);
        }
        let adv_mean = adv.iter().sum::<f64>() / adv.len() as f64;
        if cfg.normalize_advantages {
            normalize(&mut adv);
        }

        let mut losses = BTreeMap::new();
        let onehot = one_hot_rows(batch.iter().map(|t| t.action), actor.output_dim());
        let old_lp = column(batch.iter().map(|t| t.log_prob));
        let adv_t = column(adv.into_iter());
        let stats = ppo_update(
            store,
            &actor,
            self.opt_pi.get_mut(agent_type).expect("optimizer per type"),
            &PpoBatch {
                inputs: &obs,
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

        let params = critic.params();
        let mut g = Graph::new();
        let x = g.input(obs);
        let vv = critic.forward(&mut g, store, x)?;
        let loss = td_loss(&mut g, vv, &column(targets.into_iter()))?;
        losses.insert(
            "critic_td".to_string(),
            finite(g.value(loss).item(), "critic td loss")?,
        );
        store.zero_grad(&params);
        g.backward(loss, store)?;
        store.clip_grad_norm(&params, cfg.max_grad_norm);
        self.opt_critic
            .get_mut(agent_type)
            .expect("optimizer per type")
            .step(store, &params)?;
        store.zero_grad(&params);
        Ok(UpdateOutcome {
            losses,
            ..UpdateOutcome::default()
        })
    }
}
