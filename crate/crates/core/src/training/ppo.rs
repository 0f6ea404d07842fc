use rand::Rng;

use crate::envs::Observation;
use crate::error::{Error, Result};
use crate::numerics::{Adam, Graph, Mlp, ParamStore, Tensor, Var};

/// What an acting agent may read: its own observation stack and the shared
/// parameters. There is no path to global state or other agents' views.
pub struct PolicyView<'a> {
    pub(crate) store: &'a ParamStore,
    pub(crate) encoder: Option<&'a Mlp>,
    pub(crate) actor: &'a Mlp,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActionChoice {
    pub action: usize,
    pub log_prob: f64,
    pub probs: Vec<f64>,
}

impl PolicyView<'_> {
    pub fn probs(&self, obs: &Observation) -> Result<Vec<f64>> {
        let mut x = Tensor::vector(obs.vector.clone());
        if let Some(enc) = self.encoder {
            x = enc.infer(self.store, &x)?;
        }
        let logits = self.actor.infer(self.store, &x)?;
        if !logits.all_finite() {
            return Err(Error::NonFinite {
                what: "policy logits".into(),
                step: 0,
            });
        }
        let m = logits.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = logits.data().iter().map(|v| (v - m).exp()).collect();
        let z: f64 = e.iter().sum();
        Ok(e.into_iter().map(|v| v / z).collect())
    }

    pub fn act<R: Rng>(&self, obs: &Observation, rng: &mut R, greedy: bool) -> Result<ActionChoice> {
        let probs = self.probs(obs)?;
        let action = if greedy {
            let mut best = 0;
            for (a, p) in probs.iter().enumerate() {
                if *p > probs[best] {
                    best = a;
                }
            }
            best
        } else {
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            let mut pick = probs.len() - 1;
            for (a, p) in probs.iter().enumerate() {
                acc += p;
                if u < acc {
                    pick = a;
                    break;
                }
            }
            pick
        };
        Ok(ActionChoice {
            action,
            log_prob: probs[action].ln(),
            probs,
        })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct PpoLoss {
    pub total: Var,
    pub surrogate: Var,
    pub entropy: Var,
}

/// Clipped surrogate `−mean(min(ρA, clip(ρ, 1−ε, 1+ε)A)) − c_H·H` on a
/// batch of logits. `actions_onehot` is `[n,A]`, `old_log_probs` and
/// `advantages` are `[n,1]`.
pub fn ppo_loss(
    g: &mut Graph,
    logits: Var,
    actions_onehot: &Tensor,
    old_log_probs: &Tensor,
    advantages: &Tensor,
    clip: f64,
    entropy_coef: f64,
) -> Result<PpoLoss> {
    let logp_all = g.log_softmax(logits);
    let onehot = g.constant(actions_onehot.clone());
    let picked = g.mul(logp_all, onehot)?;
    let logp = g.sum_rows(picked);
    let old = g.constant(old_log_probs.clone());
    let diff = g.sub(logp, old)?;
    let ratio = g.exp(diff);
    let adv = g.constant(advantages.clone());
    let s1 = g.mul(ratio, adv)?;
    let clipped = g.clamp(ratio, 1.0 - clip, 1.0 + clip);
    let s2 = g.mul(clipped, adv)?;
    let s = g.minimum(s1, s2)?;
    let m = g.mean(s);
    let surrogate = g.neg(m);

    let p = g.softmax(logits);
    let plogp = g.mul(p, logp_all)?;
    let per = g.sum_rows(plogp);
    let mean_plogp = g.mean(per);
    let entropy = g.neg(mean_plogp);
    let bonus = g.scale(entropy, entropy_coef);
    let total = g.sub(surrogate, bonus)?;
    Ok(PpoLoss {
        total,
        surrogate,
        entropy,
    })
}

/// Batch mean of `(target − v)²` with `target` held constant.
pub fn td_loss(g: &mut Graph, v: Var, targets: &Tensor) -> Result<Var> {
    let t = g.constant(targets.clone());
    let d = g.sub(t, v)?;
    let sq = g.square(d);
    Ok(g.mean(sq))
}

/// Fails with [`Error::NonFinite`] unless `v` is finite. The step index is
/// filled in by the trainer.
pub(crate) fn finite(v: f64, what: &str) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite {
            what: what.to_string(),
            step: 0,
        })
    }
}

/// Inputs of a PPO update, all row-aligned.
pub struct PpoBatch<'a> {
    pub inputs: &'a Tensor,
    pub actions_onehot: &'a Tensor,
    pub old_log_probs: &'a Tensor,
    pub advantages: &'a Tensor,
}

pub struct PpoStats {
    pub surrogate: f64,
    pub entropy: f64,
}

/// `epochs` full-batch clipped-surrogate steps on `actor`. Returns the
/// statistics of the first pass.
#[allow(clippy::too_many_arguments)]
pub fn ppo_update(
    store: &mut ParamStore,
    actor: &Mlp,
    opt: &mut Adam,
    batch: &PpoBatch,
    epochs: usize,
    clip: f64,
    entropy_coef: f64,
    max_grad_norm: f64,
) -> Result<PpoStats> {
    let params = actor.params();
    let mut first = None;
    for _ in 0..epochs {
        let mut g = Graph::new();
        let x = g.input(batch.inputs.clone());
        let logits = actor.forward(&mut g, store, x)?;
        let l = ppo_loss(
            &mut g,
            logits,
            batch.actions_onehot,
            batch.old_log_probs,
            batch.advantages,
            clip,
            entropy_coef,
        )?;
        let surrogate = finite(g.value(l.surrogate).item(), "ppo surrogate")?;
        let entropy = finite(g.value(l.entropy).item(), "policy entropy")?;
        first.get_or_insert(PpoStats { surrogate, entropy });
        store.zero_grad(&params);
        g.backward(l.total, store)?;
        store.clip_grad_norm(&params, max_grad_norm);
        opt.step(store, &params)?;
        store.zero_grad(&params);
    }
    first.ok_or_else(|| Error::contract("ppo update with zero epochs"))
}
