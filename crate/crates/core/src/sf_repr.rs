//! Successor-feature representation shared by every agent.
//!
//! The encoder maps an observation stack to features `φ`, the successor
//! network maps `φ` to `ψ`, the reward weights `w` give `r ≈ φᵀw` and
//! `V = ψᵀw`, and the decoder predicts the next observation from `φ` and the
//! agent's action.
//!
//! Parameter groups: `shared_encoder`, `sf_net`, `sf_target`,
//! `reward_weights`, `decoder`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Graph, Hidden, Mlp, Output, ParamId, ParamStore, Tensor, Var};

pub const ENCODER_GROUP: &str = "shared_encoder";
pub const SF_GROUP: &str = "sf_net";
pub const SF_TARGET_GROUP: &str = "sf_target";
pub const REWARD_GROUP: &str = "reward_weights";
pub const DECODER_GROUP: &str = "decoder";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SfConfig {
    /// Feature dimension K.
    pub feature_dim: usize,
    pub encoder_hidden: Vec<usize>,
    pub sf_hidden: Vec<usize>,
    pub decoder_hidden: Vec<usize>,
    pub activation: Hidden,
    /// SF updates between target snapshots.
    pub target_period: usize,
}

impl Default for SfConfig {
    fn default() -> Self {
        Self {
            feature_dim: 32,
            encoder_hidden: vec![64],
            sf_hidden: vec![64],
            decoder_hidden: vec![64],
            activation: Hidden::Tanh,
            target_period: 200,
        }
    }
}

impl SfConfig {
    pub fn validate(&self) -> Result<()> {
        if self.feature_dim == 0 {
            return Err(Error::config("sf.feature_dim", "must be positive"));
        }
        if self.target_period == 0 {
            return Err(Error::config("sf.target_period", "must be positive"));
        }
        for (name, h) in [
            ("sf.encoder_hidden", &self.encoder_hidden),
            ("sf.sf_hidden", &self.sf_hidden),
            ("sf.decoder_hidden", &self.decoder_hidden),
        ] {
            if h.contains(&0) {
                return Err(Error::config(name, "layer widths must be positive"));
            }
        }
        Ok(())
    }
}

fn widths(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    let mut w = vec![input];
    w.extend_from_slice(hidden);
    w.push(output);
    w
}

#[derive(Debug, Clone)]
pub struct SfModel {
    pub encoder: Mlp,
    pub sf: Mlp,
    pub sf_target: Mlp,
    pub w: ParamId,
    pub decoder: Mlp,
    num_actions: usize,
    target_period: usize,
    updates: u64,
}

impl SfModel {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        obs_dim: usize,
        num_actions: usize,
        cfg: &SfConfig,
        rng: &mut R,
    ) -> Self {
        let k = cfg.feature_dim;
        let act = cfg.activation;
        let encoder = Mlp::new(
            store,
            ENCODER_GROUP,
            &widths(obs_dim, &cfg.encoder_hidden, k),
            act,
            Output::Identity,
            rng,
        );
        let sf = Mlp::new(store, SF_GROUP, &widths(k, &cfg.sf_hidden, k), act, Output::Identity, rng);
        let sf_target = sf.clone_into_group(store, SF_TARGET_GROUP);
        let w = store.insert_glorot(format!("{REWARD_GROUP}/w"), k, 1, rng);
        let w_data = store.get(w).data().to_vec();
        *store.get_mut(w) = Tensor::vector(w_data);
        let decoder = Mlp::new(
            store,
            DECODER_GROUP,
            &widths(k + num_actions, &cfg.decoder_hidden, obs_dim),
            act,
            Output::Identity,
            rng,
        );
        Self {
            encoder,
            sf,
            sf_target,
            w,
            decoder,
            num_actions,
            target_period: cfg.target_period,
            updates: 0,
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.encoder.output_dim()
    }

    pub fn obs_dim(&self) -> usize {
        self.encoder.input_dim()
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    pub fn weights<'a>(&self, store: &'a ParamStore) -> &'a [f64] {
        store.get(self.w).data()
    }

    pub fn encode(&self, store: &ParamStore, obs: &[f64]) -> Result<Vec<f64>> {
        Ok(self.encoder.infer(store, &Tensor::vector(obs.to_vec()))?.into_data())
    }

    pub fn encode_batch(&self, store: &ParamStore, obs: &Tensor) -> Result<Tensor> {
        self.encoder.infer(store, obs)
    }

    pub fn successor(&self, store: &ParamStore, phi: &[f64]) -> Result<Vec<f64>> {
        Ok(self.sf.infer(store, &Tensor::vector(phi.to_vec()))?.into_data())
    }

    pub fn successor_batch(&self, store: &ParamStore, phi: &Tensor) -> Result<Tensor> {
        self.sf.infer(store, phi)
    }

    /// Parameters trained by the reward and prediction losses.
    pub fn representation_params(&self) -> Vec<ParamId> {
        let mut p = self.encoder.params();
        p.push(self.w);
        p.extend(self.decoder.params());
        p
    }

    pub fn sf_params(&self) -> Vec<ParamId> {
        self.sf.params()
    }

    pub fn sync_target(&self, store: &mut ParamStore) -> Result<()> {
        store.copy_values(&self.sf.params(), &self.sf_target.params())
    }

    /// Counts one SF update and refreshes the target every `target_period`.
    pub fn note_update(&mut self, store: &mut ParamStore) -> Result<()> {
        self.updates += 1;
        if self.updates % self.target_period as u64 == 0 {
            self.sync_target(store)?;
        }
        Ok(())
    }

    /// The three representation losses on a batch, recorded into `g`.
    pub fn losses(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        batch: &SfBatch,
        gamma: f64,
    ) -> Result<SfLosses> {
        let obs = g.input(batch.obs.clone());
        let next = g.input(batch.next_obs.clone());
        let phi = self.encoder.forward(g, store, obs)?;
        let phi_next = self.encoder.forward(g, store, next)?;
        let w = g.param(store, self.w);
        let r = g.input(batch.rewards.clone());
        let reward = reward_loss(g, phi_next, w, r)?;

        let onehot = g.input(batch.actions_onehot.clone());
        let prediction = prediction_loss(g, store, &self.decoder, phi, onehot, next)?;

        let phi_c = g.detach(phi);
        let phi_next_c = g.detach(phi_next);
        let psi_now = self.sf.forward(g, store, phi_c)?;
        let psi_next = self.sf_target.forward_frozen(g, store, phi_next_c)?;
        let k = self.feature_dim();
        let mask: Vec<f64> = batch
            .not_done
            .data()
            .iter()
            .flat_map(|&m| std::iter::repeat(m).take(k))
            .collect();
        let keep = g.input(Tensor::new(&[batch.not_done.numel(), k], mask)?);
        let psi_next = g.mul(psi_next, keep)?;
        let td = sf_td_loss(g, phi_next_c, psi_next, psi_now, gamma)?;
        Ok(SfLosses {
            reward,
            prediction,
            td,
        })
    }
}

/// Transitions for the representation losses. `rewards` and `not_done` are
/// `[n,1]`; `not_done` is 0 where the episode ended.
#[derive(Debug, Clone)]
pub struct SfBatch {
    pub obs: Tensor,
    pub next_obs: Tensor,
    pub actions_onehot: Tensor,
    pub rewards: Tensor,
    pub not_done: Tensor,
}

#[derive(Debug, Clone, Copy)]
pub struct SfLosses {
    pub reward: Var,
    pub prediction: Var,
    pub td: Var,
}

/// `ψᵀw`, the state value.
pub fn value_from_sf(psi: &[f64], w: &[f64]) -> Result<f64> {
    if psi.len() != w.len() {
        return Err(Error::dim("value_from_sf", &[psi.len()], &[w.len()]));
    }
    Ok(psi.iter().zip(w).map(|(a, b)| a * b).sum())
}

/// Row-wise `ψᵀw` on a recorded `[n,K]` batch, giving `[n,1]`.
pub fn value_from_sf_var(g: &mut Graph, psi: Var, w: Var) -> Result<Var> {
    let p = g.mul(psi, w)?;
    Ok(g.sum_rows(p))
}

/// Batch mean of `(r − φᵀw)²`.
pub fn reward_loss(g: &mut Graph, phi: Var, w: Var, r: Var) -> Result<Var> {
    let pred = value_from_sf_var(g, phi, w)?;
    let d = g.sub(r, pred)?;
    let sq = g.square(d);
    Ok(g.mean(sq))
}

/// Batch mean of `‖o' − D(φ, a)‖²`.
pub fn prediction_loss(
    g: &mut Graph,
    store: &ParamStore,
    decoder: &Mlp,
    phi: Var,
    action_onehot: Var,
    next_obs: Var,
) -> Result<Var> {
    let x = g.concat(&[phi, action_onehot])?;
    let pred = decoder.forward(g, store, x)?;
    let d = g.sub(next_obs, pred)?;
    let sq = g.square(d);
    let per = g.sum_rows(sq);
    Ok(g.mean(per))
}

/// Batch mean of `‖φ' + γψ_target' − ψ‖²`. Only `psi_now` should carry
/// gradient; callers pass `phi_next` and `psi_next_target` as constants.
pub fn sf_td_loss(
    g: &mut Graph,
    phi_next: Var,
    psi_next_target: Var,
    psi_now: Var,
    gamma: f64,
) -> Result<Var> {
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::contract(format!("gamma must lie in [0,1), got {gamma}")));
    }
    let disc = g.scale(psi_next_target, gamma);
    let target = g.add(phi_next, disc)?;
    let d = g.sub(target, psi_now)?;
    let sq = g.square(d);
    let per = g.sum_rows(sq);
    Ok(g.mean(per))
}

/// Ridge least-squares fit of `w` in `r ≈ φᵀw`. Diagnostics only; training
/// learns `w` by gradient descent.
pub fn least_squares_weights(phis: &[Vec<f64>], rewards: &[f64], ridge: f64) -> Result<Vec<f64>> {
    let k = phis.first().map_or(0, |p| p.len());
    if phis.len() != rewards.len() || k == 0 {
        return Err(Error::dim("least_squares_weights", &[phis.len(), k], &[rewards.len()]));
    }
    let x = nalgebra::DMatrix::from_fn(phis.len(), k, |i, j| phis[i][j]);
    let y = nalgebra::DVector::from_column_slice(rewards);
    let a = x.transpose() * &x + nalgebra::DMatrix::identity(k, k) * ridge;
    let b = x.transpose() * y;
    let chol = a
        .cholesky()
        .ok_or_else(|| Error::contract("normal equations are not positive definite"))?;
    Ok(chol.solve(&b).iter().copied().collect())
}
