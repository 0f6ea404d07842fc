//! Disentangling an agent's own contribution from everyone else's.
//!
//! Each agent type owns a vector `β ∈ [0,1]^K`. Features scaled by `β` are
//! attributed to the agent and features scaled by `1 − β` to the others, so
//! `w⁺ = β⊙w` and `w⁻ = (1−β)⊙w`. The others' value `V₋ᵢ = ψ₋ᵢᵀw` with
//! `ψ₋ᵢ = ψ⊙(1−β)` gives the private utility `EDUᵢ = V_G − V₋ᵢ`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Adam, Graph, ParamId, ParamStore, Tensor, Var};
use crate::sf_repr::value_from_sf;

/// Denominators below this make a learnability ratio undefined.
pub const DENOM_FLOOR: f64 = 1e-8;

pub fn beta_group(agent_type: &str) -> String {
    format!("beta:{agent_type}")
}

/// Adds an all-ones `β` for `agent_type` to `store`.
pub fn insert_beta(store: &mut ParamStore, agent_type: &str, k: usize) -> ParamId {
    store.insert(format!("{}/beta", beta_group(agent_type)), Tensor::full(&[k], 1.0))
}

/// A learnability ratio, or the sentinel for a vanishing denominator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Learnability {
    Defined(f64),
    Undefined,
}

impl Learnability {
    pub fn from_ratio(num: f64, den: f64) -> Self {
        if den < DENOM_FLOOR {
            Learnability::Undefined
        } else {
            Learnability::Defined(num / den)
        }
    }

    pub fn value(self) -> Option<f64> {
        match self {
            Learnability::Defined(v) => Some(v),
            Learnability::Undefined => None,
        }
    }

    pub fn is_defined(self) -> bool {
        matches!(self, Learnability::Defined(_))
    }
}

fn check_len(op: &'static str, a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::dim(op, &[a.len()], &[b.len()]));
    }
    Ok(())
}

/// `v ⊙ (1 − β)`.
pub fn rescale(v: &[f64], beta: &[f64]) -> Result<Vec<f64>> {
    check_len("rescale", v, beta)?;
    Ok(v.iter().zip(beta).map(|(x, b)| x * (1.0 - b)).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitWeights {
    pub w_plus: Vec<f64>,
    pub w_minus: Vec<f64>,
}

/// `β⊙w` and `(1−β)⊙w`, each correctly rounded up to one unit in the last
/// place. The larger share is rounded and the smaller one is taken as the
/// exact remainder, so `w⁺ + w⁻ == w` holds bit for bit.
pub fn split_weights(w: &[f64], beta: &[f64]) -> Result<SplitWeights> {
    check_len("split_weights", w, beta)?;
    let (w_plus, w_minus) = w
        .iter()
        .zip(beta)
        .map(|(&x, &b)| {
            if b >= 0.5 {
                let p = b * x;
                (p, x - p)
            } else {
                let m = (1.0 - b) * x;
                (x - m, m)
            }
        })
        .unzip();
    Ok(SplitWeights { w_plus, w_minus })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EduAdvantageRecord {
    pub v_global: f64,
    pub v_others: f64,
    pub edu: f64,
    pub r_individual: f64,
    pub advantage: f64,
    pub gamma: f64,
}

/// Fills `v_others` and `edu`; reward and advantage stay zero.
pub fn sf_edu(v_global: f64, psi: &[f64], beta: &[f64], w: &[f64], gamma: f64) -> Result<EduAdvantageRecord> {
    let v_others = value_from_sf(&rescale(psi, beta)?, w)?;
    let edu = v_global - v_others;
    Ok(EduAdvantageRecord {
        v_global,
        v_others,
        edu,
        r_individual: 0.0,
        advantage: 0.0,
        gamma,
    })
}

/// `r − φ₋ᵢᵀw`.
pub fn individual_reward(r_global: f64, phi: &[f64], beta: &[f64], w: &[f64]) -> Result<f64> {
    Ok(r_global - value_from_sf(&rescale(phi, beta)?, w)?)
}

/// `Rᵢ + γ·EDU(t+1) − EDU(t)`.
pub fn edu_advantage(rec: &EduAdvantageRecord, edu_next: f64) -> f64 {
    rec.r_individual + rec.gamma * edu_next - rec.edu
}

fn diff_rows(psi_t: &Tensor, psi_next: &Tensor, w: &[f64]) -> Result<Vec<f64>> {
    if psi_t.shape() != psi_next.shape() || psi_t.cols() != w.len() {
        return Err(Error::dim("learnability", psi_t.shape(), psi_next.shape()));
    }
    Ok(psi_t
        .data()
        .iter()
        .zip(psi_next.data())
        .map(|(a, b)| a - b)
        .collect())
}

/// Mean `|(ψ_t − ψ_{t+1})·w⁺|` over mean `|(ψ_t − ψ_{t+1})·w⁻|` across the
/// rows of two `[n,K]` batches.
pub fn sf_learnability_estimate(
    psi_t: &Tensor,
    psi_next: &Tensor,
    beta: &[f64],
    w: &[f64],
) -> Result<Learnability> {
    if psi_t.numel() == 0 {
        return Err(Error::contract("learnability estimate of an empty batch"));
    }
    let d = diff_rows(psi_t, psi_next, w)?;
    let split = split_weights(w, beta)?;
    let k = w.len();
    let n = d.len() / k;
    let (mut num, mut den) = (0.0, 0.0);
    for row in d.chunks(k) {
        num += value_from_sf(row, &split.w_plus)?.abs();
        den += value_from_sf(row, &split.w_minus)?.abs();
    }
    Ok(Learnability::from_ratio(num / n as f64, den / n as f64))
}

/// Learnability loss on `β`, recorded into `g`:
///
/// `Σ_t [ c_λ·|d_t·w⁻| − Σ_a π(a|τ_t)·|d_t·w⁺| ]`, `d_t = ψ_t − ψ_{t+1}`.
///
/// Descending it raises the own-feature term and lowers the others' term.
/// `β` is the only recorded parameter; `probs` is `[n,A]`.
pub fn learnability_loss(
    g: &mut Graph,
    store: &ParamStore,
    beta: ParamId,
    probs: &Tensor,
    psi_t: &Tensor,
    psi_next: &Tensor,
    w: &[f64],
    c_lambda: f64,
) -> Result<Var> {
    let d = diff_rows(psi_t, psi_next, w)?;
    let k = w.len();
    let n = d.len() / k;
    if probs.rows() != n {
        return Err(Error::dim("learnability_loss", probs.shape(), psi_t.shape()));
    }
    let dw: Vec<f64> = d
        .chunks(k)
        .flat_map(|row| row.iter().zip(w).map(|(a, b)| a * b))
        .collect();
    let mass: Vec<f64> = (0..n).map(|r| probs.row(r).iter().sum()).collect();

    let dw = g.constant(Tensor::new(&[n, k], dw)?);
    let mass = g.constant(Tensor::new(&[n, 1], mass)?);
    let b = g.param(store, beta);
    let plus = g.mul(dw, b)?;
    let minus = g.sub(dw, plus)?;
    let plus = g.sum_rows(plus);
    let minus = g.sum_rows(minus);
    let plus = g.abs(plus);
    let minus = g.abs(minus);
    let own = g.mul(mass, plus)?;
    let others = g.scale(minus, c_lambda);
    let per = g.sub(others, own)?;
    Ok(g.sum(per))
}

/// One optimizer step on `β` followed by clamping to `[0,1]`. Clears the
/// gradient afterwards.
pub fn update_beta(store: &mut ParamStore, beta: ParamId, opt: &mut Adam) -> Result<()> {
    opt.step(store, &[beta])?;
    let t = store.get_mut(beta);
    t.data_mut().iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    t.zero_grad();
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::AdamConfig;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn rescale_cases() {
        assert_eq!(rescale(&[2.0, 4.0], &[1.0, 1.0]).unwrap(), vec![0.0, 0.0]);
        assert_eq!(rescale(&[2.0, 4.0], &[0.0, 0.0]).unwrap(), vec![2.0, 4.0]);
        assert_eq!(rescale(&[2.0, 4.0], &[0.5, 0.5]).unwrap(), vec![1.0, 2.0]);
        assert!(rescale(&[2.0], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn edu_at_extremes() {
        let psi = [1.0, -2.0, 0.5];
        let w = [0.3, 0.1, -1.0];
        let r = sf_edu(2.0, &psi, &[1.0; 3], &w, 0.9).unwrap();
        assert_eq!(r.edu, 2.0);
        assert_eq!(r.v_others, 0.0);
        let r = sf_edu(2.0, &psi, &[0.0; 3], &w, 0.9).unwrap();
        let v = value_from_sf(&psi, &w).unwrap();
        assert_eq!(r.edu, 2.0 - v);
    }

    #[test]
    fn seeded_edu_reward_and_advantage_match_hand_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let k = 6;
        let mut v = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect() };
        let (psi, phi, w) = (v(k), v(k), v(k));
        let beta: Vec<f64> = v(k).iter().map(|x| x.abs()).collect();
        let (vg, r, edu_next) = (0.7, -0.4, 0.25);
        let mut others = 0.0;
        let mut phi_others = 0.0;
        for j in 0..k {
            others += psi[j] * (1.0 - beta[j]) * w[j];
            phi_others += phi[j] * (1.0 - beta[j]) * w[j];
        }
        let mut rec = sf_edu(vg, &psi, &beta, &w, 0.95).unwrap();
        assert!((rec.edu - (vg - others)).abs() < 1e-14);
        rec.r_individual = individual_reward(r, &phi, &beta, &w).unwrap();
        assert!((rec.r_individual - (r - phi_others)).abs() < 1e-14);
        let a = edu_advantage(&rec, edu_next);
        assert!((a - (r - phi_others + 0.95 * edu_next - (vg - others))).abs() < 1e-14);
    }

    #[test]
    fn advantage_special_cases() {
        let rec = EduAdvantageRecord {
            v_global: 0.0,
            v_others: 0.0,
            edu: 0.0,
            r_individual: 1.5,
            advantage: 0.0,
            gamma: 0.9,
        };
        assert_eq!(edu_advantage(&rec, 0.0), 1.5);
        let eps = 1e-3;
        let rec = EduAdvantageRecord {
            edu: 2.0,
            r_individual: 0.0,
            gamma: 1.0 - eps,
            ..rec
        };
        assert!((edu_advantage(&rec, 2.0) + eps * 2.0).abs() < 1e-12);
    }

    #[test]
    fn individual_reward_cases() {
        let phi = [0.5, 1.0];
        let w = [2.0, -1.0];
        assert_eq!(individual_reward(3.0, &phi, &[1.0, 1.0], &w).unwrap(), 3.0);
        let fit = value_from_sf(&phi, &w).unwrap();
        assert_eq!(individual_reward(fit, &phi, &[0.0, 0.0], &w).unwrap(), 0.0);
    }

    fn batch() -> (Tensor, Tensor) {
        let a = Tensor::from_rows(&[[1.0, 2.0, 0.5], [0.0, -1.0, 2.0]]).unwrap();
        let b = Tensor::from_rows(&[[0.5, 1.0, 1.0], [1.0, 0.0, 0.0]]).unwrap();
        (a, b)
    }

    #[test]
    fn estimator_sentinel_and_symmetry() {
        let (a, b) = batch();
        let w = [1.0, -0.5, 2.0];
        assert_eq!(
            sf_learnability_estimate(&a, &b, &[1.0; 3], &w).unwrap(),
            Learnability::Undefined
        );
        let half = sf_learnability_estimate(&a, &b, &[0.5; 3], &w).unwrap();
        assert!((half.value().unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn loss_vanishes_without_transitions_or_with_symmetric_split() {
        let mut store = ParamStore::new();
        let beta = insert_beta(&mut store, "t", 3);
        let (a, b) = batch();
        let probs = Tensor::full(&[2, 4], 0.25);
        let w = [1.0, -0.5, 2.0];
        let mut g = Graph::new();
        let l = learnability_loss(&mut g, &store, beta, &probs, &a, &a, &w, 0.5).unwrap();
        assert_eq!(g.value(l).item(), 0.0);
        store.get_mut(beta).data_mut().fill(0.5);
        let l = learnability_loss(&mut g, &store, beta, &probs, &a, &b, &w, 1.0).unwrap();
        assert!(g.value(l).item().abs() < 1e-12);
    }

    #[test]
    fn loss_gradient_reaches_only_beta() {
        let mut store = ParamStore::new();
        let other = store.insert("sf_net/w0", Tensor::full(&[3], 0.3));
        let beta = insert_beta(&mut store, "t", 3);
        store.get_mut(beta).data_mut().copy_from_slice(&[0.2, 0.6, 0.9]);
        let (a, b) = batch();
        let probs = Tensor::full(&[2, 2], 0.5);
        let mut g = Graph::new();
        let l = learnability_loss(&mut g, &store, beta, &probs, &a, &b, &[1.0, -0.5, 2.0], 0.5).unwrap();
        g.backward(l, &mut store).unwrap();
        assert!(store.get(beta).grad().unwrap().iter().any(|v| *v != 0.0));
        assert!(store.get(other).grad().is_none());
    }

    #[test]
    fn update_clamps_both_ends_and_zero_grad_is_a_no_op() {
        let mut store = ParamStore::new();
        let beta = insert_beta(&mut store, "t", 3);
        store.get_mut(beta).data_mut().copy_from_slice(&[0.5, 0.001, 0.999]);
        let mut opt = Adam::new(AdamConfig::with_lr(0.01));
        store.get_mut(beta).accumulate_grad(&[0.0, 0.0, 0.0]);
        update_beta(&mut store, beta, &mut opt).unwrap();
        assert_eq!(store.get(beta).data(), &[0.5, 0.001, 0.999]);
        store.get_mut(beta).accumulate_grad(&[0.0, 1.0, -1.0]);
        update_beta(&mut store, beta, &mut opt).unwrap();
        assert_eq!(store.get(beta).data(), &[0.5, 0.0, 1.0]);
    }
}
