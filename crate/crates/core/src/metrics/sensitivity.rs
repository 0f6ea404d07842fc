use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Graph, ParamStore, Tensor};
use crate::sf_repr::SfModel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityMap {
    pub labels: Vec<String>,
    /// `[obs element][k]`: batch mean of `|∂ψ_k/∂o_j|`.
    pub partials: Vec<Vec<f64>>,
    /// `Σ_k partials[j][k] · β_k`.
    pub filtered: Vec<f64>,
}

/// How strongly each observation element drives the successor features an
/// agent attributes to itself.
pub fn beta_sensitivity(
    store: &ParamStore,
    model: &SfModel,
    beta: &[f64],
    obs: &[Vec<f64>],
    labels: &[String],
) -> Result<SensitivityMap> {
    let k = model.feature_dim();
    let d = model.obs_dim();
    if beta.len() != k {
        return Err(Error::dim("beta_sensitivity", &[beta.len()], &[k]));
    }
    if labels.len() != d {
        return Err(Error::dim("beta_sensitivity labels", &[labels.len()], &[d]));
    }
    if obs.is_empty() {
        return Err(Error::contract("sensitivity of an empty batch"));
    }
    let n = obs.len();
    let mut g = Graph::new();
    let x = g.input(Tensor::from_rows(obs)?);
    let phi = model.encoder.forward_frozen(&mut g, store, x)?;
    let psi = model.sf.forward_frozen(&mut g, store, phi)?;

    let mut partials = vec![vec![0.0; k]; d];
    for col in 0..k {
        let mut sel = vec![0.0; n * k];
        for r in 0..n {
            sel[r * k + col] = 1.0;
        }
        let sel = g.constant(Tensor::new(&[n, k], sel)?);
        let picked = g.mul(psi, sel)?;
        let total = g.sum(picked);
        g.backward_local(total)?;
        let grad = g.grad(x).expect("input reached by backward");
        for r in 0..n {
            for j in 0..d {
                partials[j][col] += grad[r * d + j].abs() / n as f64;
            }
        }
    }
    let filtered = partials
        .iter()
        .map(|row| row.iter().zip(beta).map(|(p, b)| p * b).sum())
        .collect();
    Ok(SensitivityMap {
        labels: labels.to_vec(),
        partials,
        filtered,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sf_repr::SfConfig;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn setup(hidden: Vec<usize>) -> (ParamStore, SfModel, Vec<String>) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cfg = SfConfig {
            feature_dim: 3,
            encoder_hidden: hidden.clone(),
            sf_hidden: hidden,
            decoder_hidden: vec![4],
            ..SfConfig::default()
        };
        let m = SfModel::new(&mut store, 4, 2, &cfg, &mut rng);
        let labels = (0..4).map(|j| format!("o{j}")).collect();
        (store, m, labels)
    }

    fn batch(n: usize) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        (0..n).map(|_| (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect()
    }

    #[test]
    fn zero_beta_filters_everything() {
        let (store, m, labels) = setup(vec![5]);
        let s = beta_sensitivity(&store, &m, &[0.0; 3], &batch(6), &labels).unwrap();
        assert!(s.filtered.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn dead_input_has_zero_sensitivity() {
        let (mut store, m, labels) = setup(vec![5]);
        let w0 = m.encoder.weights()[0];
        let cols = store.get(w0).cols();
        store.get_mut(w0).data_mut()[2 * cols..3 * cols].fill(0.0);
        let s = beta_sensitivity(&store, &m, &[1.0, 0.5, 0.2], &batch(6), &labels).unwrap();
        assert_eq!(s.filtered[2], 0.0);
        assert!(s.filtered[0] > 0.0);
    }

    #[test]
    fn linear_networks_give_abs_weight_product() {
        let (store, m, labels) = setup(vec![]);
        let we = store.get(m.encoder.weights()[0]).data().to_vec();
        let ws = store.get(m.sf.weights()[0]).data().to_vec();
        let beta = [0.3, 1.0, 0.6];
        let s = beta_sensitivity(&store, &m, &beta, &batch(3), &labels).unwrap();
        for j in 0..4 {
            let mut expect = 0.0;
            for k in 0..3 {
                let mut wjk = 0.0;
                for h in 0..3 {
                    wjk += we[j * 3 + h] * ws[h * 3 + k];
                }
                expect += wjk.abs() * beta[k];
            }
            assert!((s.filtered[j] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn filtered_map_is_linear_in_beta() {
        let (store, m, labels) = setup(vec![5]);
        let obs = batch(5);
        let a = beta_sensitivity(&store, &m, &[0.2, 0.4, 0.1], &obs, &labels).unwrap();
        let b = beta_sensitivity(&store, &m, &[0.4, 0.8, 0.2], &obs, &labels).unwrap();
        for (x, y) in a.filtered.iter().zip(&b.filtered) {
            assert!((2.0 * x - y).abs() < 1e-12);
        }
    }
}
