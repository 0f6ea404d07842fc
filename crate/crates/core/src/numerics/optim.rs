use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::params::{ParamId, ParamStore};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            ..Self::default()
        }
    }
}

/// Adaptive-moment optimizer with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    cfg: AdamConfig,
    steps: u64,
    moments: HashMap<ParamId, (Vec<f64>, Vec<f64>)>,
}

impl Adam {
    pub fn new(cfg: AdamConfig) -> Self {
        assert!(cfg.learning_rate > 0.0);
        assert!(cfg.beta1 > 0.0 && cfg.beta1 < 1.0 && cfg.beta2 > 0.0 && cfg.beta2 < 1.0);
        Self {
            cfg,
            steps: 0,
            moments: HashMap::new(),
        }
    }

    pub fn config(&self) -> &AdamConfig {
        &self.cfg
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// One update of every parameter in `params`. Gradients are read, not
    /// cleared; every parameter must carry one.
    pub fn step(&mut self, store: &mut ParamStore, params: &[ParamId]) -> Result<()> {
        if let Some(&missing) = params.iter().find(|&&id| store.get(id).grad().is_none()) {
            return Err(Error::contract(format!(
                "optimizer step on `{}` without a gradient",
                store.name(missing)
            )));
        }
        self.steps += 1;
        let t = self.steps as i32;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.cfg;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for &id in params {
            let n = store.get(id).numel();
            let (m, v) = self
                .moments
                .entry(id)
                .or_insert_with(|| (vec![0.0; n], vec![0.0; n]));
            let tensor = store.get_mut(id);
            let grad = tensor.grad().expect("checked above").to_vec();
            let data = tensor.data_mut();
            for j in 0..n {
                let g = grad[j];
                m[j] = beta1 * m[j] + (1.0 - beta1) * g;
                v[j] = beta2 * v[j] + (1.0 - beta2) * g * g;
                let mh = m[j] / c1;
                let vh = v[j] / c2;
                data[j] -= learning_rate * mh / (vh.sqrt() + epsilon);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::graph::Graph;
    use crate::numerics::tensor::Tensor;

    fn scalar_store(x: f64) -> (ParamStore, ParamId) {
        let mut s = ParamStore::new();
        let id = s.insert("x/v", Tensor::scalar(x));
        (s, id)
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let (mut store, id) = scalar_store(1.25);
        store.get_mut(id).accumulate_grad(&[0.0]);
        let mut opt = Adam::new(AdamConfig::with_lr(0.1));
        opt.step(&mut store, &[id]).unwrap();
        assert_eq!(store.get(id).item(), 1.25);
    }

    #[test]
    fn first_step_moves_by_learning_rate_against_gradient() {
        // bias-corrected first step: m̂ = g, v̂ = g², so Δ = -lr * g / (|g| + eps)
        for &g in &[3.0, -0.02, 1e-3] {
            let (mut store, id) = scalar_store(0.0);
            store.get_mut(id).accumulate_grad(&[g]);
            let cfg = AdamConfig::with_lr(1e-2);
            let mut opt = Adam::new(cfg);
            opt.step(&mut store, &[id]).unwrap();
            let expect = -cfg.learning_rate * g / (g.abs() + cfg.epsilon);
            assert!((store.get(id).item() - expect).abs() < 1e-15);
            assert!(store.get(id).item().signum() == -g.signum());
        }
    }

    #[test]
    fn missing_gradient_is_contract_error() {
        let (mut store, id) = scalar_store(0.0);
        let mut opt = Adam::new(AdamConfig::default());
        assert!(matches!(opt.step(&mut store, &[id]), Err(Error::Contract(_))));
    }

    #[test]
    fn minimizes_shifted_quadratic() {
        let (mut store, id) = scalar_store(0.0);
        let mut opt = Adam::new(AdamConfig::with_lr(0.1));
        for _ in 0..1000 {
            store.zero_grad(&[id]);
            let mut g = Graph::new();
            let x = g.param(&store, id);
            let d = g.add_scalar(x, -3.0);
            let l = g.square(d);
            let l = g.sum(l);
            g.backward(l, &mut store).unwrap();
            opt.step(&mut store, &[id]).unwrap();
        }
        assert!((store.get(id).item() - 3.0).abs() < 1e-2);
    }

    #[test]
    fn step_keeps_shapes() {
        let mut store = ParamStore::new();
        let id = store.insert("m/w", Tensor::zeros(&[3, 2]));
        store.get_mut(id).accumulate_grad(&[1.0; 6]);
        Adam::new(AdamConfig::default()).step(&mut store, &[id]).unwrap();
        assert_eq!(store.get(id).shape(), &[3, 2]);
    }
}
