#![allow(dead_code)]

use dissc::numerics::{Graph, ParamId, ParamStore, Tensor, Var};
use rand::Rng;

pub const FD_STEP: f64 = 1e-5;

/// Relative error between two gradient vectors, measured in L2 with a floor
/// so that all-zero gradients compare as equal.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nb).max(1e-8)
}

/// Compares the tape gradient of a scalar function of `inputs` against
/// central finite differences. Returns the worst relative error over inputs.
pub fn gradcheck_inputs(
    inputs: &[Tensor],
    f: &dyn Fn(&mut Graph, &[Var]) -> Var,
) -> f64 {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone())).collect();
    let loss = f(&mut g, &vars);
    g.backward_local(loss).unwrap();
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| g.grad(v).map(|s| s.to_vec()).unwrap_or(vec![0.0; t.numel()]))
        .collect();

    let eval = |ins: &[Tensor]| -> f64 {
        let mut g = Graph::new();
        let vars: Vec<Var> = ins.iter().map(|t| g.constant(t.clone())).collect();
        let l = f(&mut g, &vars);
        g.value(l).item()
    };
    let mut worst: f64 = 0.0;
    for (k, t) in inputs.iter().enumerate() {
        let mut numeric = vec![0.0; t.numel()];
        for j in 0..t.numel() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[j] += FD_STEP;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[j] -= FD_STEP;
            numeric[j] = (eval(&plus) - eval(&minus)) / (2.0 * FD_STEP);
        }
        worst = worst.max(rel_err(&analytic[k], &numeric));
    }
    worst
}

/// Finite-difference check of `loss(store)` with respect to the parameters
/// `ids`, using the store's accumulated gradients as the analytic side.
pub fn gradcheck_params(
    store: &mut ParamStore,
    ids: &[ParamId],
    loss: &dyn Fn(&mut Graph, &ParamStore) -> Var,
) -> f64 {
    store.zero_all_grads();
    let mut g = Graph::new();
    let l = loss(&mut g, store);
    g.backward(l, store).unwrap();
    let mut worst: f64 = 0.0;
    for &id in ids {
        let n = store.get(id).numel();
        let analytic = store.get(id).grad().map(|s| s.to_vec()).unwrap_or(vec![0.0; n]);
        let mut numeric = vec![0.0; n];
        for j in 0..n {
            let orig = store.get(id).data()[j];
            store.get_mut(id).data_mut()[j] = orig + FD_STEP;
            let mut g = Graph::new();
            let lp = loss(&mut g, store);
            let vp = g.value(lp).item();
            store.get_mut(id).data_mut()[j] = orig - FD_STEP;
            let mut g = Graph::new();
            let lm = loss(&mut g, store);
            let vm = g.value(lm).item();
            store.get_mut(id).data_mut()[j] = orig;
            numeric[j] = (vp - vm) / (2.0 * FD_STEP);
        }
        worst = worst.max(rel_err(&analytic, &numeric));
    }
    store.zero_all_grads();
    worst
}

/// Uniform values in `[-scale, scale]` kept at least `gap` away from zero, so
/// kinked operations are never probed across their kink.
pub fn rand_tensor<R: Rng>(rng: &mut R, shape: &[usize], scale: f64, gap: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| loop {
            let v: f64 = rng.gen_range(-scale..scale);
            if v.abs() > gap {
                break v;
            }
        })
        .collect();
    Tensor::new(shape, data).unwrap()
}
