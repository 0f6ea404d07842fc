use rand::Rng;
use serde::{Deserialize, Serialize};

use super::graph::{Graph, Var};
use super::params::{ParamId, ParamStore};
use super::tensor::{self, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Hidden {
    Tanh,
    Relu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Output {
    Identity,
    Sigmoid,
    Softmax,
}

/// Fully connected feed-forward network whose parameters live in a
/// [`ParamStore`] under `<group>/w<k>` and `<group>/b<k>`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    widths: Vec<usize>,
    weights: Vec<ParamId>,
    biases: Vec<ParamId>,
    hidden: Hidden,
    output: Output,
}

// ParamId is an index; serde support keeps model descriptions printable.
impl Serialize for ParamId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_u64(self.0 as u64)
    }
}

impl<'de> Deserialize<'de> for ParamId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        Ok(ParamId(u64::deserialize(d)? as usize))
    }
}

impl Mlp {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        group: &str,
        widths: &[usize],
        hidden: Hidden,
        output: Output,
        rng: &mut R,
    ) -> Self {
        assert!(widths.len() >= 2 && widths.iter().all(|&w| w > 0));
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for k in 0..widths.len() - 1 {
            let (fi, fo) = (widths[k], widths[k + 1]);
            weights.push(store.insert_glorot(format!("{group}/w{k}"), fi, fo, rng));
            biases.push(store.insert(format!("{group}/b{k}"), Tensor::zeros(&[fo])));
        }
        Self {
            widths: widths.to_vec(),
            weights,
            biases,
            hidden,
            output,
        }
    }

    /// Same architecture as `self`, fresh parameters copied from `self`'s
    /// current values into `group`.
    pub fn clone_into_group(&self, store: &mut ParamStore, group: &str) -> Self {
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for k in 0..self.weights.len() {
            let w = store.get(self.weights[k]).clone();
            let b = store.get(self.biases[k]).clone();
            weights.push(store.insert(format!("{group}/w{k}"), strip(w)));
            biases.push(store.insert(format!("{group}/b{k}"), strip(b)));
        }
        Self {
            widths: self.widths.clone(),
            weights,
            biases,
            hidden: self.hidden,
            output: self.output,
        }
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn weights(&self) -> &[ParamId] {
        &self.weights
    }

    pub fn biases(&self) -> &[ParamId] {
        &self.biases
    }

    /// Weights and biases interleaved per layer.
    pub fn params(&self) -> Vec<ParamId> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(&w, &b)| [w, b])
            .collect()
    }

    fn check_input(&self, shape: &[usize]) -> Result<()> {
        if shape.last().copied() != Some(self.widths[0]) {
            return Err(Error::dim("Mlp::forward", shape, &[self.widths[0]]));
        }
        Ok(())
    }

    /// Recorded forward pass.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        self.forward_impl(g, store, x, false)
    }

    /// Forward pass reading parameters as constants: gradients reach `x` but
    /// not this network's parameters.
    pub fn forward_frozen(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        self.forward_impl(g, store, x, true)
    }

    fn forward_impl(&self, g: &mut Graph, store: &ParamStore, x: Var, frozen: bool) -> Result<Var> {
        self.check_input(g.shape(x))?;
        let last = self.weights.len() - 1;
        let mut h = x;
        for k in 0..self.weights.len() {
            let (w, b) = if frozen {
                (g.frozen_param(store, self.weights[k]), g.frozen_param(store, self.biases[k]))
            } else {
                (g.param(store, self.weights[k]), g.param(store, self.biases[k]))
            };
            let z = g.matmul(h, w)?;
            let z = g.add(z, b)?;
            h = if k < last {
                match self.hidden {
                    Hidden::Tanh => g.tanh(z),
                    Hidden::Relu => g.relu(z),
                }
            } else {
                match self.output {
                    Output::Identity => z,
                    Output::Sigmoid => g.sigmoid(z),
                    Output::Softmax => g.softmax(z),
                }
            };
        }
        Ok(h)
    }

    /// Unrecorded forward pass; values are bit-identical to [`Mlp::forward`].
    pub fn infer(&self, store: &ParamStore, x: &Tensor) -> Result<Tensor> {
        self.check_input(x.shape())?;
        let last = self.weights.len() - 1;
        let n = x.rows();
        let mut h = x.data().to_vec();
        for k in 0..self.weights.len() {
            let (fi, fo) = (self.widths[k], self.widths[k + 1]);
            let mut z = tensor::matmul(&h, store.get(self.weights[k]).data(), n, fi, fo);
            tensor::add_row(&mut z, store.get(self.biases[k]).data());
            if k < last {
                match self.hidden {
                    Hidden::Tanh => z.iter_mut().for_each(|v| *v = v.tanh()),
                    Hidden::Relu => z.iter_mut().for_each(|v| *v = v.max(0.0)),
                }
            } else {
                match self.output {
                    Output::Identity => {}
                    Output::Sigmoid => z.iter_mut().for_each(|v| *v = tensor::sigmoid(*v)),
                    Output::Softmax => z = tensor::softmax_rows(&z, fo),
                }
            }
            h = z;
        }
        let mut shape = x.shape().to_vec();
        *shape.last_mut().unwrap() = self.output_dim();
        Tensor::new(&shape, h)
    }
}

fn strip(mut t: Tensor) -> Tensor {
    t.zero_grad();
    t
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_single_layer_passes_input_through() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = Mlp::new(&mut store, "n", &[2, 2], Hidden::Tanh, Output::Identity, &mut rng);
        store.get_mut(net.weights()[0]).data_mut().copy_from_slice(&[1.0, 0.0, 0.0, 1.0]);
        let out = net.infer(&store, &Tensor::vector(vec![1.0, 2.0])).unwrap();
        assert_eq!(out.data(), &[1.0, 2.0]);
    }

    #[test]
    fn zero_weights_output_bias() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = Mlp::new(&mut store, "n", &[3, 2], Hidden::Tanh, Output::Identity, &mut rng);
        store.get_mut(net.weights()[0]).data_mut().fill(0.0);
        store.get_mut(net.biases()[0]).data_mut().copy_from_slice(&[0.3, -0.7]);
        let out = net.infer(&store, &Tensor::vector(vec![5.0, -1.0, 9.0])).unwrap();
        assert_eq!(out.data(), &[0.3, -0.7]);
    }

    #[test]
    fn recorded_and_inference_paths_agree_bitwise() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let net = Mlp::new(&mut store, "n", &[4, 8, 3], Hidden::Relu, Output::Softmax, &mut rng);
        let x = Tensor::new(&[2, 4], vec![0.1, -0.2, 0.3, 0.9, -1.0, 0.5, 0.0, 2.0]).unwrap();
        let a = net.infer(&store, &x).unwrap();
        let mut g = Graph::new();
        let xv = g.constant(x);
        let y = net.forward(&mut g, &store, xv).unwrap();
        assert_eq!(a.data(), g.value(y).data());
    }

    #[test]
    fn input_width_mismatch_is_dimension_error() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = Mlp::new(&mut store, "n", &[3, 2], Hidden::Tanh, Output::Identity, &mut rng);
        let err = net.infer(&store, &Tensor::vector(vec![1.0, 2.0])).unwrap_err();
        assert!(matches!(err, Error::Dimension { .. }));
    }
}
