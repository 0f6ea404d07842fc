use rand::Rng;

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a tensor owned by a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone)]
struct Entry {
    name: String,
    tensor: Tensor,
}

/// Owns every trainable tensor of a model. Names have the form
/// `group/local`, and the group prefix is how checkpoints and optimizers
/// select parameter subsets.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    entries: Vec<Entry>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> ParamId {
        let name = name.into();
        debug_assert!(self.find(&name).is_none(), "duplicate parameter {name}");
        self.entries.push(Entry { name, tensor });
        ParamId(self.entries.len() - 1)
    }

    /// Glorot-uniform tensor: uniform in `[-s, s]`, `s = sqrt(6 / (fan_in + fan_out))`.
    pub fn insert_glorot<R: Rng>(
        &mut self,
        name: impl Into<String>,
        fan_in: usize,
        fan_out: usize,
        rng: &mut R,
    ) -> ParamId {
        let s = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let data = (0..fan_in * fan_out)
            .map(|_| rng.gen_range(-s..=s))
            .collect();
        let t = Tensor::new(&[fan_in, fan_out], data).expect("glorot shape");
        self.insert(name, t)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].tensor
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].tensor
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    /// All parameters whose name starts with `group/`.
    pub fn group(&self, group: &str) -> Vec<ParamId> {
        self.ids()
            .filter(|&id| group_of(self.name(id)) == group)
            .collect()
    }

    /// Distinct group names in insertion order.
    pub fn groups(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for e in &self.entries {
            let g = group_of(&e.name);
            if !out.iter().any(|x| x == g) {
                out.push(g.to_string());
            }
        }
        out
    }

    pub fn zero_grad(&mut self, ids: &[ParamId]) {
        for &id in ids {
            self.get_mut(id).zero_grad();
        }
    }

    pub fn zero_all_grads(&mut self) {
        for e in &mut self.entries {
            e.tensor.zero_grad();
        }
    }

    /// Copies values of `src` into `dst` element by element.
    pub fn copy_values(&mut self, src: &[ParamId], dst: &[ParamId]) -> Result<()> {
        if src.len() != dst.len() {
            return Err(Error::dim("copy_values", &[src.len()], &[dst.len()]));
        }
        for (&s, &d) in src.iter().zip(dst) {
            if self.get(s).shape() != self.get(d).shape() {
                return Err(Error::dim("copy_values", self.get(s).shape(), self.get(d).shape()));
            }
            let data = self.get(s).data().to_vec();
            self.get_mut(d).data_mut().copy_from_slice(&data);
        }
        Ok(())
    }

    /// Rescales gradients of `ids` so their joint L2 norm is at most `max_norm`.
    /// Returns the norm before clipping.
    pub fn clip_grad_norm(&mut self, ids: &[ParamId], max_norm: f64) -> f64 {
        let sq: f64 = ids
            .iter()
            .filter_map(|&id| self.get(id).grad())
            .flat_map(|g| g.iter())
            .map(|v| v * v)
            .sum();
        let norm = sq.sqrt();
        if norm > max_norm && norm > 0.0 {
            let scale = max_norm / norm;
            for &id in ids {
                if let Some(g) = self.get_mut(id).grad_mut() {
                    g.iter_mut().for_each(|v| *v *= scale);
                }
            }
        }
        norm
    }
}

pub fn group_of(name: &str) -> &str {
    name.split('/').next().unwrap_or(name)
}
