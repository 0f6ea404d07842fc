use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// One step of the global process, for the central critic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateTransition {
    pub state: Vec<f64>,
    pub next_state: Vec<f64>,
    pub reward: f64,
    /// False when the episode truly terminated; truncation still bootstraps.
    pub bootstrap: bool,
}

/// One step of one agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentTransition {
    pub obs: Vec<f64>,
    pub next_obs: Vec<f64>,
    pub state: Vec<f64>,
    pub next_state: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    pub bootstrap: bool,
    pub log_prob: f64,
}

/// Fixed-capacity batch that is drained whole by each update.
#[derive(Debug, Clone)]
pub struct Buffer<T> {
    capacity: usize,
    items: Vec<T>,
}

impl<T> Buffer<T> {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            items: Vec::with_capacity(capacity),
        }
    }

    pub fn push(&mut self, item: T) {
        self.items.push(item);
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn is_full(&self) -> bool {
        self.items.len() >= self.capacity
    }

    pub fn items(&self) -> &[T] {
        &self.items
    }

    /// Removes and returns everything; fails unless the buffer is full.
    pub fn drain_full(&mut self) -> Result<Vec<T>> {
        if !self.is_full() {
            return Err(Error::contract(format!(
                "update needs a full buffer ({} of {})",
                self.items.len(),
                self.capacity
            )));
        }
        Ok(std::mem::take(&mut self.items))
    }
}

pub type CentralBuffer = Buffer<StateTransition>;
pub type DecentralBuffer = Buffer<AgentTransition>;

pub(crate) fn stack<'a>(rows: impl Iterator<Item = &'a Vec<f64>>) -> Result<Tensor> {
    let rows: Vec<&Vec<f64>> = rows.collect();
    Tensor::from_rows(&rows)
}

pub(crate) fn column(values: impl Iterator<Item = f64>) -> Tensor {
    let v: Vec<f64> = values.collect();
    let n = v.len();
    Tensor::new(&[n, 1], v).expect("nonempty column")
}

pub(crate) fn one_hot_rows(actions: impl Iterator<Item = usize>, num_actions: usize) -> Tensor {
    let mut data = Vec::new();
    let mut n = 0;
    for a in actions {
        let mut row = vec![0.0; num_actions];
        row[a] = 1.0;
        data.extend(row);
        n += 1;
    }
    Tensor::new(&[n, num_actions], data).expect("nonempty batch")
}
