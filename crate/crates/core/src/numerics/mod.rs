//! Dense tensors, tape-based reverse-mode differentiation, feed-forward
//! networks and the Adam optimizer. All arithmetic is `f64`.

mod graph;
mod mlp;
mod optim;
mod params;
pub mod serialize;
mod tensor;

pub use graph::{Graph, Var};
pub use mlp::{Hidden, Mlp, Output};
pub use optim::{Adam, AdamConfig};
pub use params::{group_of, ParamId, ParamStore};
pub use tensor::Tensor;
