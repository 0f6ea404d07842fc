//! Successor-feature disentanglement for cooperative multi-agent
//! reinforcement learning under centralized training and decentralized
//! execution.

pub mod disentangle;
pub mod envs;
pub mod error;
pub mod metrics;
pub mod numerics;
pub mod sf_repr;
pub mod training;

pub use error::{Error, Result};
