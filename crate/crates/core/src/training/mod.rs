//! Centralized training with decentralized execution: a central state-value
//! critic, per-type PPO actors on the shared successor-feature encoder, and
//! the independent actor-critic baseline.

mod buffer;
mod config;
mod dissc;
mod iac;
mod ppo;
mod runner;

pub use buffer::{AgentTransition, Buffer, CentralBuffer, DecentralBuffer, StateTransition};
pub use config::{Algo, TrainConfig};
pub use dissc::{
    actor_group, BetaSummary, CentralCritic, DisscLearner, UpdateOutcome, CRITIC_GROUP,
    CRITIC_TARGET_GROUP,
};
pub use iac::{critic_group, IacLearner};
pub use ppo::{ppo_loss, ppo_update, td_loss, ActionChoice, PolicyView, PpoBatch, PpoLoss, PpoStats};
pub use runner::{
    episode_seed, random_policy_episodes, run_iac_baseline, run_training, Learner, MetricRecord,
    RecordKind, TrainEvent, Trainer, TrainingReport,
};
