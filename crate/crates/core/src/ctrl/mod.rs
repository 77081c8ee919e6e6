//! Fine-tuning with continuous-time RL, the policy-gradient estimator and the
//! discrete-time DDPO-style baseline.

mod advantage;
mod collect;
mod config;
mod ddpo;
mod policy;
mod ppo;
mod train;

pub use advantage::{build_advantage_dataset, trajectory_records, AdvantageDataset, AdvantageRecord};
pub use collect::{attach_terminal_rewards, collect_round, terminal_reward_estimate, terminal_rewards, terminal_samples};
pub use config::{AdvantageDirection, CtrlConfig};
pub use ddpo::{ddpo_baseline_update, ddpo_collect, ddpo_dataset, ddpo_surrogate, TransitionDataset};
pub use policy::{AffineMean, TrainableMean};
pub use ppo::{
    clipped_objective, policy_gradient_estimate, policy_gradient_samples, ppo_update, surrogate, PpoReport,
    SurrogateSpec,
};
pub use train::{CtrlState, CtrlTrainer, DdpoTrainer, RoundMetrics};

#[cfg(test)]
mod tests;
