//! Terminal reward, running KL reward and the value network.

mod fit;
mod net;
mod reward;
mod running;

pub use fit::{fit_value, split_indices, value_mse, FitConfig, FitReport, ValueDataset};
pub use net::{advantage_rate, advantage_rate_backprop, c_out, c_skip, BranchInput, Critic, OutSchedule, ValueArch, ValueNet};
pub use reward::{RewardKind, RewardModel};
pub use running::{kl_path_estimate, kl_path_samples, running_reward, RunningRewardParams};
