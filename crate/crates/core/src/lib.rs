//! Fine-tuning score-based diffusion models with continuous-time
//! reinforcement learning: the score is the action of a controlled reverse
//! SDE, and a clipped policy-gradient method maximizes a KL-regularized
//! terminal reward.

pub mod ctrl;
pub mod error;
pub mod experiments;
pub mod metrics;
pub mod nn;
pub mod oracle;
pub mod rng;
pub mod score;
pub mod sde;
pub mod stats;
pub mod value;

pub use error::{Error, Result};
pub use nn::{Checkpoint, Mlp, MlpSpec, Optimizer, OptimizerKind, ParamVector, Role};
pub use score::{GaussianPolicy, MeanField, ScoreNet};
pub use sde::{NoiseSchedule, Sampler, SdeState, TimeGrid, Trajectory};
pub use value::{RewardModel, ValueArch, ValueNet};
pub use ctrl::{CtrlConfig, CtrlTrainer};
