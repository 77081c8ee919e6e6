//! Small fully connected networks with reverse-mode gradients.

mod checkpoint;
mod gradcheck;
mod mlp;
mod optim;
mod params;

pub use checkpoint::{round_to_storage, Checkpoint, Role};
pub use gradcheck::{check_directional, check_mlp, check_vjp, GradCheck, GradCheckConfig};
pub use mlp::{Activation, Mlp, MlpInput, MlpSpec, Tape};
pub use optim::{Optimizer, OptimizerKind};
pub use params::{ParamVector, Segment};
