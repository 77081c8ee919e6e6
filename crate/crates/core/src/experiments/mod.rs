//! End-to-end checks shared by the acceptance suite and the command line.

mod ablation;
mod fidelity;
mod finetune;
mod girsanov;
mod gradcheck;
mod limits;
mod lq;
mod task;

pub use ablation::{AblationReport, AblationRow, AblationSetup};
pub use fidelity::{score_fidelity, SliceError, FIDELITY_TIMES};
pub use finetune::{finetune, EvalSetup, FinetuneReport, Method, StepEval};
pub use girsanov::{GirsanovReport, GirsanovSetup};
pub use gradcheck::network_gradchecks;
pub use limits::{ddim_endpoint_error, ddpm_euler_gap, SlopeReport};
pub use lq::{CoordinateCheck, LqCritic, LqSetup, PdlCheck};
pub use task::Task;
