use thiserror::Error;

use crate::nn::ParamVector;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("time {t} outside [0, {horizon}]")]
    TimeOutOfRange { t: f64, horizon: f64 },

    #[error("step of size {dt} from t={t} overshoots horizon {horizon}")]
    Overshoot { t: f64, dt: f64, horizon: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },

    #[error("non-finite {what} at step {step}")]
    NonFinite { step: usize, what: &'static str },

    #[error("singular value: {0}")]
    Singular(&'static str),

    #[error("empty input: {0}")]
    Empty(&'static str),

    /// Training produced a non-finite loss. Carries the last parameters that
    /// produced a finite loss, if any.
    #[error("training diverged at iteration {iteration}")]
    Diverged {
        iteration: usize,
        last_good: Option<Box<ParamVector>>,
    },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub(crate) fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::InvalidParameter(msg()))
    }
}
