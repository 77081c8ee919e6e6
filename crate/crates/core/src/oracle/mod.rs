//! Closed-form and brute-force references used by tests and acceptance runs.
//!
//! Nothing here calls the step rules, networks or estimators it is used to
//! check; the only shared piece is the noise schedule.

mod fd;
mod gaussian;
mod lq;

pub use fd::fd_objective_gradient;
pub use gaussian::{
    gaussian_terminal_kl, pf_ode_exact, reverse_moments, AnalyticScore, GaussianKl, GaussianMixtureData,
};
pub use lq::{ContinuousValue, LinearPolicy, LqInstance, LqPath, LqStep, QuadraticValue};
