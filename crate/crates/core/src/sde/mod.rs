//! Noise schedules, forward perturbation and reverse-SDE discretizations.

mod rollout;
mod schedule;
mod steps;

pub use rollout::{
    read_trajectories, rollout, rollout_batch, write_trajectories, RolloutSpec, RunningReference, Sampler, Trajectory,
};
pub use schedule::{NoiseSchedule, TimeGrid};
pub use steps::{ddim_step, ddpm_beta, ddpm_step, em_step, forward_perturb, reverse_drift, SdeState};
