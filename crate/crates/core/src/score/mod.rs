//! Score networks, denoising score matching and the Gaussian exploratory policy.

mod dsm;
mod model;
mod net;
mod policy;

pub use dsm::{
    dsm_gradient, dsm_loss, dsm_loss_with, pretrain, smoothed_decrease, Dataset, DsmBatch, PretrainConfig,
    PretrainReport, TimeSampling,
};
pub use model::ScoreModel;
pub use net::{tweedie_batch, tweedie_denoise, tweedie_from_score, ScoreNet};
pub use policy::{
    gaussian_log_density, likelihood_ratio, policy_kl, sample_action, GaussianPolicy, MeanField, ShiftedMean,
};
