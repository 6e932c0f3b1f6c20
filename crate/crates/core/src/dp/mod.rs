//! Differentially private optimization: clipping, Gaussian noise, DP-SGD and
//! the moments accountant.

pub mod accountant;
pub mod clip;
pub mod sgd;

pub use accountant::{compute_epsilon, get_epsilon, log_moment, sigma_for_budget, AccountantState, MAX_LAMBDA};
pub use clip::{clip, clip_factor, l2_norm, noisy_mean};
pub use sgd::{poisson_batch, train_dp, train_sgd, DpSgdConfig, Optimizer, PrivacySpec, SgdConfig, TrainedModel};
