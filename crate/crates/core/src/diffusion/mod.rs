//! Denoising diffusion: fixed variance schedules, the closed-form forward
//! process, a small convolutional noise predictor with its own reverse pass,
//! training and respaced ancestral sampling with optional mean shifts.

pub mod denoiser;
pub mod sampler;
pub mod schedule;
pub mod train;

pub use denoiser::{ConvConfig, ConvDenoiser, Denoiser, TrainableDenoiser};
pub use sampler::{
    p_sample_step, sample, sample_latent, step_from_eps, to_density, to_model_space, GuidanceSource,
    GuidanceTerms, SamplerConfig,
};
pub use schedule::{
    elbo_weight, make_schedule, posterior_mean, predict_x0, q_sample, NoiseSchedule, ScheduleKind,
    VarianceKind,
};
pub use train::{loss_eps, train, TrainConfig, TrainReport, TrainingExample, Weighting};
