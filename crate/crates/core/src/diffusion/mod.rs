//! Noise schedules, the forward process, the ε-prediction objective,
//! classifier-free guidance, DDPM/DDIM reverse steps and an exact
//! Gaussian-world oracle.

mod model;
mod oracle;
mod process;
mod sampler;
mod schedule;

pub use model::{Architecture, Conditioning, Denoiser, DenoiserConfig, EpsilonModel};
pub use oracle::{analytic_epsilon_gaussian, GaussianOracle};
pub use process::{diffusion_loss, forward_mix, forward_sample, noise_batch, training_loss, NoisedBatch};
pub use sampler::{
    ddim_step, ddpm_step, ddpm_step_with_noise, guided_epsilon, predict_x0, sample, step_variance, SamplerConfig,
    SamplerKind,
};
pub use schedule::{build_schedule, uniform_timesteps, NoiseSchedule, ScheduleKind};

/// Condition dropout used when training denoisers for guidance.
pub const DEFAULT_COND_DROPOUT: f64 = 0.1;
