//! Denoising diffusion over local occupancy grids.
//!
//! The model is unconditional: observations enter only through inpainting,
//! which re-noises the observed voxels to the current timestep before every
//! reverse step and overwrites them exactly at the end.

mod checkpoint;
mod gradcheck;
pub mod nn;
mod sampler;
mod schedule;
mod train;
mod unet;

use thiserror::Error;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta};
pub use gradcheck::{gradient_check, loss_and_grad, GradCheckReport};
pub use sampler::{sample_inpaint, timesteps, SamplerConfig};
pub use schedule::NoiseSchedule;
pub use train::{lr_at, train, write_loss_csv, LossRecord, NoisedSample, TrainConfig, TrainOutcome};
pub use unet::{Arch, Cache, Denoiser};

#[derive(Debug, Error)]
pub enum DiffusionError {
    #[error("shape mismatch: expected {expected} values, got {got}")]
    Shape { expected: usize, got: usize },
    #[error("timestep {t} outside schedule of {steps} steps")]
    Timestep { t: usize, steps: usize },
    #[error("invalid architecture: {0}")]
    Arch(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("training dataset is empty")]
    EmptyDataset,
    #[error("dataset grid {index}: {msg}")]
    BadSample { index: usize, msg: String },
    #[error("training diverged at step {step}: loss {loss} stayed above 10x the initial {initial} for 100 steps")]
    Diverged { step: usize, loss: f64, initial: f64 },
    #[error("crop has {got} voxels per side but the model expects {expected}")]
    Geometry { expected: usize, got: usize },
    #[error("non-finite sampler state (seed {seed}, step {step}, t = {t})")]
    NonFinite { seed: u64, step: usize, t: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}
