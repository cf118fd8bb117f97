//! Diffusion prior for speed-field inpainting: the variance-preserving
//! schedule, a mask-conditioned U-Net denoiser with its own small CPU
//! autodiff-free engine, and mask-aware training.

pub mod checkpoint;
pub mod error;
pub mod model;
pub mod nn;
pub mod schedule;
pub mod train;

pub use checkpoint::{load_checkpoint, load_train_log, save_checkpoint, CheckpointHeader};
pub use error::{Error, Result};
pub use model::{denoise_predict, ArchDescriptor, DenoiserModel, MaskConditioning};
pub use schedule::{
    corrupt_with, forward_corrupt, linear_beta_schedule, score_from_noise, NoiseSchedule,
};
pub use train::{
    apply_training_mask, loss_and_gradient, masked_loss, train, Adam, Diverged, LossValue,
    MaskStrategy, TrainConfig, TrainError, TrainLog,
};
