//! Posterior sampling for speed-field inpainting: reverse diffusion
//! interleaved with exact observation projection, the anisotropic smoothing
//! projector and optional forward jumps, plus the baselines used for
//! comparison.

pub mod chain;
pub mod config;
pub mod ensemble;
pub mod error;
pub mod steps;

pub use chain::{conditioning_mask, sample, sample_aas_only, sample_pma, sample_repaint};
pub use config::{SamplerConfig, Scheme};
pub use ensemble::{sample_ensemble, EnsembleResult};
pub use error::{Error, Result};
pub use steps::{forward_jump, jump_ratio, project_obs, reverse_step};
