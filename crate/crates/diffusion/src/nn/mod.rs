//! A small CPU neural-network engine: just the layers the denoiser needs,
//! each with an explicit backward pass.

pub(crate) mod attention;
pub(crate) mod ops;
pub(crate) mod unet;

pub use ops::ParamAlloc;
pub use unet::UNet;
