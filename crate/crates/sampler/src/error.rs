#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid sampler argument: {0}")]
    Argument(String),

    #[error("non-finite sampler state at step {step}: {msg}")]
    Numerical { step: usize, msg: String },

    #[error(transparent)]
    Core(#[from] wavefill_core::Error),

    #[error(transparent)]
    Diffusion(#[from] wavefill_diffusion::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }
}
