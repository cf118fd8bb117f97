use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("report {path}: {msg}")]
    Version { path: PathBuf, msg: String },

    #[error("report {path}: {msg}")]
    Report { path: PathBuf, msg: String },

    #[error(transparent)]
    Core(#[from] wavefill_core::Error),

    #[error(transparent)]
    Diffusion(#[from] wavefill_diffusion::Error),

    #[error(transparent)]
    Train(#[from] wavefill_diffusion::TrainError),

    #[error(transparent)]
    Sampler(#[from] wavefill_sampler::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("png encoding: {0}")]
    Png(#[from] png::EncodingError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
