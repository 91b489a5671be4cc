use thiserror::Error;

use crate::audio::AudioError;
use crate::autodiff::TensorError;
use crate::datasets::DatasetError;
use crate::eval::EvalError;
use crate::pitch::PitchError;
use crate::spectral::SpectralError;
use crate::vae::ModelError;

/// Umbrella error for pipelines that cross module boundaries.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error(transparent)]
    Pitch(#[from] PitchError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
