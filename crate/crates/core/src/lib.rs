//! Client-side speech privacy toolkit.
//!
//! Three on-device transforms that rewrite a waveform so that private
//! attributes (gender, accent) are harder to recover while the spoken
//! content stays usable for a downstream recognizer:
//!
//! * [`pitch::standardize_pitch`] shifts every utterance to a common
//!   reference F0 with a formant-preserving phase vocoder.
//! * [`vae`] trains a content/private disentangling autoencoder and
//!   decodes with a substituted private factor.
//! * [`gan`] trains a label-conditioned generator on top of the frozen
//!   content encoder.
//!
//! [`eval`] holds the adversary classifier, CER/WER scoring and the
//! noise/finetune tradeoff experiments; [`datasets`] provides manifests
//! and a synthetic corpus so everything runs end to end on a laptop.

pub mod audio;
pub mod autodiff;
pub mod cli;
pub mod datasets;
pub mod eval;
pub mod features;
pub mod gan;
pub mod pitch;
pub mod seed;
pub mod spectral;
pub mod vae;

mod error;

pub use audio::Waveform;
pub use error::{Error, Result};
pub use spectral::{ComplexSpectrogram, Spectrogram};
