//! Feature framings shared by the models and the adversary classifier.

use serde::{Deserialize, Serialize};

use crate::audio::{resample, CANONICAL_RATE_HZ};
use crate::spectral::{griffin_lim, log_magnitude, mel_spectrogram, stft, SpectralError, Spectrogram, DEFAULT_LOG_FLOOR};
use crate::Waveform;

/// Log-magnitude STFT framing used by the VAE and GAN.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelFraming {
    pub frame_len: usize,
    pub hop: usize,
    pub log_floor: f64,
    pub griffin_lim_iters: usize,
}

impl Default for ModelFraming {
    fn default() -> Self {
        Self { frame_len: 512, hop: 128, log_floor: DEFAULT_LOG_FLOOR, griffin_lim_iters: 60 }
    }
}

impl ModelFraming {
    pub fn n_bins(&self) -> usize {
        self.frame_len / 2 + 1
    }

    pub fn analyze(&self, w: &Waveform) -> Result<Spectrogram, SpectralError> {
        let w = to_canonical(w)?;
        log_magnitude(&stft(&w, self.frame_len, self.hop)?, self.log_floor)
    }

    /// Exponentiates a log spectrogram, runs Griffin-Lim and trims or pads
    /// the result to `len` samples.
    pub fn synthesize(&self, log_mag: &Spectrogram, len: usize, seed: u64) -> Result<Waveform, SpectralError> {
        let w = griffin_lim(&log_mag.exponentiate(), self.griffin_lim_iters, seed)?;
        let mut s = w.into_samples();
        s.resize(len.max(1), 0.0);
        Ok(Waveform::clipped(s, CANONICAL_RATE_HZ)?)
    }
}

/// Log-mel framing for the adversary classifier.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MelConfig {
    pub n_mels: usize,
    pub frame_len: usize,
    pub hop: usize,
    pub fmin: f64,
    pub fmax: f64,
}

impl Default for MelConfig {
    fn default() -> Self {
        Self { n_mels: 40, frame_len: 1024, hop: 256, fmin: 0.0, fmax: 8000.0 }
    }
}

impl MelConfig {
    pub fn analyze(&self, w: &Waveform) -> Result<Spectrogram, SpectralError> {
        let w = to_canonical(w)?;
        mel_spectrogram(&stft(&w, self.frame_len, self.hop)?, self.n_mels, self.fmin, self.fmax)
    }
}

fn to_canonical(w: &Waveform) -> Result<Waveform, SpectralError> {
    if w.sample_rate_hz() == CANONICAL_RATE_HZ {
        Ok(w.clone())
    } else {
        Ok(resample(w, CANONICAL_RATE_HZ)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn model_framing_round_trip_length() {
        let w = Waveform::new((0..5000).map(|i| (i as f32 * 0.05).sin() * 0.3).collect(), 16000).unwrap();
        let f = ModelFraming::default();
        let s = f.analyze(&w).unwrap();
        assert_eq!(s.n_bins(), 257);
        assert!(s.is_log_scaled());
        let back = f.synthesize(&s, w.len(), 1).unwrap();
        assert_eq!(back.len(), w.len());
    }

    #[test]
    fn mel_shape() {
        let w = Waveform::zeros(16000, 16000).unwrap();
        let s = MelConfig::default().analyze(&w).unwrap();
        assert_eq!(s.n_bins(), 40);
        assert_eq!(s.n_frames(), 1 + (16000usize - 1024).div_ceil(256));
    }
}
