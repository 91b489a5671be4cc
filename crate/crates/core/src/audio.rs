//! Time-domain audio: the raw signal and its encrypted counterpart.

use std::path::Path;

use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::seed;

/// Internal rate of the toolkit. Corpora are resampled to this on ingest.
pub const CANONICAL_RATE_HZ: u32 = 16_000;

const PCM_SCALE: f32 = 32768.0;

#[derive(Debug, Error)]
pub enum AudioError {
    #[error("audio file not found: {0}")]
    NotFound(String),
    #[error("malformed wav header in {path}: {reason}")]
    MalformedHeader { path: String, reason: String },
    #[error("unsupported wav encoding in {path}: {reason}")]
    UnsupportedEncoding { path: String, reason: String },
    #[error("cannot write {path}: {reason}")]
    Unwritable { path: String, reason: String },
    #[error("invalid waveform: {0}")]
    InvalidWaveform(String),
    #[error("noise std must be non-negative, got {0}")]
    NegativeStd(f64),
    #[error("sample rate must be positive")]
    ZeroRate,
}

/// Mono audio at a fixed sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f32>,
    sample_rate_hz: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f32>, sample_rate_hz: u32) -> Result<Self, AudioError> {
        if sample_rate_hz == 0 {
            return Err(AudioError::ZeroRate);
        }
        if samples.is_empty() {
            return Err(AudioError::InvalidWaveform("waveform must hold at least one sample".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(AudioError::InvalidWaveform(format!("non-finite sample at index {i}")));
        }
        Ok(Self { samples, sample_rate_hz })
    }

    /// Builds a waveform after clipping every sample to [-1, 1].
    pub fn clipped(samples: Vec<f32>, sample_rate_hz: u32) -> Result<Self, AudioError> {
        Self::new(samples.into_iter().map(|s| s.clamp(-1.0, 1.0)).collect(), sample_rate_hz)
    }

    pub fn zeros(len: usize, sample_rate_hz: u32) -> Result<Self, AudioError> {
        Self::new(vec![0.0; len], sample_rate_hz)
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f32> {
        self.samples
    }

    pub fn sample_rate_hz(&self) -> u32 {
        self.sample_rate_hz
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / f64::from(self.sample_rate_hz)
    }

    pub fn peak(&self) -> f32 {
        self.samples.iter().fold(0.0f32, |m, s| m.max(s.abs()))
    }
}

/// Reads a 16-bit PCM WAV file, averaging stereo to mono.
pub fn read_wav(path: impl AsRef<Path>) -> Result<Waveform, AudioError> {
    let path = path.as_ref();
    let shown = path.display().to_string();
    if !path.exists() {
        return Err(AudioError::NotFound(shown));
    }
    let reader = hound::WavReader::open(path).map_err(|e| classify_hound(e, &shown))?;
    let spec = reader.spec();
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(AudioError::UnsupportedEncoding {
            path: shown,
            reason: format!("{:?} at {} bits, expected 16-bit PCM", spec.sample_format, spec.bits_per_sample),
        });
    }
    let channels = usize::from(spec.channels);
    if channels == 0 || channels > 2 {
        return Err(AudioError::UnsupportedEncoding {
            path: shown,
            reason: format!("{channels} channels, expected mono or stereo"),
        });
    }
    let raw: Vec<i16> = reader
        .into_samples::<i16>()
        .collect::<Result<_, _>>()
        .map_err(|e| classify_hound(e, &shown))?;
    let samples: Vec<f32> = raw
        .chunks(channels)
        .map(|frame| {
            let sum: f32 = frame.iter().map(|&s| f32::from(s)).sum();
            sum / (frame.len() as f32 * PCM_SCALE)
        })
        .collect();
    Waveform::new(samples, spec.sample_rate).map_err(|e| AudioError::MalformedHeader {
        path: shown,
        reason: e.to_string(),
    })
}

fn classify_hound(err: hound::Error, path: &str) -> AudioError {
    match err {
        hound::Error::Unsupported => AudioError::UnsupportedEncoding {
            path: path.to_string(),
            reason: "unsupported wav feature".into(),
        },
        hound::Error::IoError(e) if e.kind() == std::io::ErrorKind::NotFound => {
            AudioError::NotFound(path.to_string())
        }
        other => AudioError::MalformedHeader { path: path.to_string(), reason: other.to_string() },
    }
}

/// Writes 16-bit mono PCM at the canonical rate, clipping to [-1, 1].
pub fn write_wav(w: &Waveform, path: impl AsRef<Path>) -> Result<(), AudioError> {
    let path = path.as_ref();
    let shown = path.display().to_string();
    let canonical;
    let w = if w.sample_rate_hz() == CANONICAL_RATE_HZ {
        w
    } else {
        canonical = resample(w, CANONICAL_RATE_HZ)?;
        &canonical
    };
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: CANONICAL_RATE_HZ,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let unwritable = |e: hound::Error| AudioError::Unwritable { path: shown.clone(), reason: e.to_string() };
    let mut writer = hound::WavWriter::create(path, spec).map_err(unwritable)?;
    for &s in w.samples() {
        writer.write_sample(quantize(s)).map_err(unwritable)?;
    }
    writer.finalize().map_err(unwritable)
}

fn quantize(s: f32) -> i16 {
    (s.clamp(-1.0, 1.0) * PCM_SCALE).round().clamp(-32768.0, 32767.0) as i16
}

/// Adds i.i.d. zero-mean Gaussian noise at the waveform level, then clips.
pub fn add_gaussian_noise(w: &Waveform, std: f64, seed: u64) -> Result<Waveform, AudioError> {
    if !(std >= 0.0) {
        return Err(AudioError::NegativeStd(std));
    }
    if std == 0.0 {
        return Ok(w.clone());
    }
    let normal = Normal::new(0.0, std).map_err(|_| AudioError::NegativeStd(std))?;
    let mut rng = seed::derived_rng(seed, "gaussian-noise", 0);
    let samples = w
        .samples()
        .iter()
        .map(|&s| (f64::from(s) + normal.sample(&mut rng)).clamp(-1.0, 1.0) as f32)
        .collect();
    Waveform::new(samples, w.sample_rate_hz())
}

/// Band-limited resampling to a new rate.
pub fn resample(w: &Waveform, new_rate_hz: u32) -> Result<Waveform, AudioError> {
    if new_rate_hz == 0 {
        return Err(AudioError::ZeroRate);
    }
    if new_rate_hz == w.sample_rate_hz() {
        return Ok(w.clone());
    }
    let ratio = f64::from(new_rate_hz) / f64::from(w.sample_rate_hz());
    let out_len = ((w.len() as f64 * ratio).round() as usize).max(1);
    Waveform::new(resample_to_len(w.samples(), out_len, ratio), new_rate_hz)
}

const SINC_ZERO_CROSSINGS: f64 = 24.0;

/// Windowed-sinc interpolation. Output sample `i` is read at input position
/// `i / ratio`; the low-pass cutoff follows the lower of the two rates.
pub(crate) fn resample_to_len(input: &[f32], out_len: usize, ratio: f64) -> Vec<f32> {
    let cutoff = ratio.min(1.0);
    let half_width = SINC_ZERO_CROSSINGS / cutoff;
    let n = input.len() as isize;
    (0..out_len)
        .map(|i| {
            let pos = i as f64 / ratio;
            let lo = (pos - half_width).ceil() as isize;
            let hi = (pos + half_width).floor() as isize;
            let mut acc = 0.0f64;
            for j in lo.max(0)..=hi.min(n - 1) {
                let t = pos - j as f64;
                acc += f64::from(input[j as usize]) * sinc_kernel(t, cutoff, half_width);
            }
            acc as f32
        })
        .collect()
}

fn sinc_kernel(t: f64, cutoff: f64, half_width: f64) -> f64 {
    let x = t / half_width;
    if x.abs() >= 1.0 {
        return 0.0;
    }
    let arg = std::f64::consts::PI * cutoff * t;
    let sinc = if arg.abs() < 1e-12 { 1.0 } else { arg.sin() / arg };
    // Blackman window over [-half_width, half_width].
    let phase = std::f64::consts::PI * (x + 1.0);
    let window = 0.42 - 0.5 * phase.cos() + 0.08 * (2.0 * phase).cos();
    cutoff * sinc * window
}
