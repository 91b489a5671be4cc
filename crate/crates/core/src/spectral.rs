//! Time-frequency analysis and synthesis.
//!
//! Frames start at sample 0 and advance by `hop`. The tail is
//! reflect-padded so the last frame reaches the final sample, which makes
//! `istft` return `frame_len + hop * (T - 1)` samples: never shorter than
//! the input and at most `hop - 1` longer.

use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use thiserror::Error;

use crate::audio::Waveform;
use crate::seed;

pub const DEFAULT_FRAME_LEN: usize = 1024;
pub const DEFAULT_HOP: usize = 256;
pub const DEFAULT_LOG_FLOOR: f64 = 1e-5;
pub const DEFAULT_GRIFFIN_LIM_ITERS: usize = 60;
pub const DEFAULT_CEPSTRAL_ORDER: usize = 40;
/// Floor applied to mel-band power before the log.
pub const MEL_POWER_FLOOR: f64 = 1e-10;

const CONTAINER_MAGIC: &[u8; 4] = b"VXSP";
const CONTAINER_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum SpectralError {
    #[error("frame length {0} must be a power of two >= 2")]
    FrameLen(usize),
    #[error("hop {hop} must satisfy 0 < hop <= frame_len ({frame_len})")]
    Hop { hop: usize, frame_len: usize },
    #[error("inconsistent framing: {0}")]
    Framing(String),
    #[error("log floor must be positive, got {0}")]
    Floor(f64),
    #[error("invalid mel configuration: {0}")]
    Mel(String),
    #[error("griffin-lim expects a linear magnitude spectrogram; exponentiate log-magnitudes first")]
    LogScaledInput,
    #[error("spectral envelope of an empty spectrum")]
    EmptySpectrum,
    #[error("cepstral order must be >= 1")]
    CepstralOrder,
    #[error("spectrogram container: {0}")]
    Container(String),
    #[error(transparent)]
    Audio(#[from] crate::audio::AudioError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WindowKind {
    Hann,
}

/// Periodic Hann window.
pub fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect()
}

/// Complex STFT frames, `n_frames x n_bins`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSpectrogram {
    bins: Vec<Complex<f64>>,
    n_frames: usize,
    frame_len: usize,
    hop: usize,
    window: WindowKind,
    sample_rate_hz: u32,
}

impl ComplexSpectrogram {
    pub fn new(
        bins: Vec<Complex<f64>>,
        n_frames: usize,
        frame_len: usize,
        hop: usize,
        sample_rate_hz: u32,
    ) -> Result<Self, SpectralError> {
        check_framing(frame_len, hop)?;
        let n_bins = frame_len / 2 + 1;
        if n_frames == 0 || bins.len() != n_frames * n_bins {
            return Err(SpectralError::Framing(format!(
                "{} values for {n_frames} frames of {n_bins} bins",
                bins.len()
            )));
        }
        Ok(Self { bins, n_frames, frame_len, hop, window: WindowKind::Hann, sample_rate_hz })
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }
    pub fn n_bins(&self) -> usize {
        self.frame_len / 2 + 1
    }
    pub fn frame_len(&self) -> usize {
        self.frame_len
    }
    pub fn hop(&self) -> usize {
        self.hop
    }
    pub fn window(&self) -> WindowKind {
        self.window
    }
    pub fn sample_rate_hz(&self) -> u32 {
        self.sample_rate_hz
    }
    pub fn bins(&self) -> &[Complex<f64>] {
        &self.bins
    }
    pub fn frame(&self, t: usize) -> &[Complex<f64>] {
        let b = self.n_bins();
        &self.bins[t * b..(t + 1) * b]
    }

    /// Linear magnitudes.
    pub fn magnitude(&self) -> Spectrogram {
        Spectrogram {
            values: self.bins.iter().map(|z| z.norm()).collect(),
            n_frames: self.n_frames,
            n_bins: self.n_bins(),
            frame_len: self.frame_len,
            hop: self.hop,
            sample_rate_hz: self.sample_rate_hz,
            log_scaled: false,
        }
    }
}

/// Real-valued `n_frames x n_bins` features: linear magnitude or log-scaled.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    values: Vec<f64>,
    n_frames: usize,
    n_bins: usize,
    frame_len: usize,
    hop: usize,
    sample_rate_hz: u32,
    log_scaled: bool,
}

impl Spectrogram {
    pub fn new(
        values: Vec<f64>,
        n_frames: usize,
        n_bins: usize,
        frame_len: usize,
        hop: usize,
        sample_rate_hz: u32,
        log_scaled: bool,
    ) -> Result<Self, SpectralError> {
        if n_frames == 0 || n_bins == 0 || values.len() != n_frames * n_bins {
            return Err(SpectralError::Framing(format!(
                "{} values for {n_frames} frames of {n_bins} bins",
                values.len()
            )));
        }
        if hop == 0 || hop > frame_len {
            return Err(SpectralError::Hop { hop, frame_len });
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(SpectralError::Framing(format!("non-finite entry {v}")));
        }
        if !log_scaled && values.iter().any(|&v| v < 0.0) {
            return Err(SpectralError::Framing("negative linear magnitude".into()));
        }
        Ok(Self { values, n_frames, n_bins, frame_len, hop, sample_rate_hz, log_scaled })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
    pub fn n_frames(&self) -> usize {
        self.n_frames
    }
    pub fn n_bins(&self) -> usize {
        self.n_bins
    }
    pub fn frame_len(&self) -> usize {
        self.frame_len
    }
    pub fn hop(&self) -> usize {
        self.hop
    }
    pub fn sample_rate_hz(&self) -> u32 {
        self.sample_rate_hz
    }
    pub fn is_log_scaled(&self) -> bool {
        self.log_scaled
    }
    pub fn frame(&self, t: usize) -> &[f64] {
        &self.values[t * self.n_bins..(t + 1) * self.n_bins]
    }

    /// Same framing, new values (for model outputs).
    pub fn with_values(&self, values: Vec<f64>, log_scaled: bool) -> Result<Self, SpectralError> {
        Self::new(values, self.n_frames, self.n_bins, self.frame_len, self.hop, self.sample_rate_hz, log_scaled)
    }

    /// Inverse of [`log_magnitude`] above the floor.
    pub fn exponentiate(&self) -> Spectrogram {
        if !self.log_scaled {
            return self.clone();
        }
        Spectrogram { values: self.values.iter().map(|v| v.exp()).collect(), log_scaled: false, ..self.clone() }
    }

    pub fn write_to(&self, mut out: impl Write) -> Result<(), SpectralError> {
        let io = |e: std::io::Error| SpectralError::Container(e.to_string());
        out.write_all(CONTAINER_MAGIC).map_err(io)?;
        for field in [
            CONTAINER_VERSION,
            self.n_frames as u32,
            self.n_bins as u32,
            self.frame_len as u32,
            self.hop as u32,
            self.sample_rate_hz,
            u32::from(self.log_scaled),
        ] {
            out.write_all(&field.to_le_bytes()).map_err(io)?;
        }
        for &v in &self.values {
            out.write_all(&(v as f32).to_le_bytes()).map_err(io)?;
        }
        Ok(())
    }

    pub fn read_from(mut input: impl Read) -> Result<Self, SpectralError> {
        let io = |e: std::io::Error| SpectralError::Container(e.to_string());
        let mut magic = [0u8; 4];
        input.read_exact(&mut magic).map_err(io)?;
        if &magic != CONTAINER_MAGIC {
            return Err(SpectralError::Container("bad magic".into()));
        }
        let mut header = [0u32; 7];
        for h in header.iter_mut() {
            let mut b = [0u8; 4];
            input.read_exact(&mut b).map_err(io)?;
            *h = u32::from_le_bytes(b);
        }
        let [version, t, b, frame_len, hop, rate, log_flag] = header;
        if version != CONTAINER_VERSION {
            return Err(SpectralError::Container(format!("unsupported version {version}")));
        }
        let count = t as usize * b as usize;
        let mut raw = vec![0u8; count * 4];
        input.read_exact(&mut raw).map_err(io)?;
        let values = raw
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
            .collect();
        Self::new(values, t as usize, b as usize, frame_len as usize, hop as usize, rate, log_flag != 0)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), SpectralError> {
        let f = std::fs::File::create(path).map_err(|e| SpectralError::Container(e.to_string()))?;
        self.write_to(std::io::BufWriter::new(f))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SpectralError> {
        let f = std::fs::File::open(path).map_err(|e| SpectralError::Container(e.to_string()))?;
        Self::read_from(std::io::BufReader::new(f))
    }
}

fn check_framing(frame_len: usize, hop: usize) -> Result<(), SpectralError> {
    if frame_len < 2 || !frame_len.is_power_of_two() {
        return Err(SpectralError::FrameLen(frame_len));
    }
    if hop == 0 || hop > frame_len {
        return Err(SpectralError::Hop { hop, frame_len });
    }
    Ok(())
}

/// Reusable STFT machinery for one framing.
pub(crate) struct StftEngine {
    frame_len: usize,
    hop: usize,
    window: Vec<f64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    buf: Vec<Complex<f64>>,
}

impl StftEngine {
    pub(crate) fn new(frame_len: usize, hop: usize) -> Result<Self, SpectralError> {
        check_framing(frame_len, hop)?;
        let mut planner = FftPlanner::new();
        Ok(Self {
            frame_len,
            hop,
            window: hann(frame_len),
            forward: planner.plan_fft_forward(frame_len),
            inverse: planner.plan_fft_inverse(frame_len),
            buf: vec![Complex::new(0.0, 0.0); frame_len],
        })
    }

    pub(crate) fn n_bins(&self) -> usize {
        self.frame_len / 2 + 1
    }

    pub(crate) fn window(&self) -> &[f64] {
        &self.window
    }

    /// Number of frames for a signal of `len` samples.
    pub(crate) fn n_frames(&self, len: usize) -> usize {
        if len <= self.frame_len {
            1
        } else {
            1 + (len - self.frame_len).div_ceil(self.hop)
        }
    }

    /// Forward transform of one windowed frame into `out` (n_bins values).
    pub(crate) fn analyze_frame(&mut self, frame: &[f64], out: &mut [Complex<f64>]) {
        for ((b, &x), &w) in self.buf.iter_mut().zip(frame).zip(&self.window) {
            *b = Complex::new(x * w, 0.0);
        }
        self.forward.process(&mut self.buf);
        out.copy_from_slice(&self.buf[..out.len()]);
    }

    /// Inverse transform of a half spectrum into a real frame (unwindowed).
    pub(crate) fn synthesize_frame(&mut self, half: &[Complex<f64>], out: &mut [f64]) {
        let n = self.frame_len;
        let nb = n / 2 + 1;
        self.buf[0] = Complex::new(half[0].re, 0.0);
        self.buf[n / 2] = Complex::new(half[nb - 1].re, 0.0);
        for k in 1..n / 2 {
            self.buf[k] = half[k];
            self.buf[n - k] = half[k].conj();
        }
        self.inverse.process(&mut self.buf);
        let scale = 1.0 / n as f64;
        for (o, b) in out.iter_mut().zip(&self.buf) {
            *o = b.re * scale;
        }
    }

    pub(crate) fn stft(&mut self, signal: &[f64]) -> (Vec<Complex<f64>>, usize) {
        let n_frames = self.n_frames(signal.len());
        let padded_len = self.frame_len + self.hop * (n_frames - 1);
        let padded: Vec<f64> = (0..padded_len).map(|i| signal[reflect_index(i, signal.len())]).collect();
        let nb = self.n_bins();
        let mut out = vec![Complex::new(0.0, 0.0); n_frames * nb];
        for t in 0..n_frames {
            let start = t * self.hop;
            let frame = &padded[start..start + self.frame_len];
            let (_, rest) = out.split_at_mut(t * nb);
            self.analyze_frame(frame, &mut rest[..nb]);
        }
        (out, n_frames)
    }

    /// Least-squares overlap-add inverse.
    pub(crate) fn istft(&mut self, bins: &[Complex<f64>], n_frames: usize) -> Vec<f64> {
        let nb = self.n_bins();
        let len = self.frame_len + self.hop * (n_frames - 1);
        let mut out = vec![0.0; len];
        let mut wsum = vec![0.0; len];
        let mut frame = vec![0.0; self.frame_len];
        for t in 0..n_frames {
            self.synthesize_frame(&bins[t * nb..(t + 1) * nb], &mut frame);
            let start = t * self.hop;
            for (n, (&x, &w)) in frame.iter().zip(&self.window).enumerate() {
                out[start + n] += w * x;
                wsum[start + n] += w * w;
            }
        }
        for (o, &s) in out.iter_mut().zip(&wsum) {
            *o = if s > 0.0 { *o / s } else { 0.0 };
        }
        out
    }
}

/// Index into a signal extended by mirror reflection (edge sample not repeated).
fn reflect_index(i: usize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len - 1);
    let r = i % period;
    if r < len {
        r
    } else {
        period - r
    }
}

pub fn stft(w: &Waveform, frame_len: usize, hop: usize) -> Result<ComplexSpectrogram, SpectralError> {
    let mut engine = StftEngine::new(frame_len, hop)?;
    let signal: Vec<f64> = w.samples().iter().map(|&s| f64::from(s)).collect();
    let (bins, n_frames) = engine.stft(&signal);
    ComplexSpectrogram::new(bins, n_frames, frame_len, hop, w.sample_rate_hz())
}

/// Inverse STFT. The output covers every frame, so it is at least as long as
/// the analysed signal; callers trim to the original length.
pub fn istft(cs: &ComplexSpectrogram) -> Result<Waveform, SpectralError> {
    let mut engine = StftEngine::new(cs.frame_len, cs.hop)?;
    if cs.bins.len() != cs.n_frames * engine.n_bins() {
        return Err(SpectralError::Framing("bin count does not match frame_len".into()));
    }
    let out = engine.istft(&cs.bins, cs.n_frames);
    Ok(Waveform::new(out.into_iter().map(|v| v as f32).collect(), cs.sample_rate_hz)?)
}

pub fn log_magnitude(cs: &ComplexSpectrogram, floor: f64) -> Result<Spectrogram, SpectralError> {
    if !(floor > 0.0) {
        return Err(SpectralError::Floor(floor));
    }
    let mut s = cs.magnitude();
    for v in s.values.iter_mut() {
        *v = v.max(floor).ln();
    }
    s.log_scaled = true;
    Ok(s)
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular mel filterbank, `n_mels x n_bins`. Every row has at least one
/// positive weight: a filter too narrow to contain a bin centre falls back
/// to the nearest bin.
pub fn mel_filterbank(
    n_mels: usize,
    n_bins: usize,
    sample_rate_hz: u32,
    fmin: f64,
    fmax: f64,
) -> Result<Vec<Vec<f64>>, SpectralError> {
    let nyquist = f64::from(sample_rate_hz) / 2.0;
    if n_mels == 0 {
        return Err(SpectralError::Mel("n_mels must be >= 1".into()));
    }
    if !(fmin >= 0.0 && fmin < fmax && fmax <= nyquist) {
        return Err(SpectralError::Mel(format!("need 0 <= fmin < fmax <= {nyquist}, got {fmin}..{fmax}")));
    }
    let (mlo, mhi) = (hz_to_mel(fmin), hz_to_mel(fmax));
    let edges: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(mlo + (mhi - mlo) * i as f64 / (n_mels + 1) as f64))
        .collect();
    let bin_hz = nyquist / (n_bins - 1) as f64;
    Ok((0..n_mels)
        .map(|m| {
            let (left, centre, right) = (edges[m], edges[m + 1], edges[m + 2]);
            let mut row: Vec<f64> = (0..n_bins)
                .map(|k| {
                    let f = k as f64 * bin_hz;
                    if f <= left || f >= right {
                        0.0
                    } else if f <= centre {
                        (f - left) / (centre - left)
                    } else {
                        (right - f) / (right - centre)
                    }
                })
                .collect();
            if row.iter().all(|&w| w == 0.0) {
                let nearest = ((centre / bin_hz).round() as usize).min(n_bins - 1);
                row[nearest] = 1.0;
            }
            row
        })
        .collect())
}

/// Log mel-band power.
pub fn mel_spectrogram(
    cs: &ComplexSpectrogram,
    n_mels: usize,
    fmin: f64,
    fmax: f64,
) -> Result<Spectrogram, SpectralError> {
    let fb = mel_filterbank(n_mels, cs.n_bins(), cs.sample_rate_hz, fmin, fmax)?;
    let mut values = Vec::with_capacity(cs.n_frames * n_mels);
    for t in 0..cs.n_frames {
        let power: Vec<f64> = cs.frame(t).iter().map(|z| z.norm_sqr()).collect();
        for row in &fb {
            let e: f64 = row.iter().zip(&power).map(|(w, p)| w * p).sum();
            values.push(e.max(MEL_POWER_FLOOR).ln());
        }
    }
    Spectrogram::new(values, cs.n_frames, n_mels, cs.frame_len, cs.hop, cs.sample_rate_hz, true)
}

/// Result of a Griffin-Lim run: the waveform and the consistency error
/// `|| |STFT(x_k)| - mag ||_F` for k = 0..=iters, measured over the full
/// (Hermitian-extended) spectrum.
#[derive(Debug, Clone)]
pub struct GriffinLimTrace {
    pub waveform: Waveform,
    pub errors: Vec<f64>,
}

pub fn griffin_lim(mag: &Spectrogram, iters: usize, seed: u64) -> Result<Waveform, SpectralError> {
    Ok(griffin_lim_traced(mag, iters, seed)?.waveform)
}

/// Classic (non-momentum) Griffin-Lim with seeded random initial phase.
pub fn griffin_lim_traced(mag: &Spectrogram, iters: usize, seed: u64) -> Result<GriffinLimTrace, SpectralError> {
    if mag.log_scaled {
        return Err(SpectralError::LogScaledInput);
    }
    let mut engine = StftEngine::new(mag.frame_len, mag.hop)?;
    if mag.n_bins != engine.n_bins() {
        return Err(SpectralError::Framing(format!(
            "{} bins but frame_len {} implies {}",
            mag.n_bins,
            mag.frame_len,
            engine.n_bins()
        )));
    }
    let nb = mag.n_bins;
    let mut rng = seed::derived_rng(seed, "griffin-lim-phase", 0);
    let mut spec: Vec<Complex<f64>> = mag
        .values
        .iter()
        .map(|&m| Complex::from_polar(m, rng.random_range(0.0..2.0 * std::f64::consts::PI)))
        .collect();

    let mut errors = Vec::with_capacity(iters + 1);
    let mut signal = engine.istft(&spec, mag.n_frames);
    for k in 0..=iters {
        let (rebuilt, n_frames) = engine.stft(&signal);
        debug_assert_eq!(n_frames, mag.n_frames);
        errors.push(consistency_error(&rebuilt, &mag.values, nb));
        if k == iters {
            break;
        }
        for ((s, c), &m) in spec.iter_mut().zip(&rebuilt).zip(&mag.values) {
            let norm = c.norm();
            *s = if norm > 0.0 { c * (m / norm) } else { Complex::new(m, 0.0) };
        }
        signal = engine.istft(&spec, mag.n_frames);
    }
    let waveform = Waveform::new(signal.into_iter().map(|v| v as f32).collect(), mag.sample_rate_hz)?;
    Ok(GriffinLimTrace { waveform, errors })
}

fn hermitian_weight(k: usize, nb: usize) -> f64 {
    if k == 0 || k == nb - 1 {
        1.0
    } else {
        2.0
    }
}

fn consistency_error(rebuilt: &[Complex<f64>], mag: &[f64], nb: usize) -> f64 {
    rebuilt
        .iter()
        .zip(mag)
        .enumerate()
        .map(|(i, (c, &m))| hermitian_weight(i % nb, nb) * (c.norm() - m).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Frobenius norm over the full spectrum, matching the Griffin-Lim error.
pub fn full_spectrum_norm(mag: &Spectrogram) -> f64 {
    let nb = mag.n_bins;
    mag.values
        .iter()
        .enumerate()
        .map(|(i, &m)| hermitian_weight(i % nb, nb) * m * m)
        .sum::<f64>()
        .sqrt()
}

/// Smooth spectral envelope by low-quefrency cepstral liftering, refined
/// iteratively so it passes through spectral peaks (the "true envelope").
pub fn spectral_envelope(frame_spectrum: &[f64], cepstral_order: usize) -> Result<Vec<f64>, SpectralError> {
    if frame_spectrum.is_empty() {
        return Err(SpectralError::EmptySpectrum);
    }
    if cepstral_order == 0 {
        return Err(SpectralError::CepstralOrder);
    }
    let nb = frame_spectrum.len();
    if nb == 1 {
        return Ok(vec![frame_spectrum[0].max(f64::MIN_POSITIVE)]);
    }
    let n = 2 * (nb - 1);
    let peak = frame_spectrum.iter().fold(0.0f64, |m, &v| m.max(v));
    let floor = (peak * 1e-9).max(1e-300);

    let target: Vec<f64> = (0..nb).map(|k| frame_spectrum[k].max(floor).ln()).collect();
    let order = cepstral_order.min(n / 2);
    let mut planner = FftPlanner::new();
    let ifft = planner.plan_fft_inverse(n);
    let fft = planner.plan_fft_forward(n);
    let mut buf = vec![Complex::new(0.0, 0.0); n];
    let mut lifter = |log_mag: &[f64]| -> Vec<f64> {
        for (k, c) in buf.iter_mut().enumerate() {
            let k = if k < nb { k } else { n - k };
            *c = Complex::new(log_mag[k], 0.0);
        }
        ifft.process(&mut buf);
        for (q, c) in buf.iter_mut().enumerate() {
            if q.min(n - q) > order {
                *c = Complex::new(0.0, 0.0);
            } else {
                *c /= n as f64;
            }
        }
        fft.process(&mut buf);
        buf[..nb].iter().map(|c| c.re).collect()
    };

    // Iterative refinement: raise the log spectrum to the current fit and
    // re-smooth, so the envelope rides partials instead of the valleys
    // between them.
    let mut current = target.clone();
    let mut env = lifter(&current);
    for _ in 0..ENVELOPE_MAX_ITERS {
        let mut worst = 0.0f64;
        for k in 0..nb {
            worst = worst.max(target[k] - env[k]);
            current[k] = target[k].max(env[k]);
        }
        if worst < ENVELOPE_TOLERANCE {
            break;
        }
        env = lifter(&current);
    }
    Ok(env.into_iter().map(f64::exp).collect())
}

const ENVELOPE_MAX_ITERS: usize = 60;
// 1 dB in natural-log magnitude.
const ENVELOPE_TOLERANCE: f64 = 0.115;

/// Indices of strict local maxima (plateaus count once, at their left edge).
pub fn local_maxima(values: &[f64]) -> Vec<usize> {
    let mut out = Vec::new();
    let n = values.len();
    let mut i = 1;
    while i + 1 < n {
        if values[i] > values[i - 1] {
            let mut j = i;
            while j + 1 < n && values[j + 1] == values[i] {
                j += 1;
            }
            if j + 1 < n && values[j + 1] < values[i] {
                out.push(i);
            }
            i = j + 1;
        } else {
            i += 1;
        }
    }
    out
}
