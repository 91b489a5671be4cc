//! Pitch standardization: F0 tracking, utterance-level aggregation and a
//! formant-preserving phase-vocoder pitch shift.

use rustfft::num_complex::Complex;
use thiserror::Error;

use crate::audio::{resample_to_len, Waveform};
use crate::spectral::{spectral_envelope, SpectralError, StftEngine, DEFAULT_CEPSTRAL_ORDER};

/// Marker stored for unvoiced frames.
pub const UNVOICED: f64 = -1.0;
pub const DEFAULT_REF_F0_HZ: f64 = 165.0;
pub const DEFAULT_FMIN_HZ: f64 = 50.0;
pub const DEFAULT_FMAX_HZ: f64 = 500.0;
pub const MAX_SHIFT_SEMITONES: f64 = 24.0;

const VOCODER_FRAME_LEN: usize = 1024;

#[derive(Debug, Error)]
pub enum PitchError {
    #[error("need 0 < fmin < fmax < rate/2, got fmin={fmin} fmax={fmax} rate={rate}")]
    Range { fmin: f64, fmax: f64, rate: u32 },
    #[error("empty F0 track")]
    EmptyTrack,
    #[error("no voiced frames in F0 track")]
    NoVoicedFrames,
    #[error("frequencies must be positive, got {0} and {1}")]
    NonPositiveFrequency(f64, f64),
    #[error("shift of {0} semitones exceeds +/-24")]
    ShiftTooLarge(f64),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error(transparent)]
    Audio(#[from] crate::audio::AudioError),
}

/// Per-frame F0 in Hz, [`UNVOICED`] where no periodicity was found.
#[derive(Debug, Clone, PartialEq)]
pub struct F0Track {
    f0_hz: Vec<f64>,
    hop: usize,
    sample_rate_hz: u32,
}

impl F0Track {
    pub fn new(f0_hz: Vec<f64>, hop: usize, sample_rate_hz: u32) -> Self {
        Self { f0_hz, hop, sample_rate_hz }
    }
    pub fn f0_hz(&self) -> &[f64] {
        &self.f0_hz
    }
    pub fn hop(&self) -> usize {
        self.hop
    }
    pub fn sample_rate_hz(&self) -> u32 {
        self.sample_rate_hz
    }
    pub fn voiced(&self) -> impl Iterator<Item = f64> + '_ {
        self.f0_hz.iter().copied().filter(|&f| f >= 0.0)
    }
    pub fn voiced_fraction(&self) -> f64 {
        if self.f0_hz.is_empty() {
            return 0.0;
        }
        self.voiced().count() as f64 / self.f0_hz.len() as f64
    }
}

/// Autocorrelation tracker settings.
#[derive(Debug, Clone, Copy)]
pub struct F0Config {
    pub fmin: f64,
    pub fmax: f64,
    pub frame_s: f64,
    pub hop_s: f64,
    pub voicing_threshold: f64,
    /// Earliest lag whose peak reaches this fraction of the best peak, and
    /// divides the best lag, wins. This suppresses sub-octave errors.
    pub octave_ratio: f64,
}

impl Default for F0Config {
    fn default() -> Self {
        Self {
            fmin: DEFAULT_FMIN_HZ,
            fmax: DEFAULT_FMAX_HZ,
            frame_s: 0.040,
            hop_s: 0.010,
            voicing_threshold: 0.3,
            octave_ratio: 0.85,
        }
    }
}

pub fn estimate_f0_track(w: &Waveform, fmin: f64, fmax: f64) -> Result<F0Track, PitchError> {
    estimate_f0_track_with(w, &F0Config { fmin, fmax, ..F0Config::default() })
}

/// Normalized cross-correlation pitch tracker with parabolic lag refinement.
pub fn estimate_f0_track_with(w: &Waveform, cfg: &F0Config) -> Result<F0Track, PitchError> {
    let rate = w.sample_rate_hz();
    let rate_f = f64::from(rate);
    if !(cfg.fmin > 0.0 && cfg.fmin < cfg.fmax && cfg.fmax < rate_f / 2.0) {
        return Err(PitchError::Range { fmin: cfg.fmin, fmax: cfg.fmax, rate });
    }
    let win = ((cfg.frame_s * rate_f).round() as usize).max(2);
    let hop = ((cfg.hop_s * rate_f).round() as usize).max(1);
    let lag_min = ((rate_f / cfg.fmax).floor() as usize).max(2);
    let lag_max = (rate_f / cfg.fmin).ceil() as usize;

    let x: Vec<f64> = w.samples().iter().map(|&s| f64::from(s)).collect();
    let n_frames = if x.len() <= win { 1 } else { 1 + (x.len() - win) / hop };
    let padded_len = (n_frames - 1) * hop + win + lag_max + 2;
    let mut padded = x;
    padded.resize(padded_len, 0.0);

    // Prefix sums of squares give every window energy in O(1).
    let mut energy_prefix = Vec::with_capacity(padded_len + 1);
    energy_prefix.push(0.0);
    let mut acc = 0.0;
    for &v in &padded {
        acc += v * v;
        energy_prefix.push(acc);
    }
    let energy = |start: usize| energy_prefix[start + win] - energy_prefix[start];

    let mut nccf = vec![0.0; lag_max + 2];
    let f0_hz = (0..n_frames)
        .map(|i| {
            let t = i * hop;
            let e0 = energy(t);
            if e0 <= 1e-10 * win as f64 {
                return UNVOICED;
            }
            let frame = &padded[t..t + win];
            for lag in lag_min - 1..=lag_max + 1 {
                let shifted = &padded[t + lag..t + lag + win];
                let dot: f64 = frame.iter().zip(shifted).map(|(a, b)| a * b).sum();
                let el = energy(t + lag);
                nccf[lag] = if el > 0.0 { dot / (e0 * el).sqrt() } else { 0.0 };
            }
            pick_lag(&nccf, lag_min, lag_max, cfg)
                .map(|lag| (rate_f / lag).clamp(cfg.fmin, cfg.fmax))
                .unwrap_or(UNVOICED)
        })
        .collect();
    Ok(F0Track { f0_hz, hop, sample_rate_hz: rate })
}

fn pick_lag(nccf: &[f64], lag_min: usize, lag_max: usize, cfg: &F0Config) -> Option<f64> {
    let best = (lag_min..=lag_max).map(|l| nccf[l]).fold(f64::MIN, f64::max);
    if best < cfg.voicing_threshold {
        return None;
    }
    let is_peak = |l: usize| nccf[l] >= nccf[l - 1] && nccf[l] >= nccf[l + 1];
    let best_lag = (lag_min..=lag_max).filter(|&l| nccf[l] == best).min()? as f64;
    // An earlier peak only wins when the best lag is a multiple of it, i.e.
    // the best lag is a sub-harmonic. Formant ringing gives strong peaks at
    // other fractions of the period.
    let divides = |l: usize| {
        let r = best_lag / l as f64;
        (r - r.round()).abs() <= 0.1
    };
    let lag = (lag_min..=lag_max).find(|&l| is_peak(l) && nccf[l] >= cfg.octave_ratio * best && divides(l))?;
    let (a, b, c) = (nccf[lag - 1], nccf[lag], nccf[lag + 1]);
    let denom = a - 2.0 * b + c;
    let delta = if denom.abs() > 1e-12 { (0.5 * (a - c) / denom).clamp(-0.5, 0.5) } else { 0.0 };
    Some(lag as f64 + delta)
}

/// Mean of the voiced (non-negative) F0 values.
pub fn utterance_f0(track: &F0Track) -> Result<f64, PitchError> {
    if track.f0_hz.is_empty() {
        return Err(PitchError::EmptyTrack);
    }
    let (sum, count) = track.voiced().fold((0.0, 0usize), |(s, c), f| (s + f, c + 1));
    if count == 0 {
        return Err(PitchError::NoVoicedFrames);
    }
    Ok(sum / count as f64)
}

/// Shift in semitones that moves `f_u` onto `f_r`.
pub fn semitone_shift(f_u: f64, f_r: f64) -> Result<f64, PitchError> {
    if !(f_u > 0.0 && f_r > 0.0) {
        return Err(PitchError::NonPositiveFrequency(f_u, f_r));
    }
    Ok(12.0 * (f_r / f_u).log2())
}

/// Phase-vocoder stretch by `2^(semitones/12)` followed by resampling back to
/// the input length. Each analysis frame's cepstral envelope is warped so the
/// envelope lands back on its original frequencies after resampling.
pub fn pitch_shift_preserve_formants(w: &Waveform, semitones: f64) -> Result<Waveform, PitchError> {
    if !semitones.is_finite() || semitones.abs() > MAX_SHIFT_SEMITONES {
        return Err(PitchError::ShiftTooLarge(semitones));
    }
    let factor = 2f64.powf(semitones / 12.0);
    let frame_len = VOCODER_FRAME_LEN;
    let hop_a = if factor <= 2.0 { frame_len / 4 } else { frame_len / 8 };
    let hop_s = ((hop_a as f64 * factor).round() as usize).clamp(1, frame_len / 2);
    let stretch = hop_s as f64 / hop_a as f64;

    let input: Vec<f64> = w.samples().iter().map(|&s| f64::from(s)).collect();
    let order = envelope_order(w, factor);
    let stretched = PhaseVocoder::new(frame_len, hop_a, hop_s, order)?.stretch(&input, stretch)?;
    let stretched: Vec<f32> = stretched.into_iter().map(|v| v as f32).collect();
    let out = resample_to_len(&stretched, w.len(), 1.0 / stretch);
    Ok(Waveform::new(out, w.sample_rate_hz())?)
}

/// Lifter order for the warp envelope: half the pitch period in samples,
/// the largest order at which the fit still can't resolve single harmonics.
/// Downshifts read the envelope between input harmonics, so the order drops
/// with the shift ratio to keep that region free of ripple.
fn envelope_order(w: &Waveform, factor: f64) -> usize {
    let rate = f64::from(w.sample_rate_hz());
    let f0 = estimate_f0_track(w, DEFAULT_FMIN_HZ, DEFAULT_FMAX_HZ)
        .ok()
        .and_then(|t| utterance_f0(&t).ok())
        .unwrap_or(2.0 * DEFAULT_REF_F0_HZ);
    let divisor = if factor >= 1.0 { 2.0 } else { 3.0 };
    ((rate / (divisor * f0)).round() as usize).clamp(8, MAX_WARP_ORDER)
}

const MAX_WARP_ORDER: usize = 80;

struct PhaseVocoder {
    engine: StftEngine,
    frame_len: usize,
    hop_a: usize,
    hop_s: usize,
    envelope_order: usize,
}

impl PhaseVocoder {
    fn new(frame_len: usize, hop_a: usize, hop_s: usize, envelope_order: usize) -> Result<Self, SpectralError> {
        Ok(Self { engine: StftEngine::new(frame_len, hop_a)?, frame_len, hop_a, hop_s, envelope_order })
    }

    /// Time-stretches by `hop_s / hop_a` with identity phase locking, warping
    /// each frame's envelope by `warp` (pass the stretch factor to keep
    /// formants fixed once the result is resampled).
    fn stretch(&mut self, input: &[f64], warp: f64) -> Result<Vec<f64>, SpectralError> {
        let n = self.frame_len;
        let nb = n / 2 + 1;
        let two_pi = 2.0 * std::f64::consts::PI;

        let mut padded = vec![0.0; n];
        padded.extend_from_slice(input);
        padded.resize(padded.len() + n + self.hop_a, 0.0);
        let n_frames = 1 + (padded.len() - n) / self.hop_a;

        let out_len = (n_frames - 1) * self.hop_s + n;
        let mut out = vec![0.0; out_len];
        let mut wsum = vec![0.0; out_len];

        let expected: Vec<f64> = (0..nb).map(|k| two_pi * k as f64 * self.hop_a as f64 / n as f64).collect();
        let mut prev_phase = vec![0.0; nb];
        let mut out_phase = vec![0.0; nb];
        let mut spectrum = vec![Complex::new(0.0, 0.0); nb];
        let mut frame_out = vec![0.0; n];
        let window = self.engine.window().to_vec();

        for i in 0..n_frames {
            let start = i * self.hop_a;
            self.engine.analyze_frame(&padded[start..start + n], &mut spectrum);
            let mag: Vec<f64> = spectrum.iter().map(|z| z.norm()).collect();
            let phase: Vec<f64> = spectrum.iter().map(|z| z.arg()).collect();

            if i == 0 {
                out_phase.copy_from_slice(&phase);
            } else {
                let peaks = spectral_peaks(&mag);
                let mut locked = out_phase.clone();
                for &p in &peaks {
                    let deviation = princarg(phase[p] - prev_phase[p] - expected[p]);
                    let inst_freq = (expected[p] + deviation) / self.hop_a as f64;
                    locked[p] = out_phase[p] + inst_freq * self.hop_s as f64;
                }
                if peaks.is_empty() {
                    for k in 0..nb {
                        let deviation = princarg(phase[k] - prev_phase[k] - expected[k]);
                        locked[k] = out_phase[k] + (expected[k] + deviation) / self.hop_a as f64 * self.hop_s as f64;
                    }
                } else {
                    // Every bin follows the phase of the peak whose region it falls in.
                    let mut owner = 0;
                    for k in 0..nb {
                        while owner + 1 < peaks.len() && k > (peaks[owner] + peaks[owner + 1]) / 2 {
                            owner += 1;
                        }
                        let p = peaks[owner];
                        if k != p {
                            locked[k] = locked[p] + phase[k] - phase[p];
                        }
                    }
                }
                out_phase = locked;
            }
            prev_phase.copy_from_slice(&phase);

            let shaped = warp_envelope(&mag, warp, self.envelope_order)?;
            for k in 0..nb {
                spectrum[k] = Complex::from_polar(shaped[k], out_phase[k]);
            }
            self.engine.synthesize_frame(&spectrum, &mut frame_out);
            let s = i * self.hop_s;
            for j in 0..n {
                out[s + j] += window[j] * frame_out[j];
                wsum[s + j] += window[j] * window[j];
            }
        }
        let peak_wsum = wsum.iter().fold(0.0f64, |m, &v| m.max(v));
        for (o, &ws) in out.iter_mut().zip(&wsum) {
            *o /= ws.max(1e-3 * peak_wsum);
        }

        // Drop the leading pad (n analysis samples map to n * stretch output samples).
        let stretch = self.hop_s as f64 / self.hop_a as f64;
        let lead = (n as f64 * stretch).round() as usize;
        let keep = ((input.len() as f64 * stretch).ceil() as usize + 1).min(out.len() - lead);
        Ok(out[lead..lead + keep].to_vec())
    }
}

// Caps the per-bin boost so near-silent bands (leakage, floor) can't be
// amplified into audible partials.
const MAX_WARP_GAIN: f64 = 1000.0;

/// Replaces the envelope `E(k)` of `mag` with `E(warp * k)`.
fn warp_envelope(mag: &[f64], warp: f64, order: usize) -> Result<Vec<f64>, SpectralError> {
    if (warp - 1.0).abs() < 1e-12 {
        return Ok(mag.to_vec());
    }
    let env = spectral_envelope(mag, order)?;
    let last = env.len() - 1;
    Ok(mag
        .iter()
        .enumerate()
        .map(|(k, &m)| {
            let pos = (k as f64 * warp).min(last as f64);
            let lo = pos.floor() as usize;
            let hi = (lo + 1).min(last);
            let frac = pos - lo as f64;
            let target = env[lo] * (1.0 - frac) + env[hi] * frac;
            m * (target / env[k]).min(MAX_WARP_GAIN)
        })
        .collect())
}

fn spectral_peaks(mag: &[f64]) -> Vec<usize> {
    let n = mag.len();
    let floor = mag.iter().fold(0.0f64, |m, &v| m.max(v)) * 1e-6;
    (0..n)
        .filter(|&k| {
            let m = mag[k];
            m > floor
                && (k < 1 || m > mag[k - 1])
                && (k < 2 || m > mag[k - 2])
                && (k + 1 >= n || m >= mag[k + 1])
                && (k + 2 >= n || m >= mag[k + 2])
        })
        .collect()
}

fn princarg(phase: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    phase - two_pi * (phase / two_pi).round()
}

/// Output of [`standardize_pitch`].
#[derive(Debug, Clone)]
pub struct Standardized {
    pub waveform: Waveform,
    /// Utterance F0 of the input, if any frame was voiced.
    pub source_f0_hz: Option<f64>,
    pub semitones: f64,
    /// Set when the input had no voiced frames and was passed through.
    pub unvoiced_passthrough: bool,
}

/// Moves the utterance's mean F0 onto `f_r` while keeping formants in place.
pub fn standardize_pitch(w: &Waveform, f_r: f64) -> Result<Standardized, PitchError> {
    if !(f_r > 0.0) {
        return Err(PitchError::NonPositiveFrequency(f_r, f_r));
    }
    let track = estimate_f0_track(w, DEFAULT_FMIN_HZ, DEFAULT_FMAX_HZ)?;
    let f_u = match utterance_f0(&track) {
        Ok(f) => f,
        Err(PitchError::NoVoicedFrames) => {
            return Ok(Standardized { waveform: w.clone(), source_f0_hz: None, semitones: 0.0, unvoiced_passthrough: true })
        }
        Err(e) => return Err(e),
    };
    let semitones = semitone_shift(f_u, f_r)?;
    Ok(Standardized {
        waveform: pitch_shift_preserve_formants(w, semitones)?,
        source_f0_hz: Some(f_u),
        semitones,
        unvoiced_passthrough: false,
    })
}

/// Frame-averaged cepstral envelope of a waveform (1024-point frames).
pub fn average_envelope(w: &Waveform) -> Result<Vec<f64>, SpectralError> {
    let mut engine = StftEngine::new(VOCODER_FRAME_LEN, VOCODER_FRAME_LEN / 4)?;
    let x: Vec<f64> = w.samples().iter().map(|&s| f64::from(s)).collect();
    let (bins, n_frames) = engine.stft(&x);
    let nb = engine.n_bins();
    let mut power = vec![0.0; nb];
    for t in 0..n_frames {
        for k in 0..nb {
            power[k] += bins[t * nb + k].norm_sqr();
        }
    }
    let mag: Vec<f64> = power.iter().map(|p| (p / n_frames as f64).sqrt()).collect();
    spectral_envelope(&mag, DEFAULT_CEPSTRAL_ORDER)
}

/// Frequencies (Hz) of the envelope peaks of `w`, low to high.
pub fn envelope_peaks_hz(w: &Waveform) -> Result<Vec<f64>, SpectralError> {
    let env = average_envelope(w)?;
    let bin_hz = f64::from(w.sample_rate_hz()) / VOCODER_FRAME_LEN as f64;
    Ok(crate::spectral::local_maxima(&env).into_iter().map(|k| k as f64 * bin_hz).collect())
}

/// Relative displacement of the envelope peak nearest each reference formant.
pub fn formant_displacement(w: &Waveform, formants_hz: &[f64]) -> Result<Vec<f64>, SpectralError> {
    let peaks = envelope_peaks_hz(w)?;
    Ok(formants_hz
        .iter()
        .map(|&f| {
            peaks
                .iter()
                .map(|&p| (p - f).abs() / f)
                .fold(f64::INFINITY, f64::min)
        })
        .collect())
}
