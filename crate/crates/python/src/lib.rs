//! Python bindings. Waveforms cross the boundary as lists of floats.

use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use voxmask_core::eval::{self, AttributePredictor};
use voxmask_core::{audio, gan, pitch, spectral, vae};

fn err<E: std::fmt::Display>(e: E) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

/// Mono waveform in [-1, 1].
#[pyclass(name = "Waveform", module = "voxmask", skip_from_py_object)]
#[derive(Clone)]
pub struct PyWaveform(pub audio::Waveform);

#[pymethods]
impl PyWaveform {
    #[new]
    #[pyo3(signature = (samples, sample_rate_hz = audio::CANONICAL_RATE_HZ))]
    fn new(samples: Vec<f32>, sample_rate_hz: u32) -> PyResult<Self> {
        audio::Waveform::new(samples, sample_rate_hz).map(Self).map_err(|e| PyValueError::new_err(e.to_string()))
    }
    #[staticmethod]
    fn read(path: PathBuf) -> PyResult<Self> {
        audio::read_wav(path).map(Self).map_err(err)
    }
    fn write(&self, path: PathBuf) -> PyResult<()> {
        audio::write_wav(&self.0, path).map_err(err)
    }
    #[getter]
    fn samples(&self) -> Vec<f32> {
        self.0.samples().to_vec()
    }
    #[getter]
    fn sample_rate_hz(&self) -> u32 {
        self.0.sample_rate_hz()
    }
    fn __len__(&self) -> usize {
        self.0.len()
    }
    fn add_noise(&self, std: f64, seed: u64) -> PyResult<Self> {
        audio::add_gaussian_noise(&self.0, std, seed).map(Self).map_err(err)
    }
    fn resample(&self, rate_hz: u32) -> PyResult<Self> {
        audio::resample(&self.0, rate_hz).map(Self).map_err(err)
    }
    fn __repr__(&self) -> String {
        format!("Waveform(len={}, sample_rate_hz={})", self.0.len(), self.0.sample_rate_hz())
    }
}

/// Log-magnitude spectrogram, frame-major.
#[pyclass(name = "Spectrogram", module = "voxmask")]
pub struct PySpectrogram(pub spectral::Spectrogram);

#[pymethods]
impl PySpectrogram {
    #[getter]
    fn n_frames(&self) -> usize {
        self.0.n_frames()
    }
    #[getter]
    fn n_bins(&self) -> usize {
        self.0.n_bins()
    }
    /// Values as a list of frames.
    fn frames(&self) -> Vec<Vec<f64>> {
        (0..self.0.n_frames()).map(|t| self.0.frame(t).to_vec()).collect()
    }
    /// Griffin-Lim reconstruction.
    #[pyo3(signature = (iters = spectral::DEFAULT_GRIFFIN_LIM_ITERS, seed = 0))]
    fn invert(&self, iters: usize, seed: u64) -> PyResult<PyWaveform> {
        spectral::griffin_lim(&self.0.exponentiate(), iters, seed).map(PyWaveform).map_err(err)
    }
}

#[pyfunction]
#[pyo3(signature = (w, frame_len = spectral::DEFAULT_FRAME_LEN, hop = spectral::DEFAULT_HOP))]
fn log_spectrogram(w: &PyWaveform, frame_len: usize, hop: usize) -> PyResult<PySpectrogram> {
    let cs = spectral::stft(&w.0, frame_len, hop).map_err(err)?;
    spectral::log_magnitude(&cs, spectral::DEFAULT_LOG_FLOOR).map(PySpectrogram).map_err(err)
}

/// STFT followed by ISTFT.
#[pyfunction]
#[pyo3(signature = (w, frame_len = spectral::DEFAULT_FRAME_LEN, hop = spectral::DEFAULT_HOP))]
fn stft_roundtrip(w: &PyWaveform, frame_len: usize, hop: usize) -> PyResult<PyWaveform> {
    let cs = spectral::stft(&w.0, frame_len, hop).map_err(err)?;
    spectral::istft(&cs).map(PyWaveform).map_err(err)
}

/// Per-frame F0 in Hz; unvoiced frames are -1.
#[pyfunction]
#[pyo3(signature = (w, fmin = pitch::DEFAULT_FMIN_HZ, fmax = pitch::DEFAULT_FMAX_HZ))]
fn estimate_f0(w: &PyWaveform, fmin: f64, fmax: f64) -> PyResult<Vec<f64>> {
    pitch::estimate_f0_track(&w.0, fmin, fmax).map(|t| t.f0_hz().to_vec()).map_err(err)
}

/// Returns (waveform, source_f0_hz or None, semitones).
#[pyfunction]
#[pyo3(signature = (w, ref_f0 = pitch::DEFAULT_REF_F0_HZ))]
fn standardize_pitch(w: &PyWaveform, ref_f0: f64) -> PyResult<(PyWaveform, Option<f64>, f64)> {
    let s = pitch::standardize_pitch(&w.0, ref_f0).map_err(err)?;
    Ok((PyWaveform(s.waveform), s.source_f0_hz, s.semitones))
}

#[pyfunction]
fn pitch_shift(w: &PyWaveform, semitones: f64) -> PyResult<PyWaveform> {
    pitch::pitch_shift_preserve_formants(&w.0, semitones).map(PyWaveform).map_err(err)
}

#[pyclass(name = "VaeModel", module = "voxmask")]
pub struct PyVae(vae::VaeModel);

#[pymethods]
impl PyVae {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        vae::VaeModel::load(&path).map(Self).map_err(err)
    }
    #[getter]
    fn classes(&self) -> Vec<String> {
        self.0.classes().to_vec()
    }
    /// `target` is "neutral" or a class name.
    #[pyo3(signature = (w, target = "neutral", seed = 0))]
    fn encrypt(&self, w: &PyWaveform, target: &str, seed: u64) -> PyResult<PyWaveform> {
        let t: vae::VaeTarget = target.parse().unwrap_or_else(|e| match e {});
        vae::encrypt_vae(&self.0, &w.0, &t, seed).map(PyWaveform).map_err(err)
    }
}

#[pyclass(name = "GanModel", module = "voxmask")]
pub struct PyGan(gan::GanModel);

#[pymethods]
impl PyGan {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        gan::GanModel::load(&path).map(Self).map_err(err)
    }
    #[getter]
    fn classes(&self) -> Vec<String> {
        self.0.classes().to_vec()
    }
    /// `target` is "random" or a class name; `source` is needed for "random".
    #[pyo3(signature = (w, target, source = None, seed = 0))]
    fn encrypt(&self, w: &PyWaveform, target: &str, source: Option<&str>, seed: u64) -> PyResult<PyWaveform> {
        let t: gan::GanTarget = target.parse().unwrap_or_else(|e| match e {});
        gan::encrypt_gan(&self.0, &w.0, &t, source, seed).map(PyWaveform).map_err(err)
    }
}

#[pyclass(name = "AttributeClassifier", module = "voxmask")]
pub struct PyClassifier(eval::AttributeClassifier);

#[pymethods]
impl PyClassifier {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        eval::AttributeClassifier::load(&path).map(Self).map_err(err)
    }
    #[getter]
    fn classes(&self) -> Vec<String> {
        self.0.classes().to_vec()
    }
    /// Predicted class name.
    fn predict(&self, w: &PyWaveform) -> PyResult<String> {
        let k = self.0.predict(&w.0).map_err(err)?;
        Ok(self.0.classes()[k].clone())
    }
}

#[pyfunction]
fn cer(reference: &str, hypothesis: &str) -> PyResult<f64> {
    eval::cer(reference, hypothesis).map_err(|e| PyValueError::new_err(e.to_string()))
}

#[pyfunction]
fn wer(reference: &str, hypothesis: &str) -> PyResult<f64> {
    eval::wer(reference, hypothesis).map_err(|e| PyValueError::new_err(e.to_string()))
}

/// Runs the command line in-process; returns (exit code, stdout, stderr).
#[pyfunction]
fn run_cli(args: Vec<String>) -> (i32, String, String) {
    let (mut out, mut errs) = (Vec::new(), Vec::new());
    let argv = std::iter::once("voxmask".to_string()).chain(args);
    let code = voxmask_core::cli::run(argv, &mut out, &mut errs);
    (code, String::from_utf8_lossy(&out).into_owned(), String::from_utf8_lossy(&errs).into_owned())
}

#[pymodule]
fn voxmask(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyWaveform>()?;
    m.add_class::<PySpectrogram>()?;
    m.add_class::<PyVae>()?;
    m.add_class::<PyGan>()?;
    m.add_class::<PyClassifier>()?;
    m.add_function(wrap_pyfunction!(log_spectrogram, m)?)?;
    m.add_function(wrap_pyfunction!(stft_roundtrip, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_f0, m)?)?;
    m.add_function(wrap_pyfunction!(standardize_pitch, m)?)?;
    m.add_function(wrap_pyfunction!(pitch_shift, m)?)?;
    m.add_function(wrap_pyfunction!(cer, m)?)?;
    m.add_function(wrap_pyfunction!(wer, m)?)?;
    m.add_function(wrap_pyfunction!(run_cli, m)?)?;
    Ok(())
}
