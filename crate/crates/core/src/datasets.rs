//! Manifests, speaker-disjoint splits and the synthetic vowel corpus.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::{read_wav, write_wav, AudioError, CANONICAL_RATE_HZ};
use crate::seed;
use crate::Waveform;

pub const MANIFEST_HEADER: [&str; 6] = ["utt_id", "audio_path", "speaker_id", "gender", "accent", "transcript"];
pub const MANIFEST_FILE: &str = "manifest.tsv";
pub const MALE_F0_RANGE: (f64, f64) = (100.0, 140.0);
pub const FEMALE_F0_RANGE: (f64, f64) = (200.0, 240.0);
const JITTER: f64 = 0.02;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: expected 6 tab-separated columns, found {found}")]
    Columns { line: usize, found: usize },
    #[error("manifest header must be `{}`", MANIFEST_HEADER.join("\t"))]
    Header,
    #[error("duplicate utterance id `{0}`")]
    DuplicateId(String),
    #[error("line {line}: unknown gender `{token}` (expected one of M, F)")]
    UnknownGender { line: usize, token: String },
    #[error("gender class {class}: {have} speakers, need at least {need}")]
    InsufficientSpeakers { class: Gender, have: usize, need: usize },
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error("utterance `{utt}`: {source}")]
    Audio {
        utt: String,
        #[source]
        source: AudioError,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Gender {
    M,
    F,
}

impl Gender {
    pub const ALL: [Gender; 2] = [Gender::M, Gender::F];

    pub fn index(self) -> usize {
        match self {
            Gender::M => 0,
            Gender::F => 1,
        }
    }
}

impl fmt::Display for Gender {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Gender::M => "M",
            Gender::F => "F",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub utt_id: String,
    pub audio_path: PathBuf,
    pub speaker_id: String,
    pub gender: Gender,
    pub accent: String,
    pub transcript: String,
}

/// An entry together with its audio.
#[derive(Clone, Debug, PartialEq)]
pub struct Utterance {
    pub entry: ManifestEntry,
    pub waveform: Waveform,
}

/// Which attribute a classifier or conditional model targets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum LabelKind {
    Speaker,
    Gender,
    Accent,
}

impl LabelKind {
    fn raw(self, e: &ManifestEntry) -> String {
        match self {
            LabelKind::Speaker => e.speaker_id.clone(),
            LabelKind::Gender => e.gender.to_string(),
            LabelKind::Accent => e.accent.clone(),
        }
    }

    /// Sorted class names present in `entries`. Gender always lists M, F.
    pub fn classes(self, entries: &[ManifestEntry]) -> Vec<String> {
        if self == LabelKind::Gender {
            return Gender::ALL.iter().map(ToString::to_string).collect();
        }
        entries.iter().map(|e| self.raw(e)).collect::<BTreeSet<_>>().into_iter().collect()
    }

    pub fn label(self, e: &ManifestEntry, classes: &[String]) -> Result<usize, DatasetError> {
        let raw = self.raw(e);
        classes
            .iter()
            .position(|c| *c == raw)
            .ok_or_else(|| DatasetError::Invalid(format!("{} class `{raw}` not in {classes:?}", self.name())))
    }

    pub fn name(self) -> &'static str {
        match self {
            LabelKind::Speaker => "speaker",
            LabelKind::Gender => "gender",
            LabelKind::Accent => "accent",
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io { path: path.display().to_string(), source }
}

/// Parses a manifest. Relative audio paths resolve against the manifest's directory.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>, DatasetError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let base = path.parent().unwrap_or(Path::new(""));
    parse_manifest(&text, base)
}

pub fn parse_manifest(text: &str, base: &Path) -> Result<Vec<ManifestEntry>, DatasetError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim_end_matches('\r').split('\t').eq(MANIFEST_HEADER) => {}
        _ => return Err(DatasetError::Header),
    }
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (i, raw) in lines {
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 6 {
            return Err(DatasetError::Columns { line: i + 1, found: cols.len() });
        }
        let gender = match cols[3] {
            "M" => Gender::M,
            "F" => Gender::F,
            other => return Err(DatasetError::UnknownGender { line: i + 1, token: other.to_string() }),
        };
        if !seen.insert(cols[0].to_string()) {
            return Err(DatasetError::DuplicateId(cols[0].to_string()));
        }
        let audio = PathBuf::from(cols[1]);
        out.push(ManifestEntry {
            utt_id: cols[0].to_string(),
            audio_path: if audio.is_absolute() { audio } else { base.join(audio) },
            speaker_id: cols[2].to_string(),
            gender,
            accent: cols[4].to_string(),
            transcript: cols[5].to_string(),
        });
    }
    Ok(out)
}

/// Writes a manifest; audio paths under `base` are stored relative to it.
pub fn write_manifest(path: impl AsRef<Path>, entries: &[ManifestEntry]) -> Result<(), DatasetError> {
    let path = path.as_ref();
    let base = path.parent().unwrap_or(Path::new(""));
    let mut text = MANIFEST_HEADER.join("\t");
    text.push('\n');
    for e in entries {
        let audio = e.audio_path.strip_prefix(base).unwrap_or(&e.audio_path);
        let fields = [&e.utt_id, &audio.display().to_string(), &e.speaker_id, &e.gender.to_string(), &e.accent, &e.transcript];
        if fields.iter().any(|f| f.contains('\t') || f.contains('\n')) {
            return Err(DatasetError::Invalid(format!("utterance `{}` has a tab or newline in a field", e.utt_id)));
        }
        text.push_str(&fields.map(String::as_str).join("\t"));
        text.push('\n');
    }
    std::fs::write(path, text).map_err(io_err(path))
}

/// Speaker-disjoint split: `holdout_per_class` speakers of each gender go to
/// the test side. Speakers are shuffled with `seed` before the cut.
pub fn split_speakers(
    entries: &[ManifestEntry],
    holdout_per_class: usize,
    seed: u64,
) -> Result<(Vec<ManifestEntry>, Vec<ManifestEntry>), DatasetError> {
    let mut by_class: BTreeMap<Gender, BTreeSet<&str>> = BTreeMap::new();
    for e in entries {
        by_class.entry(e.gender).or_default().insert(&e.speaker_id);
    }
    let mut test_speakers = HashSet::new();
    for class in Gender::ALL {
        let speakers: Vec<&str> = by_class.get(&class).map(|s| s.iter().copied().collect()).unwrap_or_default();
        if speakers.len() <= holdout_per_class {
            return Err(DatasetError::InsufficientSpeakers { class, have: speakers.len(), need: holdout_per_class + 1 });
        }
        let mut shuffled = speakers;
        shuffled.shuffle(&mut seed::derived_rng(seed, "split-speakers", class.index() as u64));
        test_speakers.extend(shuffled.into_iter().take(holdout_per_class));
    }
    Ok(entries.iter().cloned().partition(|e| !test_speakers.contains(e.speaker_id.as_str())))
}

/// Reads every entry's audio, in manifest order.
pub fn load_audio(entries: &[ManifestEntry]) -> Result<Vec<Utterance>, DatasetError> {
    entries
        .par_iter()
        .map(|e| {
            let waveform = read_wav(&e.audio_path).map_err(|source| DatasetError::Audio { utt: e.utt_id.clone(), source })?;
            Ok(Utterance { entry: e.clone(), waveform })
        })
        .collect()
}

/// Impulse train at `f0_hz` (each period jittered by up to ±2%) through
/// cascaded two-pole resonators at `formants_hz`, peak-normalized to 0.5.
pub fn synth_utterance(f0_hz: f64, formants_hz: &[f64], duration_s: f64, seed: u64) -> Result<Waveform, DatasetError> {
    let rate = f64::from(CANONICAL_RATE_HZ);
    if !(50.0..=500.0).contains(&f0_hz) {
        return Err(DatasetError::Invalid(format!("f0 {f0_hz} Hz outside [50, 500]")));
    }
    if !(duration_s > 0.0 && duration_s <= 10.0) {
        return Err(DatasetError::Invalid(format!("duration {duration_s} s outside (0, 10]")));
    }
    if let Some(f) = formants_hz.iter().find(|&&f| !(f > 0.0 && f < rate / 2.0)) {
        return Err(DatasetError::Invalid(format!("formant {f} Hz outside (0, {})", rate / 2.0)));
    }
    let n = (duration_s * rate).round().max(1.0) as usize;
    let mut rng = seed::derived_rng(seed, "synth-utterance", 0);
    let mut x = vec![0.0f64; n];
    let mut pos = 0.0f64;
    while pos < n as f64 {
        // Two-tap fractional impulse keeps sub-sample period jitter.
        let i = pos.floor() as usize;
        let frac = pos - i as f64;
        x[i] += 1.0 - frac;
        if i + 1 < n {
            x[i + 1] += frac;
        }
        let period = rate / (f0_hz * (1.0 + rng.random_range(-JITTER..=JITTER)));
        pos += period;
    }
    for &f in formants_hz {
        resonate(&mut x, f, formant_bandwidth(f), rate);
    }
    let peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let gain = if peak > 0.0 { 0.5 / peak } else { 0.0 };
    Ok(Waveform::new(x.iter().map(|v| (v * gain) as f32).collect(), CANONICAL_RATE_HZ)?)
}

fn formant_bandwidth(f: f64) -> f64 {
    50.0 + 0.1 * f
}

fn resonate(x: &mut [f64], f: f64, bw: f64, rate: f64) {
    let r = (-std::f64::consts::PI * bw / rate).exp();
    let a1 = 2.0 * r * (2.0 * std::f64::consts::PI * f / rate).cos();
    let a2 = -r * r;
    let (mut y1, mut y2) = (0.0, 0.0);
    for v in x.iter_mut() {
        let y = *v + a1 * y1 + a2 * y2;
        y2 = y1;
        y1 = y;
        *v = y;
    }
}

impl From<AudioError> for DatasetError {
    fn from(source: AudioError) -> Self {
        DatasetError::Audio { utt: String::new(), source }
    }
}

/// Vowel inventory: (symbol, F1, F2, F3).
const VOWELS: [(&str, [f64; 3]); 5] = [
    ("a", [730.0, 1090.0, 2440.0]),
    ("e", [530.0, 1840.0, 2480.0]),
    ("i", [300.0, 2250.0, 3000.0]),
    ("o", [570.0, 840.0, 2410.0]),
    ("u", [320.0, 870.0, 2240.0]),
];

/// Per-accent multipliers on (F1, F2, F3). Cycled for more than four classes.
const ACCENT_TEMPLATES: [[f64; 3]; 4] = [[1.0, 1.0, 1.0], [1.12, 0.9, 1.0], [0.9, 1.12, 1.06], [1.05, 1.05, 0.9]];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_speakers_per_gender: usize,
    pub utts_per_speaker: usize,
    pub accent_classes: usize,
    pub syllables_per_utt: usize,
    pub syllable_s: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self { n_speakers_per_gender: 8, utts_per_speaker: 6, accent_classes: 2, syllables_per_utt: 3, syllable_s: 0.25, seed: 0 }
    }
}

/// Formant set for one vowel spoken with a given accent and speaker scale.
pub fn accent_formants(vowel: usize, accent: usize, speaker_scale: f64) -> Vec<f64> {
    let (_, base) = VOWELS[vowel % VOWELS.len()];
    let tpl = ACCENT_TEMPLATES[accent % ACCENT_TEMPLATES.len()];
    base.iter().zip(tpl).map(|(f, t)| f * t * speaker_scale).collect()
}

#[derive(Clone)]
struct SpeakerSpec {
    id: String,
    gender: Gender,
    accent: usize,
    f0: f64,
    formant_scale: f64,
}

fn speakers(cfg: &SynthConfig) -> Vec<SpeakerSpec> {
    let mut out = Vec::new();
    for gender in Gender::ALL {
        let (lo, hi) = match gender {
            Gender::M => MALE_F0_RANGE,
            Gender::F => FEMALE_F0_RANGE,
        };
        for s in 0..cfg.n_speakers_per_gender {
            let index = (gender.index() * cfg.n_speakers_per_gender + s) as u64;
            let mut rng = seed::derived_rng(cfg.seed, "synth-speaker", index);
            // Leave room for per-utterance drift inside the class range.
            let f0 = rng.random_range(lo * 1.03..=hi / 1.03);
            let formant_scale = rng.random_range(0.96..=1.04);
            let prefix = match gender {
                Gender::M => "m",
                Gender::F => "f",
            };
            out.push(SpeakerSpec {
                id: format!("{prefix}{s:02}"),
                gender,
                accent: s % cfg.accent_classes,
                f0,
                formant_scale,
            });
        }
    }
    out
}

fn validate_synth(cfg: &SynthConfig) -> Result<(), DatasetError> {
    if cfg.n_speakers_per_gender == 0 || cfg.utts_per_speaker == 0 || cfg.accent_classes == 0 || cfg.syllables_per_utt == 0 {
        return Err(DatasetError::Invalid("corpus counts must be >= 1".into()));
    }
    if !(cfg.syllable_s >= 0.05 && cfg.syllable_s * cfg.syllables_per_utt as f64 <= 10.0) {
        return Err(DatasetError::Invalid(format!("syllable length {} s out of range", cfg.syllable_s)));
    }
    Ok(())
}

/// Generates the corpus in memory. Audio paths are `wav/<utt_id>.wav`
/// relative to wherever the corpus is later written.
pub fn synth_corpus_in_memory(cfg: &SynthConfig) -> Result<Vec<Utterance>, DatasetError> {
    validate_synth(cfg)?;
    let jobs: Vec<(SpeakerSpec, usize)> =
        speakers(cfg).into_iter().flat_map(|s| (0..cfg.utts_per_speaker).map(move |u| (s.clone(), u))).collect();
    jobs.par_iter()
        .enumerate()
        .map(|(index, (spk, u))| {
            let utt_id = format!("{}_{u:03}", spk.id);
            let mut rng = seed::derived_rng(cfg.seed, "synth-utt", index as u64);
            let f0 = spk.f0 * (1.0 + rng.random_range(-0.02..=0.02));
            let mut words = Vec::new();
            let mut samples: Vec<f32> = Vec::new();
            let fade = (0.01 * f64::from(CANONICAL_RATE_HZ)) as usize;
            for syl in 0..cfg.syllables_per_utt {
                let v = rng.random_range(0..VOWELS.len());
                words.push(VOWELS[v].0);
                let formants = accent_formants(v, spk.accent, spk.formant_scale);
                let seg_seed = seed::derive(cfg.seed, "synth-syllable", (index * 64 + syl) as u64);
                let seg = synth_utterance(f0, &formants, cfg.syllable_s, seg_seed)?;
                append_crossfaded(&mut samples, seg.samples(), fade);
            }
            let entry = ManifestEntry {
                audio_path: PathBuf::from("wav").join(format!("{utt_id}.wav")),
                utt_id,
                speaker_id: spk.id.clone(),
                gender: spk.gender,
                accent: format!("acc{}", spk.accent),
                transcript: words.join(" "),
            };
            Ok(Utterance { entry, waveform: Waveform::clipped(samples, CANONICAL_RATE_HZ)? })
        })
        .collect()
}

fn append_crossfaded(out: &mut Vec<f32>, seg: &[f32], fade: usize) {
    let fade = fade.min(seg.len()).min(out.len());
    let start = out.len() - fade;
    for i in 0..fade {
        let a = (i as f32 + 0.5) / fade as f32;
        out[start + i] = out[start + i] * (1.0 - a) + seg[i] * a;
    }
    out.extend_from_slice(&seg[fade..]);
}

/// Generates the corpus under `out_dir`: `wav/*.wav` plus `manifest.tsv`.
pub fn synth_corpus(cfg: &SynthConfig, out_dir: impl AsRef<Path>) -> Result<Vec<ManifestEntry>, DatasetError> {
    let out_dir = out_dir.as_ref();
    let wav_dir = out_dir.join("wav");
    std::fs::create_dir_all(&wav_dir).map_err(io_err(&wav_dir))?;
    let corpus = synth_corpus_in_memory(cfg)?;
    let entries: Vec<ManifestEntry> = corpus
        .par_iter()
        .map(|Utterance { entry: e, waveform: w }| {
            let path = out_dir.join(&e.audio_path);
            write_wav(w, &path).map_err(|source| DatasetError::Audio { utt: e.utt_id.clone(), source })?;
            Ok(ManifestEntry { audio_path: path, ..e.clone() })
        })
        .collect::<Result<_, DatasetError>>()?;
    write_manifest(out_dir.join(MANIFEST_FILE), &entries)?;
    Ok(entries)
}
