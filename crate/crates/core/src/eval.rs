//! Adversary classifier, transcript scoring and the privacy/fidelity harness.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::{add_gaussian_noise, AudioError};
use crate::autodiff::{argmax, AdamConfig, Graph, ParamId, ParamStore, Parameterized, Tensor, TensorError, Var};
use crate::datasets::{LabelKind, ManifestEntry, Utterance};
use crate::features::MelConfig;
use crate::seed;
use crate::spectral::SpectralError;
use crate::Waveform;

/// Method name whose rows are never finetuned (clean audio).
pub const NO_MASKING: &str = "none";
const PUNCTUATION: &[char] = &['.', ',', '?', '!', ';', ':', '"'];

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("empty {0}")]
    Empty(&'static str),
    #[error("need at least 2 classes in training data, found {0}")]
    SingleClass(usize),
    #[error("cannot pick {n} finetune speakers evenly: {detail}")]
    ClassImbalance { n: usize, detail: String },
    #[error("reference transcript is empty after normalization")]
    EmptyReference,
    #[error("duplicate hypothesis id `{0}`")]
    DuplicateHypothesis(String),
    #[error("line {0}: expected `utt_id<TAB>hypothesis`")]
    MalformedLine(usize),
    #[error("noise stds must start at 0.0 and be non-decreasing, got {0:?}")]
    BadStds(Vec<f64>),
    #[error("method `{0}` has no encrypted data")]
    MissingMethodData(String),
    #[error("{0}")]
    Invalid(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error(transparent)]
    Dataset(#[from] crate::datasets::DatasetError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierConfig {
    pub channels: [usize; 4],
    pub hidden: usize,
    pub crop_frames: usize,
    pub epochs: usize,
    pub finetune_epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub finetune_lr: f64,
    pub mel: MelConfig,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            channels: [8, 16, 16, 16],
            hidden: 16,
            crop_frames: 40,
            epochs: 25,
            finetune_epochs: 30,
            batch_size: 8,
            lr: 3e-3,
            finetune_lr: 3e-3,
            mel: MelConfig::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage {
    Pretrained,
    Finetuned(usize),
}

/// Anything that maps audio to a class index for a label kind.
pub trait AttributePredictor: Sync {
    fn label_kind(&self) -> LabelKind;
    fn classes(&self) -> &[String];
    fn predict(&self, w: &Waveform) -> Result<usize, EvalError>;
}

#[derive(Serialize, Deserialize)]
struct ClassifierMeta {
    config: ClassifierConfig,
    label_kind: LabelKind,
    classes: Vec<String>,
    feat_mean: f64,
    feat_std: f64,
    stage: Stage,
}

/// Four conv blocks (3x3 conv, leaky ReLU, 2x2 average pool) over log-mel,
/// global average pooling, then linear, ReLU, linear to class logits.
#[derive(Clone)]
pub struct AttributeClassifier {
    params: ParamStore,
    ids: Vec<ParamId>,
    config: ClassifierConfig,
    label_kind: LabelKind,
    classes: Vec<String>,
    feat_mean: f64,
    feat_std: f64,
    stage: Stage,
}

impl Parameterized for AttributeClassifier {
    fn params(&self) -> &ParamStore {
        &self.params
    }
    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }
}

/// Log-mel frames of one utterance, already normalized.
struct Feats {
    values: Vec<f64>,
    n_frames: usize,
}

const PARAM_NAMES: [&str; 12] =
    ["conv0.w", "conv0.b", "conv1.w", "conv1.b", "conv2.w", "conv2.b", "conv3.w", "conv3.b", "fc1.w", "fc1.b", "fc2.w", "fc2.b"];

impl AttributeClassifier {
    fn init(config: ClassifierConfig, label_kind: LabelKind, classes: Vec<String>, seed: u64) -> Result<Self, TensorError> {
        let mut rng = seed::derived_rng(seed, "classifier-init", 0);
        let mut params = ParamStore::new();
        let mut c_in = 1;
        for (i, &c) in config.channels.iter().enumerate() {
            params.kaiming(&format!("conv{i}.w"), &[c, c_in, 3, 3], c_in * 9, &mut rng)?;
            params.zeros(&format!("conv{i}.b"), &[c])?;
            c_in = c;
        }
        params.kaiming("fc1.w", &[config.hidden, c_in], c_in, &mut rng)?;
        params.zeros("fc1.b", &[config.hidden])?;
        params.kaiming("fc2.w", &[classes.len(), config.hidden], config.hidden, &mut rng)?;
        params.zeros("fc2.b", &[classes.len()])?;
        let ids = PARAM_NAMES.iter().map(|n| params.id(n)).collect::<Result<_, _>>()?;
        Ok(Self { params, ids, config, label_kind, classes, feat_mean: 0.0, feat_std: 1.0, stage: Stage::Pretrained })
    }

    pub fn stage(&self) -> Stage {
        self.stage
    }

    pub fn config(&self) -> &ClassifierConfig {
        &self.config
    }

    fn logits(&self, g: &mut Graph, x: Var) -> Result<Var, TensorError> {
        let p = |g: &mut Graph, i: usize| g.param(&self.params, self.ids[i]);
        let mut h = x;
        for block in 0..4 {
            let (w, b) = (p(g, 2 * block), p(g, 2 * block + 1));
            let c = g.conv2d(h, w, b)?;
            let a = g.leaky_relu(c, 0.1)?;
            h = g.avg_pool2d(a)?;
        }
        let pooled = g.mean_trailing(h, 2)?;
        let (w1, b1, w2, b2) = (p(g, 8), p(g, 9), p(g, 10), p(g, 11));
        let hid = g.linear(pooled, w1, b1)?;
        let hid = g.relu(hid)?;
        g.linear(hid, w2, b2)
    }

    fn raw_features(&self, w: &Waveform) -> Result<Feats, EvalError> {
        let s = self.config.mel.analyze(w)?;
        Ok(Feats { n_frames: s.n_frames(), values: s.into_values() })
    }

    fn normalize(&self, mut f: Feats) -> Feats {
        f.values.iter_mut().for_each(|v| *v = (*v - self.feat_mean) / self.feat_std);
        f
    }

    /// `crop_frames` frames starting at `offset`, wrapping short inputs.
    fn crop(&self, f: &Feats, offset: usize, out: &mut Vec<f64>) {
        let m = self.config.mel.n_mels;
        for t in 0..self.config.crop_frames {
            let src = (offset + t) % f.n_frames;
            out.extend_from_slice(&f.values[src * m..(src + 1) * m]);
        }
    }

    fn centre_offset(&self, f: &Feats) -> usize {
        f.n_frames.saturating_sub(self.config.crop_frames) / 2
    }

    pub fn predict_logits(&self, w: &Waveform) -> Result<Vec<f64>, EvalError> {
        let f = self.normalize(self.raw_features(w)?);
        let mut x = Vec::new();
        self.crop(&f, self.centre_offset(&f), &mut x);
        let mut g = Graph::new();
        let input = g.input(Tensor::new(vec![1, 1, self.config.crop_frames, self.config.mel.n_mels], x)?);
        let out = self.logits(&mut g, input)?;
        Ok(g.value(out).data().to_vec())
    }

    fn fit(&mut self, data: &[(Feats, usize)], epochs: usize, lr: f64, seed: u64) -> Result<(), EvalError> {
        let cfg = AdamConfig { lr, ..AdamConfig::default() };
        let (t, m) = (self.config.crop_frames, self.config.mel.n_mels);
        let mut order: Vec<usize> = (0..data.len()).collect();
        self.params.reset_optimizer();
        for epoch in 0..epochs {
            let mut rng = seed::derived_rng(seed, "classifier-epoch", epoch as u64);
            order.shuffle(&mut rng);
            for batch in order.chunks(self.config.batch_size.max(1)) {
                let mut x = Vec::with_capacity(batch.len() * t * m);
                let mut labels = Vec::with_capacity(batch.len());
                for &i in batch {
                    let (f, y) = &data[i];
                    let offset = rng.random_range(0..=f.n_frames.saturating_sub(t));
                    self.crop(f, offset, &mut x);
                    labels.push(*y);
                }
                let mut g = Graph::new();
                let input = g.input(Tensor::new(vec![batch.len(), 1, t, m], x)?);
                let logits = self.logits(&mut g, input)?;
                let loss = g.cross_entropy(logits, &labels)?;
                g.backward(loss)?;
                self.params.zero_grad();
                self.params.accumulate_grads(&g);
                self.params.adam_step(&cfg)?;
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), EvalError> {
        let meta = ClassifierMeta {
            config: self.config.clone(),
            label_kind: self.label_kind,
            classes: self.classes.clone(),
            feat_mean: self.feat_mean,
            feat_std: self.feat_std,
            stage: self.stage,
        };
        let json = serde_json::to_string(&meta).map_err(|e| EvalError::Invalid(e.to_string()))?;
        Ok(self.params.save(path, &json)?)
    }

    pub fn load(path: &Path) -> Result<Self, EvalError> {
        let (params, json) = ParamStore::load(path)?;
        let meta: ClassifierMeta =
            serde_json::from_str(&json).map_err(|e| EvalError::Invalid(format!("classifier metadata: {e}")))?;
        let mut c = Self::init(meta.config, meta.label_kind, meta.classes, 0)?;
        c.params.load_values_from(&params)?;
        c.feat_mean = meta.feat_mean;
        c.feat_std = meta.feat_std;
        c.stage = meta.stage;
        Ok(c)
    }
}

impl AttributePredictor for AttributeClassifier {
    fn label_kind(&self) -> LabelKind {
        self.label_kind
    }
    fn classes(&self) -> &[String] {
        &self.classes
    }
    fn predict(&self, w: &Waveform) -> Result<usize, EvalError> {
        Ok(argmax(&self.predict_logits(w)?))
    }
}

fn labels_of(utts: &[Utterance], kind: LabelKind, classes: &[String]) -> Result<Vec<usize>, EvalError> {
    utts.iter().map(|u| Ok(kind.label(&u.entry, classes)?)).collect()
}

/// Trains a fresh classifier on clean labelled audio.
pub fn pretrain_classifier(
    train: &[Utterance],
    label_kind: LabelKind,
    config: &ClassifierConfig,
    seed: u64,
) -> Result<AttributeClassifier, EvalError> {
    let entries: Vec<ManifestEntry> = train.iter().map(|u| u.entry.clone()).collect();
    let classes = label_kind.classes(&entries);
    let labels = labels_of(train, label_kind, &classes)?;
    pretrain_with_labels(train, &labels, label_kind, classes, config, seed)
}

pub(crate) fn pretrain_with_labels(
    train: &[Utterance],
    labels: &[usize],
    label_kind: LabelKind,
    classes: Vec<String>,
    config: &ClassifierConfig,
    seed: u64,
) -> Result<AttributeClassifier, EvalError> {
    if train.is_empty() {
        return Err(EvalError::Empty("training set"));
    }
    let present: BTreeSet<usize> = labels.iter().copied().collect();
    if present.len() < 2 {
        return Err(EvalError::SingleClass(present.len()));
    }
    let mut c = AttributeClassifier::init(config.clone(), label_kind, classes, seed)?;
    let feats: Vec<Feats> = train.par_iter().map(|u| c.raw_features(&u.waveform)).collect::<Result<_, _>>()?;
    let n: usize = feats.iter().map(|f| f.values.len()).sum();
    let mean = feats.iter().flat_map(|f| &f.values).sum::<f64>() / n as f64;
    let var = feats.iter().flat_map(|f| &f.values).map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    c.feat_mean = mean;
    c.feat_std = var.sqrt().max(1e-6);
    let data: Vec<(Feats, usize)> = feats.into_iter().map(|f| c.normalize(f)).zip(labels.iter().copied()).collect();
    c.fit(&data, config.epochs, config.lr, seed)?;
    Ok(c)
}

/// Speakers used to finetune on `n` speakers: the lowest ids of each class,
/// `n / classes` per class.
pub fn finetune_speakers(pool: &[Utterance], kind: LabelKind, classes: &[String], n: usize) -> Result<Vec<String>, EvalError> {
    let k = classes.len();
    if n % k != 0 {
        return Err(EvalError::ClassImbalance { n, detail: format!("{n} is not a multiple of {k} classes") });
    }
    let mut by_class: BTreeMap<usize, BTreeSet<&str>> = BTreeMap::new();
    for u in pool {
        by_class.entry(kind.label(&u.entry, classes)?).or_default().insert(&u.entry.speaker_id);
    }
    let mut chosen = Vec::new();
    for (c, name) in classes.iter().enumerate() {
        let have: Vec<&str> = by_class.get(&c).map(|s| s.iter().copied().collect()).unwrap_or_default();
        if have.len() < n / k {
            return Err(EvalError::ClassImbalance { n, detail: format!("class `{name}` has {} speakers", have.len()) });
        }
        chosen.extend(have.into_iter().take(n / k).map(str::to_string));
    }
    Ok(chosen)
}

/// Continues training on the encrypted audio of `n` speakers. `n = 0`
/// returns the classifier unchanged.
pub fn finetune_classifier(
    c: &AttributeClassifier,
    encrypted_pool: &[Utterance],
    n: usize,
    seed: u64,
) -> Result<AttributeClassifier, EvalError> {
    if n == 0 {
        return Ok(c.clone());
    }
    let speakers = finetune_speakers(encrypted_pool, c.label_kind, &c.classes, n)?;
    let chosen: Vec<&Utterance> = encrypted_pool.iter().filter(|u| speakers.contains(&u.entry.speaker_id)).collect();
    let data: Vec<(Feats, usize)> = chosen
        .par_iter()
        .map(|u| Ok((c.normalize(c.raw_features(&u.waveform)?), c.label_kind.label(&u.entry, &c.classes)?)))
        .collect::<Result<_, EvalError>>()?;
    let mut out = c.clone();
    out.fit(&data, c.config.finetune_epochs, c.config.finetune_lr, seed::derive(seed, "finetune", n as u64))?;
    out.stage = Stage::Finetuned(n);
    Ok(out)
}

/// Per-utterance predictions in input order.
pub fn predictions<P: AttributePredictor>(c: &P, test: &[Utterance]) -> Result<Vec<usize>, EvalError> {
    test.par_iter().map(|u| c.predict(&u.waveform)).collect()
}

/// Fraction of utterances whose argmax prediction matches the label.
pub fn classification_accuracy<P: AttributePredictor>(c: &P, test: &[Utterance]) -> Result<f64, EvalError> {
    if test.is_empty() {
        return Err(EvalError::Empty("test set"));
    }
    let truth = labels_of(test, c.label_kind(), c.classes())?;
    let pred = predictions(c, test)?;
    Ok(truth.iter().zip(&pred).filter(|(a, b)| a == b).count() as f64 / test.len() as f64)
}

/// Levenshtein distance with unit costs.
pub fn edit_distance<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=hypothesis.len()).collect();
    let mut cur = vec![0; hypothesis.len() + 1];
    for (i, r) in reference.iter().enumerate() {
        cur[0] = i + 1;
        for (j, h) in hypothesis.iter().enumerate() {
            let sub = prev[j] + usize::from(r != h);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[hypothesis.len()]
}

/// Lowercase, strip `.,?!;:"`, collapse whitespace.
pub fn normalize_text(s: &str) -> String {
    let cleaned: String = s.to_lowercase().chars().filter(|c| !PUNCTUATION.contains(c)).collect();
    cleaned.split_whitespace().collect::<Vec<_>>().join(" ")
}

pub fn cer(reference: &str, hypothesis: &str) -> Result<f64, EvalError> {
    let r: Vec<char> = normalize_text(reference).chars().collect();
    if r.is_empty() {
        return Err(EvalError::EmptyReference);
    }
    let h: Vec<char> = normalize_text(hypothesis).chars().collect();
    Ok(edit_distance(&r, &h) as f64 / r.len() as f64)
}

pub fn wer(reference: &str, hypothesis: &str) -> Result<f64, EvalError> {
    let rn = normalize_text(reference);
    let r: Vec<&str> = rn.split(' ').filter(|w| !w.is_empty()).collect();
    if r.is_empty() {
        return Err(EvalError::EmptyReference);
    }
    let hn = normalize_text(hypothesis);
    let h: Vec<&str> = hn.split(' ').filter(|w| !w.is_empty()).collect();
    Ok(edit_distance(&r, &h) as f64 / r.len() as f64)
}

pub type Hypotheses = BTreeMap<String, String>;

pub fn parse_hypotheses(text: &str) -> Result<Hypotheses, EvalError> {
    let mut out = Hypotheses::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let (id, hyp) = line.split_once('\t').ok_or(EvalError::MalformedLine(i + 1))?;
        if out.insert(id.to_string(), hyp.to_string()).is_some() {
            return Err(EvalError::DuplicateHypothesis(id.to_string()));
        }
    }
    Ok(out)
}

pub fn ingest_hypotheses(path: impl AsRef<Path>) -> Result<Hypotheses, EvalError> {
    let path = path.as_ref();
    let text =
        std::fs::read_to_string(path).map_err(|source| EvalError::Io { path: path.display().to_string(), source })?;
    parse_hypotheses(&text)
}

/// Mean per-utterance CER and WER plus the number of utterances without a hypothesis.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TranscriptScore {
    pub cer: f64,
    pub wer: f64,
    pub missing: usize,
}

pub fn score_transcripts(entries: &[ManifestEntry], hyps: &Hypotheses) -> Result<TranscriptScore, EvalError> {
    if entries.is_empty() {
        return Err(EvalError::Empty("scored set"));
    }
    let (mut c, mut w, mut missing) = (0.0, 0.0, 0);
    for e in entries {
        let h = hyps.get(&e.utt_id).map(String::as_str).unwrap_or_else(|| {
            missing += 1;
            ""
        });
        c += cer(&e.transcript, h)?;
        w += wer(&e.transcript, h)?;
    }
    let n = entries.len() as f64;
    Ok(TranscriptScore { cer: c / n, wer: w / n, missing })
}

/// One metric record (one JSON line).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub method: String,
    pub n: usize,
    pub accuracy: f64,
    pub cer: Option<f64>,
    pub wer: Option<f64>,
    pub std: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UttRecord {
    pub method: String,
    pub n: usize,
    pub std: f64,
    pub utt_id: String,
    pub label: usize,
    pub predicted: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<ReportRow>,
    pub records: Vec<UttRecord>,
}

impl EvalReport {
    pub fn to_json_lines(&self) -> String {
        self.rows.iter().map(|r| serde_json::to_string(r).expect("rows serialize") + "\n").collect()
    }

    /// Recomputes the accuracy of `(method, n, std)` from the stored records.
    pub fn recomputed_accuracy(&self, method: &str, n: usize, std: f64) -> Option<f64> {
        let cell: Vec<&UttRecord> = self.records.iter().filter(|r| r.method == method && r.n == n && r.std == std).collect();
        if cell.is_empty() {
            return None;
        }
        Some(cell.iter().filter(|r| r.label == r.predicted).count() as f64 / cell.len() as f64)
    }
}

fn score_cell<P: AttributePredictor>(
    c: &P,
    test: &[Utterance],
    method: &str,
    n: usize,
    std: f64,
    report: &mut EvalReport,
) -> Result<f64, EvalError> {
    if test.is_empty() {
        return Err(EvalError::Empty("test set"));
    }
    let truth = labels_of(test, c.label_kind(), c.classes())?;
    let pred = predictions(c, test)?;
    let correct = truth.iter().zip(&pred).filter(|(a, b)| a == b).count();
    for ((u, &label), &predicted) in test.iter().zip(&truth).zip(&pred) {
        report.records.push(UttRecord { method: method.into(), n, std, utt_id: u.entry.utt_id.clone(), label, predicted });
    }
    Ok(correct as f64 / test.len() as f64)
}

/// Accuracy (and CER/WER when hypotheses are given, one map per std) under
/// increasing Gaussian noise. Noise for utterance `i` uses a seed derived
/// from `(seed, i)` so every level scales the same noise pattern.
pub fn noise_tradeoff_experiment<P: AttributePredictor>(
    c: &P,
    test: &[Utterance],
    stds: &[f64],
    seed: u64,
    hypotheses: Option<&[Hypotheses]>,
) -> Result<EvalReport, EvalError> {
    if stds.is_empty() || stds[0] != 0.0 || stds.windows(2).any(|w| !(w[1] >= w[0])) {
        return Err(EvalError::BadStds(stds.to_vec()));
    }
    if let Some(h) = hypotheses {
        if h.len() != stds.len() {
            return Err(EvalError::Invalid(format!("{} hypothesis sets for {} noise levels", h.len(), stds.len())));
        }
    }
    let entries: Vec<ManifestEntry> = test.iter().map(|u| u.entry.clone()).collect();
    let mut report = EvalReport::default();
    for (level, &std) in stds.iter().enumerate() {
        let noisy: Vec<Utterance> = test
            .par_iter()
            .enumerate()
            .map(|(i, u)| {
                let waveform = add_gaussian_noise(&u.waveform, std, seed::derive(seed, "tradeoff-noise", i as u64))?;
                Ok(Utterance { entry: u.entry.clone(), waveform })
            })
            .collect::<Result<_, EvalError>>()?;
        let accuracy = score_cell(c, &noisy, "noise", 0, std, &mut report)?;
        let score = hypotheses.map(|h| score_transcripts(&entries, &h[level])).transpose()?;
        report.rows.push(ReportRow {
            method: "noise".into(),
            n: 0,
            accuracy,
            cer: score.map(|s| s.cer),
            wer: score.map(|s| s.wer),
            std,
            seed,
        });
    }
    Ok(report)
}

/// Encrypted material for one method.
#[derive(Clone, Debug, Default)]
pub struct MethodData {
    pub name: String,
    /// Encrypted held-out speakers.
    pub test: Vec<Utterance>,
    /// Encrypted training speakers, the source of finetune data.
    pub finetune_pool: Vec<Utterance>,
    pub hypotheses: Option<Hypotheses>,
}

/// Accuracy for every `(method, n)` plus per-method CER/WER. The method
/// named [`NO_MASKING`] is never finetuned.
pub fn privacy_fidelity_report(
    pretrained: &AttributeClassifier,
    methods: &[MethodData],
    n_values: &[usize],
    seed: u64,
) -> Result<EvalReport, EvalError> {
    if n_values.is_empty() {
        return Err(EvalError::Empty("n_values"));
    }
    let mut report = EvalReport::default();
    for m in methods {
        if m.test.is_empty() {
            return Err(EvalError::MissingMethodData(m.name.clone()));
        }
        let entries: Vec<ManifestEntry> = m.test.iter().map(|u| u.entry.clone()).collect();
        let score = m.hypotheses.as_ref().map(|h| score_transcripts(&entries, h)).transpose()?;
        for &n in n_values {
            let accuracy = if m.name == NO_MASKING || n == 0 {
                score_cell(pretrained, &m.test, &m.name, n, 0.0, &mut report)?
            } else {
                let tuned = finetune_classifier(pretrained, &m.finetune_pool, n, seed)?;
                score_cell(&tuned, &m.test, &m.name, n, 0.0, &mut report)?
            };
            report.rows.push(ReportRow {
                method: m.name.clone(),
                n,
                accuracy,
                cer: score.map(|s| s.cer),
                wer: score.map(|s| s.wer),
                std: 0.0,
                seed,
            });
        }
    }
    Ok(report)
}
