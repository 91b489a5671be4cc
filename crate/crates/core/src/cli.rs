//! `voxmask` command line: corpus synthesis, training, encryption and
//! evaluation driven by one JSON config with flag overrides.

use std::collections::HashMap;
use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::audio::write_wav;
use crate::datasets::{load_audio, load_manifest, split_speakers, synth_corpus, write_manifest, LabelKind, ManifestEntry, SynthConfig, Utterance, MANIFEST_FILE};
use crate::eval::{ingest_hypotheses, noise_tradeoff_experiment, pretrain_classifier, privacy_fidelity_report, classification_accuracy, AttributeClassifier, ClassifierConfig, MethodData, NO_MASKING};
use crate::gan::{encrypt_gan, ensure_label_kind, train_gan, GanConfig, GanModel, GanTarget};
use crate::pitch::{standardize_pitch, DEFAULT_REF_F0_HZ};
use crate::seed;
use crate::vae::{encrypt_vae, train_vae, VaeConfig, VaeModel, VaeTarget};
use crate::{Error, Result};

/// Exit code for configuration and usage errors.
pub const EXIT_CONFIG: i32 = 2;
/// Exit code for failures while running.
pub const EXIT_RUNTIME: i32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Pitch,
    Vae,
    Gan,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Pitch => "pitch",
            Method::Vae => "vae",
            Method::Gan => "gan",
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "voxmask", version, about = "Client-side speech privacy transforms and their evaluation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub flags: Flags,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    /// Write a synthetic corpus (WAVs plus manifest) under `<out_dir>/corpus`.
    SynthData,
    /// Encrypt every utterance in the manifest with the chosen method.
    Encrypt,
    /// Train the disentangling VAE on the training speakers.
    TrainVae,
    /// Train the conditional GAN on top of a trained VAE.
    TrainGan,
    /// Pretrain the adversary classifier on clean training speakers.
    TrainClassifier,
    /// Accuracy for each finetune size plus CER/WER for one encrypted set.
    Evaluate,
    /// Accuracy (and CER/WER) under increasing Gaussian noise.
    Tradeoff,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::SynthData => "synth-data",
            Command::Encrypt => "encrypt",
            Command::TrainVae => "train-vae",
            Command::TrainGan => "train-gan",
            Command::TrainClassifier => "train-classifier",
            Command::Evaluate => "evaluate",
            Command::Tradeoff => "tradeoff",
        }
    }
}

/// Flags that override config keys of the same name.
#[derive(Args, Debug, Default, Clone)]
pub struct Flags {
    /// JSON config file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for utterance-parallel stages (0 = all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Metrics destination (JSON lines). Defaults to stdout.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    pub manifest: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub method: Option<Method>,
    #[arg(long, global = true, value_enum)]
    pub label_kind: Option<LabelKind>,
    #[arg(long, global = true, value_enum)]
    pub attribute: Option<LabelKind>,
    #[arg(long, global = true)]
    pub ref_f0: Option<f64>,
    #[arg(long, global = true)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, global = true)]
    pub target: Option<String>,
    #[arg(long, global = true)]
    pub classifier: Option<PathBuf>,
    #[arg(long, global = true)]
    pub hypotheses: Option<PathBuf>,
    #[arg(long, global = true)]
    pub epochs: Option<usize>,
    #[arg(long, global = true)]
    pub lr: Option<f64>,
}

impl Flags {
    fn overrides(&self) -> Map<String, Value> {
        let mut m = Map::new();
        let mut put = |k: &str, v: Option<Value>| {
            if let Some(v) = v {
                m.insert(k.to_string(), v);
            }
        };
        put("seed", self.seed.map(Value::from));
        put("jobs", self.jobs.map(Value::from));
        put("out", self.out.as_ref().map(|p| json!(p)));
        put("out_dir", self.out_dir.as_ref().map(|p| json!(p)));
        put("manifest", self.manifest.as_ref().map(|p| json!(p)));
        put("method", self.method.map(|v| json!(v)));
        put("label_kind", self.label_kind.map(|v| json!(v)));
        put("attribute", self.attribute.map(|v| json!(v)));
        put("ref_f0", self.ref_f0.map(Value::from));
        put("checkpoint", self.checkpoint.as_ref().map(|p| json!(p)));
        put("target", self.target.as_ref().map(|v| json!(v)));
        put("classifier", self.classifier.as_ref().map(|p| json!(p)));
        put("hypotheses", self.hypotheses.as_ref().map(|p| json!(p)));
        put("epochs", self.epochs.map(Value::from));
        put("lr", self.lr.map(Value::from));
        m
    }
}

/// Every knob of a run. Unset paths default to fixed names under `out_dir`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunConfig {
    pub method: Method,
    /// Label kind of the GAN; required exactly when `method` is `gan`.
    pub label_kind: Option<LabelKind>,
    /// Attribute the adversary classifier predicts.
    pub attribute: LabelKind,
    pub seed: u64,
    pub jobs: usize,
    pub out: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub manifest: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub vae_checkpoint: Option<PathBuf>,
    pub classifier: Option<PathBuf>,
    pub encrypted_manifest: Option<PathBuf>,
    pub hypotheses: Option<PathBuf>,
    /// One hypothesis file per noise level for `tradeoff`.
    pub noise_hypotheses: Vec<PathBuf>,
    pub target: Option<String>,
    pub ref_f0: f64,
    pub lambda_p: f64,
    pub lambda_dis: f64,
    pub lr: Option<f64>,
    pub epochs: Option<usize>,
    pub noise_stds: Vec<f64>,
    pub n_values: Vec<usize>,
    pub holdout_per_class: usize,
    pub n_speakers_per_gender: usize,
    pub utts_per_speaker: usize,
    pub accent_classes: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            method: Method::Pitch,
            label_kind: None,
            attribute: LabelKind::Gender,
            seed: 0,
            jobs: 0,
            out: None,
            out_dir: PathBuf::from("voxmask-out"),
            manifest: None,
            checkpoint: None,
            vae_checkpoint: None,
            classifier: None,
            encrypted_manifest: None,
            hypotheses: None,
            noise_hypotheses: Vec::new(),
            target: None,
            ref_f0: DEFAULT_REF_F0_HZ,
            lambda_p: 1.0,
            lambda_dis: 0.01,
            lr: None,
            epochs: None,
            noise_stds: vec![0.0, 0.01, 0.02, 0.03, 0.04],
            n_values: vec![0, 2],
            holdout_per_class: 2,
            n_speakers_per_gender: 8,
            utts_per_speaker: 6,
            accent_classes: 2,
        }
    }
}

impl RunConfig {
    pub fn manifest_path(&self) -> PathBuf {
        self.manifest.clone().unwrap_or_else(|| self.out_dir.join("corpus").join(MANIFEST_FILE))
    }
    pub fn vae_path(&self) -> PathBuf {
        self.vae_checkpoint.clone().unwrap_or_else(|| self.out_dir.join("vae.ckpt"))
    }
    pub fn gan_path(&self) -> PathBuf {
        self.out_dir.join("gan.ckpt")
    }
    /// Model checkpoint used by `encrypt`.
    pub fn model_path(&self) -> PathBuf {
        self.checkpoint.clone().unwrap_or_else(|| match self.method {
            Method::Gan => self.gan_path(),
            _ => self.vae_path(),
        })
    }
    pub fn classifier_path(&self) -> PathBuf {
        self.classifier.clone().unwrap_or_else(|| self.out_dir.join("classifier.ckpt"))
    }
    pub fn encrypted_dir(&self) -> PathBuf {
        self.out_dir.join("encrypted").join(self.method.name())
    }
    pub fn encrypted_manifest_path(&self) -> PathBuf {
        self.encrypted_manifest.clone().unwrap_or_else(|| self.encrypted_dir().join(MANIFEST_FILE))
    }
    fn synth(&self) -> SynthConfig {
        SynthConfig {
            n_speakers_per_gender: self.n_speakers_per_gender,
            utts_per_speaker: self.utts_per_speaker,
            accent_classes: self.accent_classes,
            seed: self.seed,
            ..SynthConfig::default()
        }
    }
}

/// All problems found in a config, each prefixed with its field name.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("invalid config:\n  {}", .0.join("\n  "))]
pub struct ConfigError(pub Vec<String>);

fn take<T: DeserializeOwned>(m: &mut Map<String, Value>, key: &str, slot: &mut T, errors: &mut Vec<String>) {
    if let Some(v) = m.remove(key) {
        match serde_json::from_value::<T>(v) {
            Ok(t) => *slot = t,
            Err(e) => errors.push(format!("{key}: {e}")),
        }
    }
}

/// Parses config text (a JSON object, or empty), applies defaults and checks
/// field-level and cross-field rules. Every violation is reported.
pub fn validate_config(raw: &str) -> std::result::Result<RunConfig, ConfigError> {
    validate_with(raw, &Map::new())
}

fn validate_with(raw: &str, overrides: &Map<String, Value>) -> std::result::Result<RunConfig, ConfigError> {
    let mut m = if raw.trim().is_empty() {
        Map::new()
    } else {
        match serde_json::from_str::<Value>(raw) {
            Ok(Value::Object(m)) => m,
            Ok(_) => return Err(ConfigError(vec!["<root>: expected a JSON object".into()])),
            Err(e) => return Err(ConfigError(vec![format!("<root>: {e}")])),
        }
    };
    m.extend(overrides.clone());
    let mut c = RunConfig::default();
    let mut errors = Vec::new();
    let e = &mut errors;
    take(&mut m, "method", &mut c.method, e);
    take(&mut m, "label_kind", &mut c.label_kind, e);
    take(&mut m, "attribute", &mut c.attribute, e);
    take(&mut m, "seed", &mut c.seed, e);
    take(&mut m, "jobs", &mut c.jobs, e);
    take(&mut m, "out", &mut c.out, e);
    take(&mut m, "out_dir", &mut c.out_dir, e);
    take(&mut m, "manifest", &mut c.manifest, e);
    take(&mut m, "checkpoint", &mut c.checkpoint, e);
    take(&mut m, "vae_checkpoint", &mut c.vae_checkpoint, e);
    take(&mut m, "classifier", &mut c.classifier, e);
    take(&mut m, "encrypted_manifest", &mut c.encrypted_manifest, e);
    take(&mut m, "hypotheses", &mut c.hypotheses, e);
    take(&mut m, "noise_hypotheses", &mut c.noise_hypotheses, e);
    take(&mut m, "target", &mut c.target, e);
    take(&mut m, "ref_f0", &mut c.ref_f0, e);
    take(&mut m, "lambda_p", &mut c.lambda_p, e);
    take(&mut m, "lambda_dis", &mut c.lambda_dis, e);
    take(&mut m, "lr", &mut c.lr, e);
    take(&mut m, "epochs", &mut c.epochs, e);
    take(&mut m, "noise_stds", &mut c.noise_stds, e);
    take(&mut m, "n_values", &mut c.n_values, e);
    take(&mut m, "holdout_per_class", &mut c.holdout_per_class, e);
    take(&mut m, "n_speakers_per_gender", &mut c.n_speakers_per_gender, e);
    take(&mut m, "utts_per_speaker", &mut c.utts_per_speaker, e);
    take(&mut m, "accent_classes", &mut c.accent_classes, e);
    for k in m.keys() {
        errors.push(format!("{k}: unknown field"));
    }

    match (c.method, c.label_kind) {
        (Method::Gan, None) => errors.push("label_kind: required when method is gan".into()),
        (Method::Pitch | Method::Vae, Some(_)) => errors.push("label_kind: only valid when method is gan".into()),
        _ => {}
    }
    if !(c.lambda_p >= 0.0 && c.lambda_p.is_finite()) {
        errors.push(format!("lambda_p: must be >= 0, got {}", c.lambda_p));
    }
    if !(c.lambda_dis >= 0.0 && c.lambda_dis.is_finite()) {
        errors.push(format!("lambda_dis: must be >= 0, got {}", c.lambda_dis));
    }
    if let Some(lr) = c.lr {
        if !(lr > 0.0 && lr.is_finite()) {
            errors.push(format!("lr: must be > 0, got {lr}"));
        }
    }
    if c.epochs == Some(0) {
        errors.push("epochs: must be >= 1".into());
    }
    if !(c.ref_f0 >= 50.0 && c.ref_f0 <= 500.0) {
        errors.push(format!("ref_f0: must lie in [50, 500] Hz, got {}", c.ref_f0));
    }
    if c.noise_stds.is_empty() || c.noise_stds[0] != 0.0 || c.noise_stds.windows(2).any(|w| !(w[1] >= w[0])) {
        errors.push(format!("noise_stds: must start at 0.0 and be non-decreasing, got {:?}", c.noise_stds));
    }
    if !c.noise_hypotheses.is_empty() && c.noise_hypotheses.len() != c.noise_stds.len() {
        errors.push(format!(
            "noise_hypotheses: {} files for {} noise levels",
            c.noise_hypotheses.len(),
            c.noise_stds.len()
        ));
    }
    if c.n_values.is_empty() {
        errors.push("n_values: must not be empty".into());
    }
    if c.holdout_per_class == 0 {
        errors.push("holdout_per_class: must be >= 1".into());
    }
    if c.n_speakers_per_gender == 0 || c.utts_per_speaker == 0 || c.accent_classes == 0 {
        errors.push("n_speakers_per_gender, utts_per_speaker, accent_classes: must be >= 1".into());
    }
    if errors.is_empty() {
        Ok(c)
    } else {
        Err(ConfigError(errors))
    }
}

/// Checks that the inputs `cmd` reads exist.
fn check_inputs(c: &RunConfig, cmd: Command) -> std::result::Result<(), ConfigError> {
    let mut errors = Vec::new();
    let mut need = |field: &str, p: PathBuf| {
        if !p.is_file() {
            errors.push(format!("{field}: file not found: {}", p.display()));
        }
    };
    if cmd != Command::SynthData {
        need("manifest", c.manifest_path());
    }
    match cmd {
        Command::TrainGan => need("vae_checkpoint", c.vae_path()),
        Command::Encrypt if c.method != Method::Pitch => need("checkpoint", c.model_path()),
        Command::Evaluate => {
            need("classifier", c.classifier_path());
            need("encrypted_manifest", c.encrypted_manifest_path());
        }
        Command::Tradeoff => need("classifier", c.classifier_path()),
        _ => {}
    }
    if matches!(cmd, Command::Evaluate) {
        if let Some(h) = &c.hypotheses {
            need("hypotheses", h.clone());
        }
    }
    if matches!(cmd, Command::Tradeoff) {
        for h in &c.noise_hypotheses {
            need("noise_hypotheses", h.clone());
        }
    }
    if errors.is_empty() {
        Ok(())
    } else {
        Err(ConfigError(errors))
    }
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Run(#[from] Error),
}

/// Parses `args` (including the program name), runs the subcommand and
/// returns the exit code. Metrics go to `--out` or `stdout`; diagnostics to `stderr`.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = write!(stderr, "{}", e.render());
            return e.exit_code();
        }
    };
    match execute(&cli, stdout) {
        Ok(()) => 0,
        Err(CliError::Config(e)) => {
            let _ = writeln!(stderr, "{e}");
            EXIT_CONFIG
        }
        Err(CliError::Run(e)) => {
            let _ = writeln!(stderr, "error: {e}");
            EXIT_RUNTIME
        }
    }
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io { path: path.display().to_string(), source }
}

fn execute(cli: &Cli, stdout: &mut dyn Write) -> std::result::Result<(), CliError> {
    let raw = match &cli.flags.config {
        Some(p) => fs::read_to_string(p).map_err(|e| ConfigError(vec![format!("config: {}: {e}", p.display())]))?,
        None => String::new(),
    };
    let mut overrides = cli.flags.overrides();
    if cli.command == Command::TrainGan && !overrides.contains_key("method") && !raw.contains("\"method\"") {
        overrides.insert("method".into(), json!("gan"));
    }
    let cfg = validate_with(&raw, &overrides)?;
    check_inputs(&cfg, cli.command)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .map_err(|e| Error::Io { path: "thread pool".into(), source: std::io::Error::other(e) })?;
    let lines = pool.install(|| dispatch(&cfg, cli.command))?;
    let text: String = lines.iter().map(|v| v.to_string() + "\n").collect();
    match &cfg.out {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
            }
            fs::write(p, text).map_err(|e| io_err(p, e))?;
        }
        None => stdout.write_all(text.as_bytes()).map_err(|e| io_err(Path::new("<stdout>"), e))?,
    }
    Ok(())
}

fn dispatch(cfg: &RunConfig, cmd: Command) -> Result<Vec<Value>> {
    match cmd {
        Command::SynthData => synth_data(cfg),
        Command::Encrypt => encrypt(cfg),
        Command::TrainVae => train_vae_cmd(cfg),
        Command::TrainGan => train_gan_cmd(cfg),
        Command::TrainClassifier => train_classifier_cmd(cfg),
        Command::Evaluate => evaluate(cfg),
        Command::Tradeoff => tradeoff(cfg),
    }
    .map(|mut lines| {
        for l in &mut lines {
            if let Value::Object(o) = l {
                o.insert("command".into(), json!(cmd.name()));
            }
        }
        lines
    })
}

fn synth_data(cfg: &RunConfig) -> Result<Vec<Value>> {
    let dir = cfg.out_dir.join("corpus");
    let entries = synth_corpus(&cfg.synth(), &dir)?;
    let speakers: std::collections::BTreeSet<&str> = entries.iter().map(|e| e.speaker_id.as_str()).collect();
    Ok(vec![json!({
        "utterances": entries.len(),
        "speakers": speakers.len(),
        "manifest": dir.join(MANIFEST_FILE),
        "seed": cfg.seed,
    })])
}

struct Corpus {
    train: Vec<Utterance>,
    test: Vec<Utterance>,
}

fn load_corpus(cfg: &RunConfig) -> Result<Corpus> {
    let entries = load_manifest(cfg.manifest_path())?;
    let all = load_audio(&entries)?;
    let (train, test) = split(cfg, &all)?;
    Ok(Corpus { train, test })
}

/// Speaker-disjoint split of `utts` by the configured holdout and seed.
fn split(cfg: &RunConfig, utts: &[Utterance]) -> Result<(Vec<Utterance>, Vec<Utterance>)> {
    let entries: Vec<ManifestEntry> = utts.iter().map(|u| u.entry.clone()).collect();
    let (_, test_e) = split_speakers(&entries, cfg.holdout_per_class, cfg.seed)?;
    let test_spk: std::collections::HashSet<&str> = test_e.iter().map(|e| e.speaker_id.as_str()).collect();
    let (test, train): (Vec<Utterance>, Vec<Utterance>) =
        utts.iter().cloned().partition(|u| test_spk.contains(u.entry.speaker_id.as_str()));
    Ok((train, test))
}

fn vae_config(cfg: &RunConfig) -> VaeConfig {
    let d = VaeConfig::default();
    VaeConfig {
        lambda_p: cfg.lambda_p,
        lambda_dis: cfg.lambda_dis,
        lr: cfg.lr.unwrap_or(d.lr),
        epochs: cfg.epochs.unwrap_or(d.epochs),
        label_kind: cfg.attribute,
        ..d
    }
}

fn train_vae_cmd(cfg: &RunConfig) -> Result<Vec<Value>> {
    let corpus = load_corpus(cfg)?;
    let (model, history) = train_vae(&corpus.train, &vae_config(cfg), cfg.seed)?;
    let path = cfg.vae_path();
    ensure_parent(&path)?;
    model.save(&path)?;
    Ok(history
        .iter()
        .enumerate()
        .map(|(epoch, h)| {
            let mut v = serde_json::to_value(h).expect("loss terms serialize");
            v["epoch"] = json!(epoch);
            v["seed"] = json!(cfg.seed);
            v
        })
        .collect())
}

fn train_gan_cmd(cfg: &RunConfig) -> Result<Vec<Value>> {
    let corpus = load_corpus(cfg)?;
    let vae = VaeModel::load(&cfg.vae_path())?;
    let d = GanConfig::default();
    let gc = GanConfig {
        label_kind: cfg.label_kind.unwrap_or(d.label_kind),
        lr_g: cfg.lr.unwrap_or(d.lr_g),
        epochs: cfg.epochs.unwrap_or(d.epochs),
        ..d
    };
    let (model, history) = train_gan(&corpus.train, &vae, &gc, cfg.seed)?;
    let path = cfg.gan_path();
    ensure_parent(&path)?;
    model.save(&path)?;
    Ok(history
        .iter()
        .enumerate()
        .map(|(epoch, h)| {
            let mut v = serde_json::to_value(h).expect("history serializes");
            v["epoch"] = json!(epoch);
            v["seed"] = json!(cfg.seed);
            v
        })
        .collect())
}

fn classifier_config(cfg: &RunConfig) -> ClassifierConfig {
    let d = ClassifierConfig::default();
    ClassifierConfig { epochs: cfg.epochs.unwrap_or(d.epochs), lr: cfg.lr.unwrap_or(d.lr), ..d }
}

fn train_classifier_cmd(cfg: &RunConfig) -> Result<Vec<Value>> {
    let corpus = load_corpus(cfg)?;
    let c = pretrain_classifier(&corpus.train, cfg.attribute, &classifier_config(cfg), cfg.seed)?;
    let path = cfg.classifier_path();
    ensure_parent(&path)?;
    c.save(&path)?;
    Ok(vec![json!({
        "attribute": cfg.attribute,
        "train_utterances": corpus.train.len(),
        "test_utterances": corpus.test.len(),
        "train_accuracy": classification_accuracy(&c, &corpus.train)?,
        "test_accuracy": classification_accuracy(&c, &corpus.test)?,
        "seed": cfg.seed,
    })])
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    Ok(())
}

enum Encryptor {
    Pitch(f64),
    Vae(Box<VaeModel>, VaeTarget),
    Gan(Box<GanModel>, GanTarget),
}

fn encrypt(cfg: &RunConfig) -> Result<Vec<Value>> {
    let entries = load_manifest(cfg.manifest_path())?;
    let utts = load_audio(&entries)?;
    let enc = match cfg.method {
        Method::Pitch => Encryptor::Pitch(cfg.ref_f0),
        Method::Vae => {
            let target = cfg.target.as_deref().unwrap_or("neutral").parse().unwrap_or(VaeTarget::Neutral);
            Encryptor::Vae(Box::new(VaeModel::load(&cfg.model_path())?), target)
        }
        Method::Gan => {
            let m = GanModel::load(&cfg.model_path())?;
            if let Some(kind) = cfg.label_kind {
                ensure_label_kind(&m, kind)?;
            }
            let target = cfg.target.as_deref().unwrap_or("random").parse().unwrap_or(GanTarget::Random);
            Encryptor::Gan(Box::new(m), target)
        }
    };
    let dir = cfg.encrypted_dir();
    let wav_dir = dir.join("wav");
    fs::create_dir_all(&wav_dir).map_err(|e| io_err(&wav_dir, e))?;
    let results: Vec<(ManifestEntry, Value)> = utts
        .par_iter()
        .enumerate()
        .map(|(i, u)| -> Result<(ManifestEntry, Value)> {
            let s = seed::derive(cfg.seed, "encrypt", i as u64);
            let mut info = json!({ "utt_id": u.entry.utt_id, "method": cfg.method.name(), "seed": cfg.seed });
            let w = match &enc {
                Encryptor::Pitch(f_r) => {
                    let out = standardize_pitch(&u.waveform, *f_r)?;
                    info["source_f0_hz"] = json!(out.source_f0_hz);
                    info["semitones"] = json!(out.semitones);
                    out.waveform
                }
                Encryptor::Vae(m, t) => {
                    info["target"] = json!(cfg.target.as_deref().unwrap_or("neutral"));
                    encrypt_vae(m, &u.waveform, t, s)?
                }
                Encryptor::Gan(m, t) => {
                    let source = m.label_kind().label(&u.entry, m.classes()).ok().map(|k| m.classes()[k].clone());
                    let y = match t {
                        GanTarget::Class(name) => name.clone(),
                        GanTarget::Random => {
                            let src = match &source {
                                Some(s) => m.class_index(s)?,
                                None => 0,
                            };
                            m.classes()[m.resolve_target(t, src, s)?].clone()
                        }
                    };
                    info["target"] = json!(y);
                    encrypt_gan(m, &u.waveform, &GanTarget::Class(y), source.as_deref(), s)?
                }
            };
            let path = wav_dir.join(format!("{}.wav", u.entry.utt_id));
            write_wav(&w, &path)?;
            info["samples"] = json!(w.len());
            info["sample_rate_hz"] = json!(w.sample_rate_hz());
            let entry = ManifestEntry { audio_path: path, ..u.entry.clone() };
            Ok((entry, info))
        })
        .collect::<Result<_>>()?;
    let (new_entries, lines): (Vec<ManifestEntry>, Vec<Value>) = results.into_iter().unzip();
    write_manifest(dir.join(MANIFEST_FILE), &new_entries)?;
    Ok(lines)
}

/// Utterances of `enc` whose ids appear in `like`, in `like` order.
fn matching(enc: &[Utterance], like: &[Utterance]) -> Vec<Utterance> {
    let by_id: HashMap<&str, &Utterance> = enc.iter().map(|u| (u.entry.utt_id.as_str(), u)).collect();
    like.iter().filter_map(|u| by_id.get(u.entry.utt_id.as_str()).map(|&u| u.clone())).collect()
}

fn evaluate(cfg: &RunConfig) -> Result<Vec<Value>> {
    let corpus = load_corpus(cfg)?;
    let classifier = AttributeClassifier::load(&cfg.classifier_path())?;
    let enc_entries = load_manifest(cfg.encrypted_manifest_path())?;
    let enc = load_audio(&enc_entries)?;
    let hypotheses = cfg.hypotheses.as_ref().map(ingest_hypotheses).transpose()?;
    let methods = vec![
        MethodData { name: NO_MASKING.into(), test: corpus.test.clone(), finetune_pool: Vec::new(), hypotheses: None },
        MethodData {
            name: cfg.method.name().into(),
            test: matching(&enc, &corpus.test),
            finetune_pool: matching(&enc, &corpus.train),
            hypotheses,
        },
    ];
    let report = privacy_fidelity_report(&classifier, &methods, &cfg.n_values, cfg.seed)?;
    Ok(report.rows.iter().map(|r| serde_json::to_value(r).expect("rows serialize")).collect())
}

fn tradeoff(cfg: &RunConfig) -> Result<Vec<Value>> {
    let corpus = load_corpus(cfg)?;
    let classifier = AttributeClassifier::load(&cfg.classifier_path())?;
    let hyps = if cfg.noise_hypotheses.is_empty() {
        None
    } else {
        Some(cfg.noise_hypotheses.iter().map(ingest_hypotheses).collect::<std::result::Result<Vec<_>, _>>()?)
    };
    let report = noise_tradeoff_experiment(&classifier, &corpus.test, &cfg.noise_stds, cfg.seed, hyps.as_deref())?;
    Ok(report.rows.iter().map(|r| serde_json::to_value(r).expect("rows serialize")).collect())
}
