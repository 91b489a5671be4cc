//! Disentangling VAE. A content encoder with instance normalization yields a
//! per-frame factor `z_c`, a private encoder pools over time into an
//! utterance-level `z_p`, and an AdaIN decoder rebuilds the log spectrogram
//! from both. Encryption decodes `z_c` with a substituted `z_p`.

use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::{AudioError, CANONICAL_RATE_HZ};
use crate::autodiff::{AdamConfig, Graph, ParamStore, Parameterized, Tensor, TensorError, Var, DEFAULT_NORM_EPS};
use crate::datasets::{DatasetError, LabelKind, ManifestEntry, Utterance};
use crate::features::ModelFraming;
use crate::seed;
use crate::spectral::{SpectralError, Spectrogram};
use crate::Waveform;

const LEAK: f64 = 0.2;
const LOGVAR_RANGE: (f64, f64) = (-10.0, 10.0);

/// Errors shared by the VAE and GAN models.
#[derive(Debug, Error)]
pub enum ModelError {
    #[error("model is untrained")]
    Untrained,
    #[error("empty dataset")]
    EmptyDataset,
    #[error("framing mismatch: {0}")]
    Framing(String),
    #[error("dimension mismatch: {0}")]
    Dim(String),
    #[error("unknown target `{target}`; expected one of {expected:?}")]
    UnknownTarget { target: String, expected: Vec<String> },
    #[error("label kind mismatch: model is {model}, request is {request}")]
    LabelKindMismatch { model: &'static str, request: &'static str },
    #[error("invalid label {label} for {classes} classes")]
    Label { label: usize, classes: usize },
    #[error("invalid config: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Audio(#[from] AudioError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VaeConfig {
    pub framing: ModelFraming,
    pub label_kind: LabelKind,
    pub channels: usize,
    /// Width of `z_c` per frame.
    pub content_dim: usize,
    pub private_dim: usize,
    pub kernel: usize,
    pub lambda_p: f64,
    pub lambda_dis: f64,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub crop_frames: usize,
}

impl Default for VaeConfig {
    fn default() -> Self {
        Self {
            framing: ModelFraming::default(),
            label_kind: LabelKind::Gender,
            channels: 64,
            content_dim: 8,
            private_dim: 32,
            kernel: 5,
            lambda_p: 1.0,
            lambda_dis: 0.01,
            lr: 2e-3,
            epochs: 40,
            batch_size: 8,
            crop_frames: 32,
        }
    }
}

impl VaeConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let mut bad = Vec::new();
        if self.channels == 0 || self.content_dim == 0 || self.private_dim == 0 {
            bad.push("channels, content_dim and private_dim must be >= 1".to_string());
        }
        if self.kernel % 2 == 0 {
            bad.push(format!("kernel must be odd, got {}", self.kernel));
        }
        if !(self.lambda_p >= 0.0 && self.lambda_p.is_finite()) {
            bad.push(format!("lambda_p must be >= 0, got {}", self.lambda_p));
        }
        if !(self.lambda_dis >= 0.0 && self.lambda_dis.is_finite()) {
            bad.push(format!("lambda_dis must be >= 0, got {}", self.lambda_dis));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            bad.push(format!("lr must be > 0, got {}", self.lr));
        }
        if self.batch_size == 0 {
            bad.push("batch_size must be >= 1".into());
        }
        if self.crop_frames < 2 {
            bad.push("crop_frames must be >= 2".into());
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(ModelError::Config(bad.join("; ")))
        }
    }
}

/// Posterior parameters for one utterance. `z_c` is `[content_dim, T]`,
/// `z_p` is `[private_dim]`; `z_*` are the posterior means.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentFactors {
    pub mu_c: Tensor,
    pub logvar_c: Tensor,
    pub mu_p: Tensor,
    pub logvar_p: Tensor,
}

impl LatentFactors {
    pub fn z_c(&self) -> &Tensor {
        &self.mu_c
    }
    pub fn z_p(&self) -> &Tensor {
        &self.mu_p
    }
}

/// Terms of the VAE objective. `attribute` and `kl` are already weighted, so
/// `total == recon + attribute + kl`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct VaeLoss {
    pub total: f64,
    pub recon: f64,
    pub attribute: f64,
    pub kl: f64,
    /// Unweighted cross-entropy of the attribute head.
    pub cross_entropy: f64,
    /// Unweighted KL of `[z_c, z_p]` against the standard normal.
    pub kl_divergence: f64,
}

impl VaeLoss {
    fn accumulate(&mut self, o: &VaeLoss, w: f64) {
        self.total += w * o.total;
        self.recon += w * o.recon;
        self.attribute += w * o.attribute;
        self.kl += w * o.kl;
        self.cross_entropy += w * o.cross_entropy;
        self.kl_divergence += w * o.kl_divergence;
    }
}

/// Substitute private factor used at encryption time.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum VaeTarget {
    /// Mean `z_p` over the training set.
    Neutral,
    /// Mean `z_p` of one class.
    Class(String),
}

impl FromStr for VaeTarget {
    type Err = std::convert::Infallible;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(if s == "neutral" { VaeTarget::Neutral } else { VaeTarget::Class(s.to_string()) })
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct VaeMeta {
    config: VaeConfig,
    classes: Vec<String>,
    norm_mean: f64,
    norm_std: f64,
    neutral: Option<Vec<f64>>,
    class_means: Vec<Vec<f64>>,
}

#[derive(Clone)]
pub struct VaeModel {
    params: ParamStore,
    config: VaeConfig,
    classes: Vec<String>,
    norm_mean: f64,
    norm_std: f64,
    neutral: Option<Vec<f64>>,
    class_means: Vec<Vec<f64>>,
}

impl Parameterized for VaeModel {
    fn params(&self) -> &ParamStore {
        &self.params
    }
    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }
}

/// Adds the AdaIN decoder parameters under `prefix`.
pub(crate) fn init_decoder<R: Rng>(
    params: &mut ParamStore,
    prefix: &str,
    cfg: &VaeConfig,
    n_bins: usize,
    rng: &mut R,
) -> Result<(), TensorError> {
    let (c, k) = (cfg.channels, cfg.kernel);
    params.kaiming(&format!("{prefix}conv0.w"), &[c, cfg.content_dim, k], cfg.content_dim * k, rng)?;
    params.kaiming(&format!("{prefix}conv1.w"), &[c, c, k], c * k, rng)?;
    params.kaiming(&format!("{prefix}out.w"), &[n_bins, c, 1], c, rng)?;
    params.zeros(&format!("{prefix}out.b"), &[n_bins])?;
    // Style projections start at zero so the untrained decoder ignores z_p.
    for layer in 0..2 {
        for part in ["gamma", "beta"] {
            params.zeros(&format!("{prefix}{part}{layer}.w"), &[c, cfg.private_dim])?;
            params.zeros(&format!("{prefix}{part}{layer}.b"), &[c])?;
        }
    }
    Ok(())
}

fn p(g: &mut Graph, store: &ParamStore, name: &str) -> Result<Var, TensorError> {
    Ok(g.param(store, store.id(name)?))
}

/// Convolution feeding a normalization layer, which would cancel a bias.
fn conv_no_bias(g: &mut Graph, x: Var, w: Var) -> Result<Var, TensorError> {
    let zeros = Tensor::zeros(&g.value(w).shape()[..1]);
    let b = g.input(zeros);
    g.conv1d(x, w, b)
}

/// `z_c [N,Dc,T]`, `z_p [N,Dp]` to normalized log spectra `[N,B,T]`.
pub(crate) fn decoder_forward(g: &mut Graph, store: &ParamStore, prefix: &str, z_c: Var, z_p: Var) -> Result<Var, TensorError> {
    let mut h = z_c;
    for layer in 0..2 {
        let w = p(g, store, &format!("{prefix}conv{layer}.w"))?;
        let c = conv_no_bias(g, h, w)?;
        let gw = p(g, store, &format!("{prefix}gamma{layer}.w"))?;
        let gb = p(g, store, &format!("{prefix}gamma{layer}.b"))?;
        let gamma = g.linear(z_p, gw, gb)?;
        let gamma = g.add_scalar(gamma, 1.0)?;
        let bw = p(g, store, &format!("{prefix}beta{layer}.w"))?;
        let bb = p(g, store, &format!("{prefix}beta{layer}.b"))?;
        let beta = g.linear(z_p, bw, bb)?;
        let a = g.ada_in(c, gamma, beta)?;
        h = g.leaky_relu(a, LEAK)?;
    }
    let w = p(g, store, &format!("{prefix}out.w"))?;
    let b = p(g, store, &format!("{prefix}out.b"))?;
    g.conv1d(h, w, b)
}

/// Graph nodes from one encoder pass.
pub(crate) struct EncoderVars {
    pub mu_c: Var,
    pub logvar_c: Var,
    pub mu_p: Var,
    pub logvar_p: Var,
    /// First content layer after instance normalization.
    pub first_act: Var,
}

impl VaeModel {
    fn init(config: VaeConfig, classes: Vec<String>, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        if classes.len() < 2 {
            return Err(ModelError::Config(format!("need at least 2 classes, got {}", classes.len())));
        }
        let mut rng = seed::derived_rng(seed, "vae-init", 0);
        let mut params = ParamStore::new();
        let (b, c, k) = (config.framing.n_bins(), config.channels, config.kernel);
        let (dc, dp) = (config.content_dim, config.private_dim);
        params.kaiming("enc_c.conv0.w", &[c, b, 1], b, &mut rng)?;
        params.kaiming("enc_c.conv1.w", &[c, c, k], c * k, &mut rng)?;
        params.kaiming("enc_c.mu.w", &[dc, c, 1], c, &mut rng)?;
        params.zeros("enc_c.mu.b", &[dc])?;
        params.kaiming("enc_c.logvar.w", &[dc, c, 1], c, &mut rng)?;
        params.zeros("enc_c.logvar.b", &[dc])?;
        params.kaiming("enc_p.conv0.w", &[c, b, 1], b, &mut rng)?;
        params.zeros("enc_p.conv0.b", &[c])?;
        params.kaiming("enc_p.conv1.w", &[c, c, k], c * k, &mut rng)?;
        params.zeros("enc_p.conv1.b", &[c])?;
        params.kaiming("enc_p.mu.w", &[dp, c], c, &mut rng)?;
        params.zeros("enc_p.mu.b", &[dp])?;
        params.kaiming("enc_p.logvar.w", &[dp, c], c, &mut rng)?;
        params.zeros("enc_p.logvar.b", &[dp])?;
        params.kaiming("head.w", &[classes.len(), dp], dp, &mut rng)?;
        params.zeros("head.b", &[classes.len()])?;
        init_decoder(&mut params, "dec.", &config, b, &mut rng)?;
        Ok(Self { params, config, classes, norm_mean: 0.0, norm_std: 1.0, neutral: None, class_means: Vec::new() })
    }

    /// Untrained model with the given classes. Inputs are normalized with
    /// mean 0 and std 1 until training sets real statistics.
    pub fn untrained(config: VaeConfig, classes: Vec<String>, seed: u64) -> Result<Self, ModelError> {
        Self::init(config, classes, seed)
    }

    pub fn config(&self) -> &VaeConfig {
        &self.config
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn is_trained(&self) -> bool {
        self.neutral.is_some()
    }

    pub(crate) fn params_ref(&self) -> &ParamStore {
        &self.params
    }

    pub(crate) fn class_means(&self) -> &[Vec<f64>] {
        &self.class_means
    }

    pub(crate) fn encoder_forward(&self, g: &mut Graph, x: Var) -> Result<EncoderVars, TensorError> {
        let s = &self.params;
        let w = p(g, s, "enc_c.conv0.w")?;
        let h = conv_no_bias(g, x, w)?;
        let first_act = g.instance_norm(h, DEFAULT_NORM_EPS)?;
        let h = g.leaky_relu(first_act, LEAK)?;
        let w = p(g, s, "enc_c.conv1.w")?;
        let h = conv_no_bias(g, h, w)?;
        let h = g.instance_norm(h, DEFAULT_NORM_EPS)?;
        let h = g.leaky_relu(h, LEAK)?;
        let (w, b) = (p(g, s, "enc_c.mu.w")?, p(g, s, "enc_c.mu.b")?);
        let mu_c = g.conv1d(h, w, b)?;
        let (w, b) = (p(g, s, "enc_c.logvar.w")?, p(g, s, "enc_c.logvar.b")?);
        let lv = g.conv1d(h, w, b)?;
        let logvar_c = g.clamp(lv, LOGVAR_RANGE.0, LOGVAR_RANGE.1)?;

        let (w, b) = (p(g, s, "enc_p.conv0.w")?, p(g, s, "enc_p.conv0.b")?);
        let h = g.conv1d(x, w, b)?;
        let h = g.leaky_relu(h, LEAK)?;
        let (w, b) = (p(g, s, "enc_p.conv1.w")?, p(g, s, "enc_p.conv1.b")?);
        let h = g.conv1d(h, w, b)?;
        let h = g.leaky_relu(h, LEAK)?;
        let pooled = g.mean_trailing(h, 2)?;
        let (w, b) = (p(g, s, "enc_p.mu.w")?, p(g, s, "enc_p.mu.b")?);
        let mu_p = g.linear(pooled, w, b)?;
        let (w, b) = (p(g, s, "enc_p.logvar.w")?, p(g, s, "enc_p.logvar.b")?);
        let lv = g.linear(pooled, w, b)?;
        let logvar_p = g.clamp(lv, LOGVAR_RANGE.0, LOGVAR_RANGE.1)?;
        Ok(EncoderVars { mu_c, logvar_c, mu_p, logvar_p, first_act })
    }

    fn head_forward(&self, g: &mut Graph, z_p: Var) -> Result<Var, TensorError> {
        let (w, b) = (p(g, &self.params, "head.w")?, p(g, &self.params, "head.b")?);
        g.linear(z_p, w, b)
    }

    pub(crate) fn check_framing(&self, x: &Spectrogram) -> Result<(), ModelError> {
        let f = &self.config.framing;
        if !x.is_log_scaled() {
            return Err(ModelError::Framing("expected a log-magnitude spectrogram".into()));
        }
        if x.frame_len() != f.frame_len || x.hop() != f.hop || x.n_bins() != f.n_bins() {
            return Err(ModelError::Framing(format!(
                "expected frame_len {} hop {} ({} bins), got frame_len {} hop {} ({} bins)",
                f.frame_len,
                f.hop,
                f.n_bins(),
                x.frame_len(),
                x.hop(),
                x.n_bins()
            )));
        }
        if x.n_frames() < 2 {
            return Err(ModelError::Framing(format!("need at least 2 frames, got {}", x.n_frames())));
        }
        Ok(())
    }

    /// Normalized `[1,B,T]` model input.
    pub(crate) fn to_input(&self, x: &Spectrogram) -> Result<Tensor, ModelError> {
        self.check_framing(x)?;
        let (t_len, b) = (x.n_frames(), x.n_bins());
        let mut data = vec![0.0; t_len * b];
        for t in 0..t_len {
            for (k, v) in x.frame(t).iter().enumerate() {
                data[k * t_len + t] = (v - self.norm_mean) / self.norm_std;
            }
        }
        Ok(Tensor::new(vec![1, b, t_len], data)?)
    }

    /// Model output `[1,B,T]` back to a log spectrogram.
    pub(crate) fn to_spectrogram(&self, y: &Tensor) -> Result<Spectrogram, ModelError> {
        let (b, t_len) = (y.shape()[1], y.shape()[2]);
        let mut values = vec![0.0; t_len * b];
        for k in 0..b {
            for t in 0..t_len {
                values[t * b + k] = y.data()[k * t_len + t] * self.norm_std + self.norm_mean;
            }
        }
        let f = &self.config.framing;
        Ok(Spectrogram::new(values, t_len, b, f.frame_len, f.hop, CANONICAL_RATE_HZ, true)?)
    }

    /// Posterior means and log-variances of both encoders.
    pub fn encode(&self, x: &Spectrogram) -> Result<LatentFactors, ModelError> {
        let input = self.to_input(x)?;
        let mut g = Graph::new();
        let xv = g.input(input);
        let e = self.encoder_forward(&mut g, xv)?;
        let drop_batch = |t: &Tensor| t.clone().reshape(&t.shape()[1..]);
        Ok(LatentFactors {
            mu_c: drop_batch(g.value(e.mu_c))?,
            logvar_c: drop_batch(g.value(e.logvar_c))?,
            mu_p: drop_batch(g.value(e.mu_p))?,
            logvar_p: drop_batch(g.value(e.logvar_p))?,
        })
    }

    /// First content-encoder layer after instance normalization, `[C,T]`.
    pub fn content_activations(&self, x: &Spectrogram) -> Result<Tensor, ModelError> {
        let input = self.to_input(x)?;
        let mut g = Graph::new();
        let xv = g.input(input);
        let e = self.encoder_forward(&mut g, xv)?;
        let a = g.value(e.first_act);
        Ok(a.clone().reshape(&a.shape()[1..])?)
    }

    pub fn decode(&self, z_c: &Tensor, z_p: &Tensor) -> Result<Spectrogram, ModelError> {
        let (dc, dp) = (self.config.content_dim, self.config.private_dim);
        if z_c.shape().len() != 2 || z_c.shape()[0] != dc || z_c.shape()[1] < 2 {
            return Err(ModelError::Dim(format!("z_c must be [{dc}, T>=2], got {:?}", z_c.shape())));
        }
        if z_p.shape() != [dp] {
            return Err(ModelError::Dim(format!("z_p must be [{dp}], got {:?}", z_p.shape())));
        }
        let mut g = Graph::new();
        let zc = g.input(z_c.clone().reshape(&[1, dc, z_c.shape()[1]])?);
        let zp = g.input(z_p.clone().reshape(&[1, dp])?);
        let out = decoder_forward(&mut g, &self.params, "dec.", zc, zp)?;
        self.to_spectrogram(g.value(out))
    }

    /// Substitute `z_p` for a target.
    pub fn target_private(&self, target: &VaeTarget) -> Result<Tensor, ModelError> {
        let neutral = self.neutral.as_ref().ok_or(ModelError::Untrained)?;
        let v = match target {
            VaeTarget::Neutral => neutral.clone(),
            VaeTarget::Class(name) => {
                let i = self.classes.iter().position(|c| c == name).ok_or_else(|| ModelError::UnknownTarget {
                    target: name.clone(),
                    expected: std::iter::once("neutral".to_string()).chain(self.classes.iter().cloned()).collect(),
                })?;
                self.class_means[i].clone()
            }
        };
        Ok(Tensor::new(vec![v.len()], v)?)
    }

    /// Builds the loss on a batch `x [N,B,T]`. `decode` maps `(x, z_c, z_p)`
    /// to the reconstruction so tests can swap in stubs.
    fn loss_graph<D>(&self, g: &mut Graph, x: Var, labels: &[usize], seed: u64, decode: D) -> Result<(Var, VaeLoss), TensorError>
    where
        D: FnOnce(&mut Graph, Var, Var, Var) -> Result<Var, TensorError>,
    {
        if let Some(&bad) = labels.iter().find(|&&y| y >= self.classes.len()) {
            return Err(TensorError::Label { label: bad, classes: self.classes.len() });
        }
        let e = self.encoder_forward(g, x)?;
        let z_c = g.reparameterize(e.mu_c, e.logvar_c, seed::derive(seed, "vae-zc", 0))?;
        let z_p = g.reparameterize(e.mu_p, e.logvar_p, seed::derive(seed, "vae-zp", 0))?;
        let recon_x = decode(g, x, z_c, z_p)?;
        let recon = g.l1_loss(recon_x, x)?;
        let logits = self.head_forward(g, z_p)?;
        let ce = g.cross_entropy(logits, labels)?;
        let kl_c = g.kl_standard_normal(e.mu_c, e.logvar_c)?;
        let kl_p = g.kl_standard_normal(e.mu_p, e.logvar_p)?;
        let kl = g.add(kl_c, kl_p)?;
        let attr = g.scale(ce, self.config.lambda_p)?;
        let kl_w = g.scale(kl, self.config.lambda_dis)?;
        let total = g.add_scalars(&[recon, attr, kl_w])?;
        let item = |v: Var| g.value(v).item();
        let terms = VaeLoss {
            total: item(total),
            recon: item(recon),
            attribute: item(attr),
            kl: item(kl_w),
            cross_entropy: item(ce),
            kl_divergence: item(kl),
        };
        Ok((total, terms))
    }

    fn batch_loss(&self, g: &mut Graph, x: Var, labels: &[usize], seed: u64) -> Result<(Var, VaeLoss), TensorError> {
        self.loss_graph(g, x, labels, seed, |g, _, zc, zp| decoder_forward(g, &self.params, "dec.", zc, zp))
    }

    /// L_dis on one utterance with reparameterization noise drawn from `seed`.
    pub fn loss_dis(&self, x: &Spectrogram, label: usize, seed: u64) -> Result<VaeLoss, ModelError> {
        if label >= self.classes.len() {
            return Err(ModelError::Label { label, classes: self.classes.len() });
        }
        let input = self.to_input(x)?;
        let mut g = Graph::new();
        let xv = g.input(input);
        Ok(self.batch_loss(&mut g, xv, &[label], seed)?.1)
    }

    /// Worst relative error between backprop and central differences of
    /// L_dis with respect to the parameters, on a batch of utterances cropped
    /// to their first `frames` frames. Probes up to `per_param` entries per tensor.
    pub fn loss_gradient_check(
        &self,
        xs: &[(&Spectrogram, usize)],
        frames: usize,
        per_param: usize,
        seed: u64,
    ) -> Result<f64, ModelError> {
        if xs.is_empty() {
            return Err(ModelError::EmptyDataset);
        }
        let t = xs.iter().map(|(x, _)| x.n_frames()).min().unwrap_or(0).min(frames).max(1);
        let b = self.config.framing.n_bins();
        let mut data = Vec::with_capacity(xs.len() * b * t);
        let mut labels = Vec::with_capacity(xs.len());
        for &(x, label) in xs {
            if label >= self.classes.len() {
                return Err(ModelError::Label { label, classes: self.classes.len() });
            }
            let full = self.to_input(x)?;
            let n = x.n_frames();
            for k in 0..b {
                data.extend_from_slice(&full.data()[k * n..k * n + t]);
            }
            labels.push(label);
        }
        let input = Tensor::new(vec![xs.len(), b, t], data)?;
        let mut store = self.params.clone();
        let err = crate::autodiff::grad_check_params(
            &mut store,
            |g, s| {
                let mut m = self.clone();
                m.params = s.clone();
                let xv = g.input(input.clone());
                Ok(m.batch_loss(g, xv, &labels, seed)?.0)
            },
            1e-6,
            per_param,
        )?;
        Ok(err)
    }

    pub(crate) fn meta_json(&self) -> Result<String, ModelError> {
        let meta = VaeMeta {
            config: self.config.clone(),
            classes: self.classes.clone(),
            norm_mean: self.norm_mean,
            norm_std: self.norm_std,
            neutral: self.neutral.clone(),
            class_means: self.class_means.clone(),
        };
        serde_json::to_string(&meta).map_err(|e| ModelError::Checkpoint(e.to_string()))
    }

    pub(crate) fn from_parts(params: &ParamStore, meta_json: &str) -> Result<Self, ModelError> {
        let meta: VaeMeta =
            serde_json::from_str(meta_json).map_err(|e| ModelError::Checkpoint(format!("vae metadata: {e}")))?;
        let mut m = Self::init(meta.config, meta.classes, 0)?;
        m.params.load_values_from(params)?;
        m.norm_mean = meta.norm_mean;
        m.norm_std = meta.norm_std;
        m.neutral = meta.neutral;
        m.class_means = meta.class_means;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        Ok(self.params.save(path, &self.meta_json()?)?)
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let (params, json) = ParamStore::load(path)?;
        Self::from_parts(&params, &json)
    }
}

/// One training utterance in model layout: normalized `[B,T]` values.
pub(crate) struct Sample {
    pub values: Vec<f64>,
    pub n_frames: usize,
    pub label: usize,
}

/// `crop` frames of `s` starting at `offset`, wrapping short inputs. Appends `[B,crop]`.
pub(crate) fn crop_into(s: &Sample, n_bins: usize, offset: usize, crop: usize, out: &mut Vec<f64>) {
    for k in 0..n_bins {
        let row = &s.values[k * s.n_frames..(k + 1) * s.n_frames];
        out.extend((0..crop).map(|t| row[(offset + t) % s.n_frames]));
    }
}

/// Log spectrograms of `data` under `framing`, plus the global mean and std.
pub(crate) fn analyze_all(framing: &ModelFraming, data: &[Utterance]) -> Result<(Vec<Spectrogram>, f64, f64), ModelError> {
    let specs: Vec<Spectrogram> = data.par_iter().map(|u| framing.analyze(&u.waveform)).collect::<Result<_, _>>()?;
    let n: usize = specs.iter().map(|s| s.values().len()).sum();
    let mean = specs.iter().flat_map(|s| s.values()).sum::<f64>() / n as f64;
    let var = specs.iter().flat_map(|s| s.values()).map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    Ok((specs, mean, var.sqrt().max(1e-6)))
}

pub(crate) fn labels_for(data: &[Utterance], kind: LabelKind) -> Result<(Vec<String>, Vec<usize>), ModelError> {
    let entries: Vec<ManifestEntry> = data.iter().map(|u| u.entry.clone()).collect();
    let classes = kind.classes(&entries);
    let labels = entries.iter().map(|e| kind.label(e, &classes)).collect::<Result<_, _>>()?;
    Ok((classes, labels))
}

/// Trains a VAE. Returns the model and the per-epoch mean loss terms.
pub fn train_vae(data: &[Utterance], config: &VaeConfig, seed: u64) -> Result<(VaeModel, Vec<VaeLoss>), ModelError> {
    if data.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    let (classes, labels) = labels_for(data, config.label_kind)?;
    let mut m = VaeModel::init(config.clone(), classes, seed)?;
    let (specs, mean, std) = analyze_all(&config.framing, data)?;
    m.norm_mean = mean;
    m.norm_std = std;
    let samples: Vec<Sample> = specs
        .iter()
        .zip(&labels)
        .map(|(s, &label)| {
            let t = m.to_input(s)?;
            Ok(Sample { n_frames: t.shape()[2], values: t.into_data(), label })
        })
        .collect::<Result<_, ModelError>>()?;

    let adam = AdamConfig { lr: config.lr, ..AdamConfig::default() };
    let (b, crop) = (config.framing.n_bins(), config.crop_frames);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    let mut step = 0u64;
    for epoch in 0..config.epochs {
        let mut rng = seed::derived_rng(seed, "vae-epoch", epoch as u64);
        order.shuffle(&mut rng);
        let mut sum = VaeLoss::default();
        for batch in order.chunks(config.batch_size) {
            let mut x = Vec::with_capacity(batch.len() * b * crop);
            let mut y = Vec::with_capacity(batch.len());
            for &i in batch {
                let s = &samples[i];
                let offset = rng.random_range(0..=s.n_frames.saturating_sub(crop));
                crop_into(s, b, offset, crop, &mut x);
                y.push(s.label);
            }
            let mut g = Graph::new();
            let xv = g.input(Tensor::new(vec![batch.len(), b, crop], x)?);
            let (loss, terms) = m.batch_loss(&mut g, xv, &y, seed::derive(seed, "vae-step", step))?;
            g.backward(loss)?;
            m.params.zero_grad();
            m.params.accumulate_grads(&g);
            m.params.adam_step(&adam)?;
            sum.accumulate(&terms, batch.len() as f64 / samples.len() as f64);
            step += 1;
        }
        history.push(sum);
    }

    let zp: Vec<Vec<f64>> =
        specs.par_iter().map(|s| Ok(m.encode(s)?.mu_p.into_data())).collect::<Result<_, ModelError>>()?;
    m.neutral = Some(mean_rows(zp.iter()));
    m.class_means = (0..m.classes.len())
        .map(|k| {
            let rows: Vec<&Vec<f64>> = zp.iter().zip(&labels).filter(|(_, &l)| l == k).map(|(z, _)| z).collect();
            // A class absent from training falls back to the neutral factor.
            if rows.is_empty() {
                m.neutral.clone().unwrap_or_default()
            } else {
                mean_rows(rows.into_iter())
            }
        })
        .collect();
    Ok((m, history))
}

fn mean_rows<'a>(rows: impl Iterator<Item = &'a Vec<f64>>) -> Vec<f64> {
    let mut acc: Vec<f64> = Vec::new();
    let mut n = 0usize;
    for r in rows {
        if acc.is_empty() {
            acc = vec![0.0; r.len()];
        }
        acc.iter_mut().zip(r).for_each(|(a, v)| *a += v);
        n += 1;
    }
    acc.iter_mut().for_each(|a| *a /= n.max(1) as f64);
    acc
}

/// Output length in canonical-rate samples for an input waveform.
pub(crate) fn canonical_len(w: &Waveform) -> usize {
    if w.sample_rate_hz() == CANONICAL_RATE_HZ {
        w.len()
    } else {
        (w.len() as f64 * f64::from(CANONICAL_RATE_HZ) / f64::from(w.sample_rate_hz())).round() as usize
    }
}

/// Re-synthesizes `x` from its content factor and the target's private factor.
/// `seed` drives the Griffin-Lim phase initialization.
pub fn encrypt_vae(m: &VaeModel, x: &Waveform, target: &VaeTarget, seed: u64) -> Result<Waveform, ModelError> {
    let z_p = m.target_private(target)?;
    let spec = m.config.framing.analyze(x)?;
    let lat = m.encode(&spec)?;
    let out = m.decode(&lat.mu_c, &z_p)?;
    Ok(m.config.framing.synthesize(&out, canonical_len(x), seed)?)
}
