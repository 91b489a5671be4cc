//! Second-stage conditional GAN. The generator decodes a frozen content
//! factor with a label embedding in place of `z_p`; the discriminator has a
//! real/fake head `c2` and an attribute head `c2'`.

use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{argmax, AdamConfig, Graph, ParamStore, Tensor, TensorError, Var};
use crate::datasets::{LabelKind, Utterance};
use crate::seed;
use crate::spectral::Spectrogram;
use crate::vae::{analyze_all, canonical_len, crop_into, decoder_forward, init_decoder, labels_for, ModelError, Sample, VaeModel};
use crate::Waveform;

const LEAK: f64 = 0.2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GanConfig {
    pub label_kind: LabelKind,
    pub lr_g: f64,
    pub lr_d: f64,
    pub d_steps_per_g: usize,
    pub epochs: usize,
    /// Leading epochs that update only the discriminator.
    pub warmup_epochs: usize,
    pub batch_size: usize,
    pub crop_frames: usize,
    pub disc_channels: usize,
    /// Std of Gaussian noise added to every discriminator input during
    /// training, in normalized log-spectrum units.
    pub instance_noise: f64,
}

impl Default for GanConfig {
    fn default() -> Self {
        Self {
            label_kind: LabelKind::Gender,
            lr_g: 2e-4,
            lr_d: 2e-3,
            d_steps_per_g: 2,
            epochs: 10,
            warmup_epochs: 2,
            batch_size: 8,
            crop_frames: 32,
            disc_channels: 32,
            instance_noise: 1.0,
        }
    }
}

impl GanConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let mut bad = Vec::new();
        if !(self.lr_g > 0.0 && self.lr_g.is_finite()) {
            bad.push(format!("lr_g must be > 0, got {}", self.lr_g));
        }
        if !(self.lr_d > 0.0 && self.lr_d.is_finite()) {
            bad.push(format!("lr_d must be > 0, got {}", self.lr_d));
        }
        if self.d_steps_per_g == 0 {
            bad.push("d_steps_per_g must be >= 1".into());
        }
        if self.batch_size == 0 || self.disc_channels == 0 {
            bad.push("batch_size and disc_channels must be >= 1".into());
        }
        if self.crop_frames < 2 {
            bad.push("crop_frames must be >= 2".into());
        }
        if !(self.instance_noise >= 0.0 && self.instance_noise.is_finite()) {
            bad.push(format!("instance_noise must be >= 0, got {}", self.instance_noise));
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(ModelError::Config(bad.join("; ")))
        }
    }
}

/// Generator objective, batch means. `total == real + fake + class`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GeneratorLoss {
    pub total: f64,
    /// `log c2(x)`; carries no generator gradient.
    pub real: f64,
    /// `log(1 - c2(g))`.
    pub fake: f64,
    /// `-log P_c2'(y_target | g)`.
    pub class: f64,
}

/// Discriminator objective, batch means. `total == real + fake + class`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DiscriminatorLoss {
    pub total: f64,
    /// `-log c2(x)`.
    pub real: f64,
    /// `-log(1 - c2(g))`.
    pub fake: f64,
    /// `-log P_c2'(y_real | x)`.
    pub class: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GanEpoch {
    /// Discriminator-only epoch.
    pub warmup: bool,
    pub generator: GeneratorLoss,
    pub discriminator: DiscriminatorLoss,
    /// Real/fake accuracy of `c2` over real and generated crops.
    pub c2_accuracy: f64,
    /// Accuracy of `c2'` on real crops.
    pub c2_prime_accuracy: f64,
}

/// Target label for encryption.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum GanTarget {
    Class(String),
    /// Uniform over classes other than the source.
    Random,
}

impl FromStr for GanTarget {
    type Err = std::convert::Infallible;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(if s == "random" { GanTarget::Random } else { GanTarget::Class(s.to_string()) })
    }
}

#[derive(Serialize, Deserialize)]
struct GanMeta {
    config: GanConfig,
    classes: Vec<String>,
}

#[derive(Clone)]
pub struct GanModel {
    vae: VaeModel,
    generator: ParamStore,
    discriminator: ParamStore,
    config: GanConfig,
    classes: Vec<String>,
}

fn p(g: &mut Graph, store: &ParamStore, name: &str) -> Result<Var, TensorError> {
    Ok(g.param(store, store.id(name)?))
}

impl GanModel {
    /// Generator decoder copied from the VAE, embedding rows from the VAE
    /// class means when the label kinds agree.
    fn init(vae: VaeModel, config: GanConfig, classes: Vec<String>, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        if !vae.is_trained() {
            return Err(ModelError::Untrained);
        }
        if classes.len() < 2 {
            return Err(ModelError::Config(format!("need at least 2 classes, got {}", classes.len())));
        }
        let vc = vae.config().clone();
        let (b, k, dp) = (vc.framing.n_bins(), classes.len(), vc.private_dim);
        let mut rng = seed::derived_rng(seed, "gan-init", 0);
        let mut generator = ParamStore::new();
        init_decoder(&mut generator, "dec.", &vc, b, &mut rng)?;
        generator.load_values_from(&decoder_only(vae.params_ref())?)?;
        let embed = if vc.label_kind == config.label_kind && vae.classes() == classes.as_slice() {
            vae.class_means().iter().flatten().copied().collect()
        } else {
            Tensor::randn(&[k, dp], &mut rng).into_data().iter().map(|v| 0.1 * v).collect()
        };
        generator.add("embed", Tensor::new(vec![k, dp], embed)?)?;

        let c = config.disc_channels;
        let mut discriminator = ParamStore::new();
        discriminator.kaiming("conv0.w", &[c, b, 1], b, &mut rng)?;
        discriminator.zeros("conv0.b", &[c])?;
        discriminator.kaiming("conv1.w", &[c, c, 5], c * 5, &mut rng)?;
        discriminator.zeros("conv1.b", &[c])?;
        discriminator.kaiming("c2.w", &[1, c], c, &mut rng)?;
        discriminator.zeros("c2.b", &[1])?;
        discriminator.kaiming("c2p.w", &[k, c], c, &mut rng)?;
        discriminator.zeros("c2p.b", &[k])?;
        Ok(Self { vae, generator, discriminator, config, classes })
    }

    pub fn config(&self) -> &GanConfig {
        &self.config
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn label_kind(&self) -> LabelKind {
        self.config.label_kind
    }

    pub fn class_index(&self, name: &str) -> Result<usize, ModelError> {
        self.classes.iter().position(|c| c == name).ok_or_else(|| ModelError::UnknownTarget {
            target: name.to_string(),
            expected: self.classes.clone(),
        })
    }

    /// `z_c [N,Dc,T]` and labels to normalized spectra `[N,B,T]`.
    fn generate(&self, g: &mut Graph, z_c: Var, labels: &[usize]) -> Result<Var, TensorError> {
        let table = p(g, &self.generator, "embed")?;
        let z_p = g.rows(table, labels)?;
        decoder_forward(g, &self.generator, "dec.", z_c, z_p)
    }

    /// Returns `(c2 probability [N,1], c2' logits [N,K])`.
    fn discriminate(&self, g: &mut Graph, x: Var) -> Result<(Var, Var), TensorError> {
        let d = &self.discriminator;
        let (w, b) = (p(g, d, "conv0.w")?, p(g, d, "conv0.b")?);
        let h = g.conv1d(x, w, b)?;
        let h = g.leaky_relu(h, LEAK)?;
        let (w, b) = (p(g, d, "conv1.w")?, p(g, d, "conv1.b")?);
        let h = g.conv1d(h, w, b)?;
        let h = g.leaky_relu(h, LEAK)?;
        let pooled = g.mean_trailing(h, 2)?;
        let (w, b) = (p(g, d, "c2.w")?, p(g, d, "c2.b")?);
        let logit = g.linear(pooled, w, b)?;
        let prob = g.sigmoid(logit)?;
        let (w, b) = (p(g, d, "c2p.w")?, p(g, d, "c2p.b")?);
        Ok((prob, g.linear(pooled, w, b)?))
    }

    fn check_labels(&self, labels: &[usize]) -> Result<(), ModelError> {
        match labels.iter().find(|&&y| y >= self.classes.len()) {
            Some(&label) => Err(ModelError::Label { label, classes: self.classes.len() }),
            None => Ok(()),
        }
    }

    /// Posterior-mean content factor `[1,Dc,T]` of a log spectrogram.
    fn content(&self, x: &Spectrogram) -> Result<Tensor, ModelError> {
        let z = self.vae.encode(x)?.mu_c;
        let shape = [1, z.shape()[0], z.shape()[1]];
        Ok(z.reshape(&shape)?)
    }

    /// Generator loss on one utterance: `x_real` and its content factor `[Dc,T]` with a target label.
    pub fn generator_loss(&self, x_real: &Spectrogram, z_c: &Tensor, y_target: usize) -> Result<GeneratorLoss, ModelError> {
        self.check_labels(&[y_target])?;
        let x = self.vae.to_input(x_real)?;
        let zc = z_c.clone().reshape(&[1, z_c.shape()[0], z_c.shape().get(1).copied().unwrap_or(0)])?;
        let mut g = Graph::new();
        let (xv, zv) = (g.input(x), g.input(zc));
        let fake = self.generate(&mut g, zv, &[y_target])?;
        let (pr, _) = self.discriminate(&mut g, xv)?;
        let (pf, lf) = self.discriminate(&mut g, fake)?;
        Ok(generator_terms(&mut g, pr, pf, lf, &[y_target])?.1)
    }

    /// Discriminator loss on one real and one generated spectrogram.
    pub fn discriminator_loss(&self, x_real: &Spectrogram, x_fake: &Spectrogram, y_real: usize) -> Result<DiscriminatorLoss, ModelError> {
        self.check_labels(&[y_real])?;
        let (x, f) = (self.vae.to_input(x_real)?, self.vae.to_input(x_fake)?);
        let mut g = Graph::new();
        let (xv, fv) = (g.input(x), g.input(f));
        let (pr, lr) = self.discriminate(&mut g, xv)?;
        let (pf, _) = self.discriminate(&mut g, fv)?;
        Ok(discriminator_terms(&mut g, pr, pf, lr, &[y_real])?.1)
    }

    /// Generated log spectrogram for `x` under a target class index.
    pub fn convert(&self, x: &Spectrogram, y_target: usize) -> Result<Spectrogram, ModelError> {
        self.check_labels(&[y_target])?;
        let zc = self.content(x)?;
        let mut g = Graph::new();
        let zv = g.input(zc);
        let out = self.generate(&mut g, zv, &[y_target])?;
        self.vae.to_spectrogram(g.value(out))
    }

    /// `c2'` prediction on a log spectrogram.
    pub fn classify(&self, x: &Spectrogram) -> Result<usize, ModelError> {
        let input = self.vae.to_input(x)?;
        let mut g = Graph::new();
        let xv = g.input(input);
        let (_, logits) = self.discriminate(&mut g, xv)?;
        Ok(argmax(g.value(logits).data()))
    }

    /// Resolves a target to a class index. `Random` draws uniformly among the
    /// classes other than `source`.
    pub fn resolve_target(&self, target: &GanTarget, source: usize, seed: u64) -> Result<usize, ModelError> {
        match target {
            GanTarget::Class(name) => self.class_index(name),
            GanTarget::Random => {
                self.check_labels(&[source])?;
                let draw = seed::derived_rng(seed, "gan-target", 0).random_range(0..self.classes.len() - 1);
                Ok(if draw >= source { draw + 1 } else { draw })
            }
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        let mut all = ParamStore::new();
        for (prefix, store) in [("vae.", self.vae.params_ref()), ("gen.", &self.generator), ("disc.", &self.discriminator)] {
            for id in store.ids() {
                all.add(&format!("{prefix}{}", store.name(id)), store.value(id).clone())?;
            }
        }
        let vae_meta = self.vae.meta_json()?;
        let meta = serde_json::json!({
            "gan": GanMeta { config: self.config.clone(), classes: self.classes.clone() },
            "vae": serde_json::from_str::<serde_json::Value>(&vae_meta).map_err(|e| ModelError::Checkpoint(e.to_string()))?,
        });
        Ok(all.save(path, &meta.to_string())?)
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let (all, json) = ParamStore::load(path)?;
        let meta: serde_json::Value = serde_json::from_str(&json).map_err(|e| ModelError::Checkpoint(format!("gan metadata: {e}")))?;
        let gan: GanMeta = serde_json::from_value(meta["gan"].clone()).map_err(|e| ModelError::Checkpoint(format!("gan metadata: {e}")))?;
        let vae = VaeModel::from_parts(&strip_prefix(&all, "vae.")?, &meta["vae"].to_string())?;
        let mut m = Self::init(vae, gan.config, gan.classes, 0)?;
        m.generator.load_values_from(&strip_prefix(&all, "gen.")?)?;
        m.discriminator.load_values_from(&strip_prefix(&all, "disc.")?)?;
        Ok(m)
    }
}

fn strip_prefix(all: &ParamStore, prefix: &str) -> Result<ParamStore, ModelError> {
    let mut out = ParamStore::new();
    for id in all.ids() {
        if let Some(name) = all.name(id).strip_prefix(prefix) {
            out.add(name, all.value(id).clone())?;
        }
    }
    Ok(out)
}

fn decoder_only(vae: &ParamStore) -> Result<ParamStore, ModelError> {
    let mut out = ParamStore::new();
    for id in vae.ids().filter(|&id| vae.name(id).starts_with("dec.")) {
        out.add(vae.name(id), vae.value(id).clone())?;
    }
    Ok(out)
}

/// Generator loss from discriminator outputs: `log c2(x) + log(1 - c2(g)) - log P(y|g)`.
pub fn generator_terms(
    g: &mut Graph,
    p_real: Var,
    p_fake: Var,
    logits_fake: Var,
    y_target: &[usize],
) -> Result<(Var, GeneratorLoss), TensorError> {
    let lr = g.log_prob(p_real)?;
    let real = g.mean(lr)?;
    let lf = g.log_one_minus_prob(p_fake)?;
    let fake = g.mean(lf)?;
    let class = g.cross_entropy(logits_fake, y_target)?;
    let total = g.add_scalars(&[real, fake, class])?;
    let item = |v: Var| g.value(v).item();
    Ok((total, GeneratorLoss { total: item(total), real: item(real), fake: item(fake), class: item(class) }))
}

/// Discriminator loss from discriminator outputs: `-log c2(x) - log(1 - c2(g)) - log P(y|x)`.
pub fn discriminator_terms(
    g: &mut Graph,
    p_real: Var,
    p_fake: Var,
    logits_real: Var,
    y_real: &[usize],
) -> Result<(Var, DiscriminatorLoss), TensorError> {
    let lr = g.log_prob(p_real)?;
    let mr = g.mean(lr)?;
    let real = g.scale(mr, -1.0)?;
    let lf = g.log_one_minus_prob(p_fake)?;
    let mf = g.mean(lf)?;
    let fake = g.scale(mf, -1.0)?;
    let class = g.cross_entropy(logits_real, y_real)?;
    let total = g.add_scalars(&[real, fake, class])?;
    let item = |v: Var| g.value(v).item();
    Ok((total, DiscriminatorLoss { total: item(total), real: item(real), fake: item(fake), class: item(class) }))
}

/// A training utterance with its frozen content factor.
struct GanSample {
    x: Sample,
    z_c: Sample,
}

/// `x + std * N(0, 1)`, leaving `x` untouched when `std` is zero.
fn noisy(g: &mut Graph, x: Var, std: f64, seed: u64) -> Result<Var, TensorError> {
    if std == 0.0 {
        return Ok(x);
    }
    let shape = g.value(x).shape().to_vec();
    let noise = Tensor::randn(&shape, &mut seed::rng(seed)).into_data().into_iter().map(|v| v * std).collect();
    let n = g.input(Tensor::new(shape, noise)?);
    g.add(x, n)
}

fn random_other<R: Rng>(rng: &mut R, source: usize, k: usize) -> usize {
    let draw = rng.random_range(0..k - 1);
    if draw >= source {
        draw + 1
    } else {
        draw
    }
}

/// Trains the GAN on top of a trained VAE, whose encoder stays frozen.
/// Generator targets are drawn from the classes other than each source. The
/// first `warmup_epochs` epochs train only the discriminator.
pub fn train_gan(data: &[Utterance], vae: &VaeModel, config: &GanConfig, seed: u64) -> Result<(GanModel, Vec<GanEpoch>), ModelError> {
    if data.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    let (classes, labels) = labels_for(data, config.label_kind)?;
    let mut m = GanModel::init(vae.clone(), config.clone(), classes, seed)?;
    let (specs, _, _) = analyze_all(&vae.config().framing, data)?;
    let samples: Vec<GanSample> = specs
        .par_iter()
        .zip(&labels)
        .map(|(s, &label)| {
            let x = vae.to_input(s)?;
            let z = vae.encode(s)?.mu_c;
            let n_frames = x.shape()[2];
            Ok(GanSample { x: Sample { values: x.into_data(), n_frames, label }, z_c: Sample { values: z.into_data(), n_frames, label } })
        })
        .collect::<Result<_, ModelError>>()?;

    let (b, dc, crop, k) = (vae.config().framing.n_bins(), vae.config().content_dim, config.crop_frames, m.classes.len());
    let adam_g = AdamConfig { lr: config.lr_g, ..AdamConfig::default() };
    let adam_d = AdamConfig { lr: config.lr_d, ..AdamConfig::default() };
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    let mut step = 0u64;
    for epoch in 0..config.epochs {
        let mut rng = seed::derived_rng(seed, "gan-epoch", epoch as u64);
        order.shuffle(&mut rng);
        let warmup = epoch < config.warmup_epochs;
        let mut ep = GanEpoch { warmup, ..GanEpoch::default() };
        let (mut c2_hits, mut c2_total, mut cls_hits, mut cls_total) = (0usize, 0usize, 0usize, 0usize);
        for batch in order.chunks(config.batch_size) {
            let n = batch.len();
            let mut x = Vec::with_capacity(n * b * crop);
            let mut z = Vec::with_capacity(n * dc * crop);
            let mut y_real = Vec::with_capacity(n);
            let mut y_tgt = Vec::with_capacity(n);
            for &i in batch {
                let s = &samples[i];
                let offset = rng.random_range(0..=s.x.n_frames.saturating_sub(crop));
                crop_into(&s.x, b, offset, crop, &mut x);
                crop_into(&s.z_c, dc, offset, crop, &mut z);
                y_real.push(s.x.label);
                y_tgt.push(random_other(&mut rng, s.x.label, k));
            }
            let xt = Tensor::new(vec![n, b, crop], x)?;
            let zt = Tensor::new(vec![n, dc, crop], z)?;

            let fake = {
                let mut g = Graph::new();
                let zv = g.input(zt.clone());
                let f = m.generate(&mut g, zv, &y_tgt)?;
                g.value(f).clone()
            };
            for d_step in 0..config.d_steps_per_g {
                let noise_seed = seed::derive(seed, "gan-d-noise", step * config.d_steps_per_g as u64 + d_step as u64);
                let mut g = Graph::new();
                let (xv, fv) = (g.input(xt.clone()), g.input(fake.clone()));
                let xv = noisy(&mut g, xv, config.instance_noise, noise_seed)?;
                let fv = noisy(&mut g, fv, config.instance_noise, seed::derive(noise_seed, "fake", 0))?;
                let (pr, lr) = m.discriminate(&mut g, xv)?;
                let (pf, _) = m.discriminate(&mut g, fv)?;
                let (loss, terms) = discriminator_terms(&mut g, pr, pf, lr, &y_real)?;
                c2_hits += g.value(pr).data().iter().filter(|&&q| q > 0.5).count();
                c2_hits += g.value(pf).data().iter().filter(|&&q| q < 0.5).count();
                c2_total += 2 * n;
                let logits = g.value(lr).data();
                cls_hits += y_real.iter().enumerate().filter(|(r, &y)| argmax(&logits[r * k..(r + 1) * k]) == y).count();
                cls_total += n;
                g.backward(loss)?;
                m.discriminator.zero_grad();
                m.discriminator.accumulate_grads(&g);
                m.discriminator.adam_step(&adam_d)?;
                let w = n as f64 / (samples.len() * config.d_steps_per_g) as f64;
                ep.discriminator.total += w * terms.total;
                ep.discriminator.real += w * terms.real;
                ep.discriminator.fake += w * terms.fake;
                ep.discriminator.class += w * terms.class;
            }

            let noise_seed = seed::derive(seed, "gan-g-noise", step);
            let mut g = Graph::new();
            let (xv, zv) = (g.input(xt), g.input(zt));
            let fake = m.generate(&mut g, zv, &y_tgt)?;
            let xv = noisy(&mut g, xv, config.instance_noise, noise_seed)?;
            let fake = noisy(&mut g, fake, config.instance_noise, seed::derive(noise_seed, "fake", 0))?;
            let (pr, _) = m.discriminate(&mut g, xv)?;
            let (pf, lf) = m.discriminate(&mut g, fake)?;
            let (loss, terms) = generator_terms(&mut g, pr, pf, lf, &y_tgt)?;
            if !warmup {
                g.backward(loss)?;
                m.generator.zero_grad();
                m.generator.accumulate_grads(&g);
                m.generator.adam_step(&adam_g)?;
            }
            let w = n as f64 / samples.len() as f64;
            ep.generator.total += w * terms.total;
            ep.generator.real += w * terms.real;
            ep.generator.fake += w * terms.fake;
            ep.generator.class += w * terms.class;
            step += 1;
        }
        ep.c2_accuracy = c2_hits as f64 / c2_total.max(1) as f64;
        ep.c2_prime_accuracy = cls_hits as f64 / cls_total.max(1) as f64;
        history.push(ep);
    }
    Ok((m, history))
}

/// Re-synthesizes `x` as the target class. `source` is the class of `x`,
/// needed only for `GanTarget::Random`; when absent, `c2'` supplies it.
pub fn encrypt_gan(m: &GanModel, x: &Waveform, target: &GanTarget, source: Option<&str>, seed: u64) -> Result<Waveform, ModelError> {
    let framing = m.vae.config().framing;
    let spec = framing.analyze(x)?;
    let y = match (target, source) {
        (GanTarget::Class(name), _) => m.class_index(name)?,
        (GanTarget::Random, Some(src)) => m.resolve_target(target, m.class_index(src)?, seed)?,
        (GanTarget::Random, None) => m.resolve_target(target, m.classify(&spec)?, seed)?,
    };
    let out = m.convert(&spec, y)?;
    Ok(framing.synthesize(&out, canonical_len(x), seed)?)
}

/// Checks that a request's label kind matches the model.
pub fn ensure_label_kind(m: &GanModel, kind: LabelKind) -> Result<(), ModelError> {
    if m.label_kind() == kind {
        Ok(())
    } else {
        Err(ModelError::LabelKindMismatch { model: m.label_kind().name(), request: kind.name() })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{grad_check, grad_check_params};
    use crate::datasets::{synth_corpus_in_memory, SynthConfig};
    use crate::vae::{train_vae, VaeConfig};
    use std::sync::OnceLock;

    const LN2: f64 = std::f64::consts::LN_2;

    fn plug_in(p_real: f64, p_fake: f64, logits: [f64; 2]) -> (GeneratorLoss, DiscriminatorLoss) {
        let mut g = Graph::new();
        let pr = g.input(Tensor::new(vec![1, 1], vec![p_real]).unwrap());
        let pf = g.input(Tensor::new(vec![1, 1], vec![p_fake]).unwrap());
        let lg = g.input(Tensor::new(vec![1, 2], logits.to_vec()).unwrap());
        let gen = generator_terms(&mut g, pr, pf, lg, &[0]).unwrap().1;
        let dis = discriminator_terms(&mut g, pr, pf, lg, &[0]).unwrap().1;
        (gen, dis)
    }

    #[test]
    fn closed_form_plug_ins() {
        let (gen, dis) = plug_in(0.5, 0.5, [0.0, 0.0]);
        assert_eq!(gen.total, -LN2);
        assert_eq!(dis.total, 3.0 * LN2);
        assert_eq!(gen.total, gen.real + gen.fake + gen.class);
        assert_eq!(dis.total, dis.real + dis.fake + dis.class);
        // The shared terms are negatives of each other.
        assert_eq!(gen.real, -dis.real);
        assert_eq!(gen.fake, -dis.fake);
    }

    #[test]
    fn limits_are_clamped() {
        // Perfect fooling: log(1 - 1) clamps at log(PROB_FLOOR).
        let (gen, _) = plug_in(0.5, 1.0, [0.0, 0.0]);
        assert!(gen.fake.is_finite() && (gen.fake - 1e-6f64.ln()).abs() < 1e-9);
        // Perfect discriminator leaves only the classification term.
        let (_, dis) = plug_in(1.0, 0.0, [3.0, -1.0]);
        assert!((dis.total - dis.class).abs() < 1e-5);
        let expected_class = -(3.0 - (3.0f64.exp() + (-1.0f64).exp()).ln());
        assert!((dis.class - expected_class).abs() < 1e-12);
    }

    #[test]
    fn loss_terms_gradients() {
        // Row 0: c2 logits on real, row 1: on fake, rows 2-3: c2' logits.
        let x = Tensor::new(vec![4, 4], vec![0.3, -0.6, 1.2, -0.4, 0.8, 0.1, -1.1, 0.5, 0.7, -0.2, 0.4, 1.3, -0.9, 0.6, 0.25, -0.35]).unwrap();
        let split = |g: &mut Graph, v: Var| -> Result<(Var, Var, Var), TensorError> {
            let s = g.sigmoid(v)?;
            let pr = g.rows(s, &[0])?;
            let pr = g.reshape(pr, &[4, 1])?;
            let pf = g.rows(s, &[1])?;
            let pf = g.reshape(pf, &[4, 1])?;
            let l = g.rows(v, &[2, 3])?;
            Ok((pr, pf, g.reshape(l, &[4, 2])?))
        };
        let gen = grad_check(
            |g, v| {
                let (pr, pf, l) = split(g, v)?;
                Ok(generator_terms(g, pr, pf, l, &[0, 1, 1, 0])?.0)
            },
            &x,
            1e-6,
        )
        .unwrap();
        let dis = grad_check(
            |g, v| {
                let (pr, pf, l) = split(g, v)?;
                Ok(discriminator_terms(g, pr, pf, l, &[1, 0, 0, 1])?.0)
            },
            &x,
            1e-6,
        )
        .unwrap();
        assert!(gen < 1e-4 && dis < 1e-4, "gen {gen}, dis {dis}");
    }

    struct Fixture {
        data: Vec<Utterance>,
        vae: VaeModel,
    }

    fn fixture() -> &'static Fixture {
        static F: OnceLock<Fixture> = OnceLock::new();
        F.get_or_init(|| {
            let data = synth_corpus_in_memory(&SynthConfig {
                n_speakers_per_gender: 2,
                utts_per_speaker: 2,
                seed: 4,
                ..SynthConfig::default()
            })
            .unwrap();
            let (vae, _) = train_vae(&data, &VaeConfig { channels: 8, content_dim: 4, private_dim: 4, epochs: 2, ..VaeConfig::default() }, 1).unwrap();
            Fixture { data, vae }
        })
    }

    fn small_gan_config() -> GanConfig {
        GanConfig { epochs: 1, batch_size: 4, disc_channels: 8, ..GanConfig::default() }
    }

    #[test]
    fn network_gradients_through_both_models() {
        let f = fixture();
        let (m, _) = train_gan(&f.data[..4], &f.vae, &small_gan_config(), 2).unwrap();
        let framing = f.vae.config().framing;
        let spec = framing.analyze(&f.data[0].waveform).unwrap();
        let x = m.vae.to_input(&spec).unwrap().into_data();
        let t_len = spec.n_frames().min(6);
        let b = framing.n_bins();
        let xs: Vec<f64> = (0..b).flat_map(|k| x[k * spec.n_frames()..k * spec.n_frames() + t_len].to_vec()).collect();
        let xt = Tensor::new(vec![1, b, t_len], xs).unwrap();
        let zt = {
            let z = m.content(&spec).unwrap();
            let dc = z.shape()[1];
            let n = z.shape()[2];
            let v: Vec<f64> = (0..dc).flat_map(|c| z.data()[c * n..c * n + t_len].to_vec()).collect();
            Tensor::new(vec![1, dc, t_len], v).unwrap()
        };

        let mut disc = m.discriminator.clone();
        let fake = {
            let mut g = Graph::new();
            let zv = g.input(zt.clone());
            let out = m.generate(&mut g, zv, &[1]).unwrap();
            g.value(out).clone()
        };
        let d_err = grad_check_params(
            &mut disc,
            |g, s| {
                let mut mm = m.clone();
                mm.discriminator = s.clone();
                let (xv, fv) = (g.input(xt.clone()), g.input(fake.clone()));
                let (pr, lr) = mm.discriminate(g, xv)?;
                let (pf, _) = mm.discriminate(g, fv)?;
                Ok(discriminator_terms(g, pr, pf, lr, &[0])?.0)
            },
            1e-6,
            4,
        )
        .unwrap();
        let mut gen = m.generator.clone();
        let g_err = grad_check_params(
            &mut gen,
            |g, s| {
                let mut mm = m.clone();
                mm.generator = s.clone();
                let (xv, zv) = (g.input(xt.clone()), g.input(zt.clone()));
                let f = mm.generate(g, zv, &[1])?;
                let (pr, _) = mm.discriminate(g, xv)?;
                let (pf, lf) = mm.discriminate(g, f)?;
                Ok(generator_terms(g, pr, pf, lf, &[1])?.0)
            },
            1e-6,
            4,
        )
        .unwrap();
        assert!(d_err < 1e-4 && g_err < 1e-4, "disc {d_err}, gen {g_err}");
    }

    #[test]
    fn smoke_training_is_finite_and_deterministic() {
        let f = fixture();
        let (m, h1) = train_gan(&f.data[..4], &f.vae, &small_gan_config(), 3).unwrap();
        let (_, h2) = train_gan(&f.data[..4], &f.vae, &small_gan_config(), 3).unwrap();
        assert_eq!(h1, h2);
        let e = &h1[0];
        for v in [e.generator.total, e.discriminator.total, e.c2_accuracy, e.c2_prime_accuracy] {
            assert!(v.is_finite());
        }
        assert!((e.generator.total - (e.generator.real + e.generator.fake + e.generator.class)).abs() < 1e-12);
        assert!((e.discriminator.total - (e.discriminator.real + e.discriminator.fake + e.discriminator.class)).abs() < 1e-12);

        let spec = f.vae.config().framing.analyze(&f.data[1].waveform).unwrap();
        let z = m.content(&spec).unwrap();
        let z = z.clone().reshape(&z.shape()[1..]).unwrap();
        let gl = m.generator_loss(&spec, &z, 1).unwrap();
        assert_eq!(gl.total, gl.real + gl.fake + gl.class);
        let fake = m.convert(&spec, 1).unwrap();
        let dl = m.discriminator_loss(&spec, &fake, 0).unwrap();
        assert_eq!(dl.total, dl.real + dl.fake + dl.class);
        // Same inputs: shared terms flip sign.
        assert!((gl.real + dl.real).abs() < 1e-12 && (gl.fake + dl.fake).abs() < 1e-12);
        assert!(matches!(m.generator_loss(&spec, &z, 2), Err(ModelError::Label { .. })));
    }

    #[test]
    fn random_target_never_returns_source() {
        let f = fixture();
        let cfg = GanConfig { label_kind: LabelKind::Speaker, ..small_gan_config() };
        let (m, _) = train_gan(&f.data, &f.vae, &cfg, 1).unwrap();
        let k = m.classes().len();
        assert_eq!(k, 4);
        let mut seen = vec![0usize; k];
        for draw in 0..1000u64 {
            let source = (draw % k as u64) as usize;
            let y = m.resolve_target(&GanTarget::Random, source, draw).unwrap();
            assert_ne!(y, source);
            seen[y] += 1;
        }
        assert!(seen.iter().all(|&c| c > 150), "{seen:?}");
    }

    #[test]
    fn encryption_contracts_and_checkpoint() {
        let f = fixture();
        let (m, _) = train_gan(&f.data, &f.vae, &small_gan_config(), 1).unwrap();
        let w = &f.data[0].waveform;
        let t = GanTarget::Class("F".into());
        let a = encrypt_gan(&m, w, &t, None, 7).unwrap();
        assert_eq!(a, encrypt_gan(&m, w, &t, None, 7).unwrap());
        assert!(a.len().abs_diff(w.len()) <= f.vae.config().framing.hop);
        assert!(encrypt_gan(&m, w, &GanTarget::Random, Some("M"), 7).is_ok());
        assert!(encrypt_gan(&m, w, &GanTarget::Random, None, 7).is_ok());
        assert!(matches!(encrypt_gan(&m, w, &GanTarget::Class("Q".into()), None, 7), Err(ModelError::UnknownTarget { .. })));
        assert!(ensure_label_kind(&m, LabelKind::Gender).is_ok());
        assert!(matches!(ensure_label_kind(&m, LabelKind::Accent), Err(ModelError::LabelKindMismatch { .. })));

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("gan.ckpt");
        m.save(&path).unwrap();
        let back = GanModel::load(&path).unwrap();
        assert_eq!(back.classes(), m.classes());
        let b = encrypt_gan(&back, w, &t, None, 7).unwrap();
        let err = a.samples().iter().zip(b.samples()).map(|(x, y)| (x - y).abs()).fold(0.0f32, f32::max);
        assert!(err < 1e-2, "max sample diff {err}");
    }

    #[test]
    fn requires_trained_vae() {
        let f = fixture();
        let raw = VaeModel::untrained(f.vae.config().clone(), f.vae.classes().to_vec(), 0).unwrap();
        assert!(matches!(train_gan(&f.data, &raw, &small_gan_config(), 0), Err(ModelError::Untrained)));
        assert!(matches!(train_gan(&[], &f.vae, &small_gan_config(), 0), Err(ModelError::EmptyDataset)));
    }
}
