//! End-to-end acceptance checks on the synthetic corpus. Prints one
//! PASS/FAIL line per criterion and exits non-zero if any fails.
//!
//! `ACCEPTANCE_ONLY=2,8` restricts the run to the listed criteria.

use std::collections::{BTreeMap, HashSet, VecDeque};
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;

use voxmask_core::audio::add_gaussian_noise;
use voxmask_core::autodiff::{grad_check, Graph, Tensor, TensorError, Var};
use voxmask_core::datasets::{accent_formants, split_speakers, synth_corpus_in_memory, synth_utterance, LabelKind, SynthConfig, Utterance};
use voxmask_core::eval::{
    cer, classification_accuracy, edit_distance, finetune_classifier, noise_tradeoff_experiment, pretrain_classifier, wer, ClassifierConfig,
    Hypotheses,
};
use voxmask_core::gan::{discriminator_terms, encrypt_gan, generator_terms, train_gan, GanConfig, GanTarget};
use voxmask_core::pitch::{estimate_f0_track, envelope_peaks_hz, standardize_pitch, utterance_f0, DEFAULT_FMAX_HZ, DEFAULT_FMIN_HZ};
use voxmask_core::spectral::{full_spectrum_norm, griffin_lim_traced, istft, log_magnitude, mel_spectrogram, stft, Spectrogram};
use voxmask_core::vae::{encrypt_vae, train_vae, VaeConfig, VaeTarget};
use voxmask_core::{seed, Waveform};

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];
const NOISE_STDS: [f64; 5] = [0.0, 0.01, 0.02, 0.03, 0.04];
const REF_F0: f64 = 165.0;
const GAN_EVAL_TARGET: &str = "M";

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn main() {
    let only: Option<HashSet<u32>> =
        std::env::var("ACCEPTANCE_ONLY").ok().map(|s| s.split(',').filter_map(|v| v.trim().parse().ok()).collect());
    let want = |id: u32| only.as_ref().is_none_or(|o| o.contains(&id));

    let seed_runs: std::cell::OnceCell<Vec<SeedRun>> = std::cell::OnceCell::new();
    let runs = || -> &Vec<SeedRun> {
        seed_runs.get_or_init(|| {
            SEEDS
                .iter()
                .map(|&s| {
                    let t = Instant::now();
                    let r = SeedRun::compute(s);
                    eprintln!("  [seed {s}] pipeline in {:.0}s: {r:?}", t.elapsed().as_secs_f64());
                    r
                })
                .collect()
        })
    };

    let mut failed = 0;
    let mut report = |id: u32, name: &str, o: Outcome| {
        println!("criterion {id:>2} {} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        if !o.pass {
            failed += 1;
        }
    };

    if want(1) {
        report(1, "pitch standardization contract", criterion_1());
    }
    if want(2) {
        report(2, "privacy at n=0", criterion_2(runs()));
    }
    if want(3) {
        report(3, "finetune vulnerability", criterion_3(runs()));
    }
    if want(4) {
        report(4, "noise tradeoff", criterion_4(runs()));
    }
    if want(5) {
        report(5, "VAE training", criterion_5());
    }
    if want(6) {
        report(6, "GAN losses", criterion_6());
    }
    if want(7) {
        report(7, "encryption privacy parity", criterion_7(runs()));
    }
    if want(8) {
        report(8, "metric oracles", criterion_8());
    }
    if want(9) {
        report(9, "DSP oracles", criterion_9());
    }
    if want(10) {
        report(10, "CLI determinism", criterion_10());
    }
    if failed > 0 {
        println!("acceptance: {failed} criterion/criteria failed");
        std::process::exit(1);
    }
    println!("acceptance: all selected criteria passed");
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

// ---------------------------------------------------------------- 1

fn criterion_1() -> Outcome {
    let t = Instant::now();
    let n = 60;
    let mut rng = seed::rng(101);
    let cases: Vec<(f64, Vec<f64>, u64)> = (0..n)
        .map(|i| {
            let f0 = if i % 2 == 0 { rng.random_range(100.0..=140.0) } else { rng.random_range(200.0..=240.0) };
            let formants = accent_formants(rng.random_range(0..5), rng.random_range(0..2), rng.random_range(0.96..=1.04));
            (f0, formants, i as u64)
        })
        .collect();
    // Displacement is measured against the same vocal tract synthesized
    // directly at the reference F0, so estimator bias from harmonic spacing
    // cancels. One entry per (utterance, formant).
    let results: Vec<(bool, Vec<f64>)> = cases
        .par_iter()
        .map(|(f0, formants, s)| {
            let w = synth_utterance(*f0, formants, 0.75, *s).unwrap();
            let out = standardize_pitch(&w, REF_F0).unwrap().waveform;
            let track = estimate_f0_track(&out, DEFAULT_FMIN_HZ, DEFAULT_FMAX_HZ).unwrap();
            let within = utterance_f0(&track).map(|f| (f - REF_F0).abs() <= 0.03 * REF_F0).unwrap_or(false);
            let ideal = envelope_peaks_hz(&synth_utterance(REF_F0, formants, 0.75, *s).unwrap()).unwrap();
            let got = envelope_peaks_hz(&out).unwrap();
            let nearest = |peaks: &[f64], f: f64| peaks.iter().copied().min_by(|a, b| (a - f).abs().total_cmp(&(b - f).abs())).unwrap();
            let disp = formants
                .iter()
                .map(|&f| {
                    let r = nearest(&ideal, f);
                    (nearest(&got, r) - r).abs() / r
                })
                .collect();
            (within, disp)
        })
        .collect();
    let secs = t.elapsed().as_secs_f64();
    let within = results.iter().filter(|r| r.0).count() as f64 / n as f64;
    let mut disp: Vec<f64> = results.iter().flat_map(|r| r.1.iter().copied()).collect();
    disp.sort_by(f64::total_cmp);
    let mean = disp.iter().sum::<f64>() / disp.len() as f64;
    let p90 = disp[disp.len() * 9 / 10];
    let max = disp[disp.len() - 1];
    outcome(
        within >= 0.95 && mean < 0.05 && secs < 60.0,
        format!(
            "{n} utterances, {:.1}% within 3% of {REF_F0} Hz, formant displacement mean {:.2}% p90 {:.2}% max {:.2}%, {secs:.1}s",
            within * 100.0,
            mean * 100.0,
            p90 * 100.0,
            max * 100.0
        ),
    )
}

// ---------------------------------------------------------------- 2, 3, 4, 7

#[derive(Debug)]
struct SeedRun {
    clean: f64,
    pitch: [f64; 2],
    vae: [f64; 2],
    gan: [f64; 2],
    noise_acc: Vec<f64>,
    noise_cer: Vec<f64>,
}

fn split(corpus: Vec<Utterance>, seed: u64) -> (Vec<Utterance>, Vec<Utterance>) {
    let entries: Vec<_> = corpus.iter().map(|u| u.entry.clone()).collect();
    let (_, test_e) = split_speakers(&entries, 2, seed).unwrap();
    let ids: HashSet<_> = test_e.iter().map(|e| e.utt_id.clone()).collect();
    let (test, train): (Vec<_>, Vec<_>) = corpus.into_iter().partition(|u| ids.contains(&u.entry.utt_id));
    (train, test)
}

fn map_audio(v: &[Utterance], f: impl Fn(usize, &Waveform) -> Waveform + Sync) -> Vec<Utterance> {
    v.par_iter().enumerate().map(|(i, u)| Utterance { entry: u.entry.clone(), waveform: f(i, &u.waveform) }).collect()
}

impl SeedRun {
    fn compute(s: u64) -> Self {
        let synth = SynthConfig { seed: s, ..SynthConfig::default() };
        let (train, test) = split(synth_corpus_in_memory(&synth).unwrap(), s);
        let c = pretrain_classifier(&train, LabelKind::Gender, &ClassifierConfig::default(), s).unwrap();
        let acc = |data: &[Utterance]| classification_accuracy(&c, data).unwrap();
        let n0_n2 = |tr: &[Utterance], te: &[Utterance]| {
            let f = finetune_classifier(&c, tr, 2, s).unwrap();
            [acc(te), classification_accuracy(&f, te).unwrap()]
        };

        let std_pitch = |_: usize, w: &Waveform| standardize_pitch(w, REF_F0).unwrap().waveform;
        let pitch = n0_n2(&map_audio(&train, std_pitch), &map_audio(&test, std_pitch));

        let (vae_model, _) = train_vae(&train, &VaeConfig::default(), s).unwrap();
        let vae_enc = |i: usize, w: &Waveform| encrypt_vae(&vae_model, w, &VaeTarget::Neutral, i as u64).unwrap();
        let vae = n0_n2(&map_audio(&train, vae_enc), &map_audio(&test, vae_enc));

        let (gan_model, _) = train_gan(&train, &vae_model, &GanConfig::default(), s).unwrap();
        let target = GanTarget::Class(GAN_EVAL_TARGET.into());
        let gan_enc = |i: usize, w: &Waveform| encrypt_gan(&gan_model, w, &target, None, i as u64).unwrap();
        let gan = n0_n2(&map_audio(&train, gan_enc), &map_audio(&test, gan_enc));

        let recognizer = ToyRecognizer::fit(&train, &synth);
        let hyps: Vec<Hypotheses> = NOISE_STDS
            .iter()
            .map(|&std| {
                test.par_iter()
                    .enumerate()
                    .map(|(i, u)| {
                        let noisy = add_gaussian_noise(&u.waveform, std, seed::derive(s, "tradeoff-noise", i as u64)).unwrap();
                        (u.entry.utt_id.clone(), recognizer.transcribe(&noisy))
                    })
                    .collect::<BTreeMap<_, _>>()
            })
            .collect();
        let report = noise_tradeoff_experiment(&c, &test, &NOISE_STDS, s, Some(&hyps)).unwrap();
        SeedRun {
            clean: acc(&test),
            pitch,
            vae,
            gan,
            noise_acc: report.rows.iter().map(|r| r.accuracy).collect(),
            noise_cer: report.rows.iter().map(|r| r.cer.unwrap()).collect(),
        }
    }
}

/// Nearest-centroid syllable recognizer over mean log-mel frames. Stands in
/// for an ASR system so CER can be measured without external models.
struct ToyRecognizer {
    centroids: Vec<(String, Vec<f64>)>,
    syllables: usize,
    stride: usize,
    len: usize,
}

impl ToyRecognizer {
    fn fit(train: &[Utterance], cfg: &SynthConfig) -> Self {
        let len = (cfg.syllable_s * 16_000.0).round() as usize;
        let stride = len - 160;
        let mut r = Self { centroids: Vec::new(), syllables: cfg.syllables_per_utt, stride, len };
        let mut sums: BTreeMap<String, (Vec<f64>, usize)> = BTreeMap::new();
        for u in train {
            for (word, feat) in u.entry.transcript.split(' ').zip(r.features(&u.waveform)) {
                let e = sums.entry(word.to_string()).or_insert((vec![0.0; feat.len()], 0));
                e.0.iter_mut().zip(&feat).for_each(|(a, b)| *a += b);
                e.1 += 1;
            }
        }
        r.centroids = sums.into_iter().map(|(w, (s, n))| (w, s.into_iter().map(|v| v / n as f64).collect())).collect();
        r
    }

    fn features(&self, w: &Waveform) -> Vec<Vec<f64>> {
        (0..self.syllables)
            .map(|k| {
                let start = k * self.stride + self.len / 4;
                let end = (start + self.len / 2).min(w.len());
                let seg = Waveform::new(w.samples()[start.min(end)..end].to_vec(), w.sample_rate_hz()).unwrap();
                let mel = mel_spectrogram(&stft(&seg, 512, 128).unwrap(), 24, 0.0, 8000.0).unwrap();
                (0..mel.n_bins()).map(|b| (0..mel.n_frames()).map(|t| mel.frame(t)[b]).sum::<f64>() / mel.n_frames() as f64).collect()
            })
            .collect()
    }

    fn transcribe(&self, w: &Waveform) -> String {
        let words: Vec<&str> = self
            .features(w)
            .iter()
            .map(|f| {
                let d = |c: &[f64]| c.iter().zip(f).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
                self.centroids.iter().min_by(|a, b| d(&a.1).total_cmp(&d(&b.1))).map(|c| c.0.as_str()).unwrap_or("")
            })
            .collect();
        words.join(" ")
    }
}

fn vote(runs: &[SeedRun], per_seed: impl Fn(&SeedRun) -> (bool, String)) -> Outcome {
    let results: Vec<(bool, String)> = runs.iter().map(per_seed).collect();
    let passed = results.iter().filter(|r| r.0).count();
    let detail = results.iter().zip(SEEDS).map(|((p, d), s)| format!("seed {s} {} [{d}]", if *p { "ok" } else { "no" })).collect::<Vec<_>>();
    outcome(passed >= 4, format!("{passed}/5 seeds; {}", detail.join("; ")))
}

fn criterion_2(runs: &[SeedRun]) -> Outcome {
    vote(runs, |r| (r.clean >= 0.95 && r.pitch[0] <= 0.65, format!("clean {:.3}, pitch n0 {:.3}", r.clean, r.pitch[0])))
}

fn criterion_3(runs: &[SeedRun]) -> Outcome {
    vote(runs, |r| (r.pitch[1] - r.pitch[0] >= 0.10, format!("pitch n0 {:.3} -> n2 {:.3}", r.pitch[0], r.pitch[1])))
}

fn criterion_4(runs: &[SeedRun]) -> Outcome {
    vote(runs, |r| {
        let a = &r.noise_acc;
        let monotone = a.windows(2).all(|w| w[1] <= w[0] + 0.03);
        let drop = a[a.len() - 1] <= a[0] - 0.10;
        let cer_up = r.noise_cer.windows(2).all(|w| w[1] >= w[0]);
        let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join(" ");
        (monotone && drop && cer_up, format!("acc {} | cer {}", fmt(a), fmt(&r.noise_cer)))
    })
}

fn criterion_7(runs: &[SeedRun]) -> Outcome {
    vote(runs, |r| {
        (
            r.vae[1] <= r.pitch[1] && r.gan[1] <= r.pitch[1],
            format!("n2: vae {:.3}, gan {:.3}, pitch {:.3}", r.vae[1], r.gan[1], r.pitch[1]),
        )
    })
}

// ---------------------------------------------------------------- 5

fn criterion_5() -> Outcome {
    let t = Instant::now();
    let data = synth_corpus_in_memory(&SynthConfig { n_speakers_per_gender: 8, utts_per_speaker: 4, seed: 5, ..SynthConfig::default() }).unwrap();
    assert_eq!(data.len(), 64);
    let (model, hist) = train_vae(&data, &VaeConfig::default(), 5).unwrap();
    let (first, last) = (hist[0].recon, hist[hist.len() - 1].recon);
    let kls: Vec<f64> = [0.0, 0.1, 1.0]
        .iter()
        .map(|&l| train_vae(&data, &VaeConfig { lambda_dis: l, ..VaeConfig::default() }, 5).unwrap().1.last().unwrap().kl_divergence)
        .collect();
    let framing = model.config().framing;
    let specs: Vec<Spectrogram> = data[..2].iter().map(|u| framing.analyze(&u.waveform).unwrap()).collect();
    let labels: Vec<usize> = data[..2].iter().map(|u| LabelKind::Gender.label(&u.entry, model.classes()).unwrap()).collect();
    let batch: Vec<(&Spectrogram, usize)> = specs.iter().zip(labels).collect();
    let grad_err = model.loss_gradient_check(&batch, 8, 4, 9).unwrap();
    let secs = t.elapsed().as_secs_f64();
    let recon_ok = last <= 0.5 * first;
    let kl_ok = kls.windows(2).all(|w| w[1] <= w[0]);
    outcome(
        recon_ok && kl_ok && grad_err < 1e-4 && secs < 600.0,
        format!(
            "recon {first:.3} -> {last:.3} ({:.2}x), final KL at lambda_dis 0/0.1/1 = {:.2}/{:.2}/{:.2}, grad rel err {grad_err:.2e}, {secs:.0}s",
            last / first,
            kls[0],
            kls[1],
            kls[2]
        ),
    )
}

// ---------------------------------------------------------------- 6

fn plug_in(p_real: &[f64], p_fake: &[f64], logits: &[f64], y: &[usize]) -> (voxmask_core::gan::GeneratorLoss, voxmask_core::gan::DiscriminatorLoss) {
    let n = p_real.len();
    let mut g = Graph::new();
    let pr = g.input(Tensor::new(vec![n, 1], p_real.to_vec()).unwrap());
    let pf = g.input(Tensor::new(vec![n, 1], p_fake.to_vec()).unwrap());
    let lg = g.input(Tensor::new(vec![n, logits.len() / n], logits.to_vec()).unwrap());
    let gen = generator_terms(&mut g, pr, pf, lg, y).unwrap().1;
    let dis = discriminator_terms(&mut g, pr, pf, lg, y).unwrap().1;
    (gen, dis)
}

fn criterion_6() -> Outcome {
    let ln2 = std::f64::consts::LN_2;
    let (gen, dis) = plug_in(&[0.5], &[0.5], &[0.0, 0.0], &[0]);
    let closed = gen.total == -ln2 && dis.total == 3.0 * ln2;

    let mut rng = seed::rng(6);
    let mut worst_sum = 0.0f64;
    for _ in 0..50 {
        let pr: Vec<f64> = (0..4).map(|_| rng.random_range(0.01..0.99)).collect();
        let pf: Vec<f64> = (0..4).map(|_| rng.random_range(0.01..0.99)).collect();
        let lg: Vec<f64> = (0..12).map(|_| rng.random_range(-3.0..3.0)).collect();
        let y: Vec<usize> = (0..4).map(|_| rng.random_range(0..3)).collect();
        let (g, d) = plug_in(&pr, &pf, &lg, &y);
        worst_sum = worst_sum.max((g.total - (g.real + g.fake + g.class)).abs()).max((d.total - (d.real + d.fake + d.class)).abs());
    }

    let x = Tensor::new(vec![4, 4], (0..16).map(|_| rng.random_range(-1.5..1.5)).collect()).unwrap();
    let split = |g: &mut Graph, v: Var| -> Result<(Var, Var, Var), TensorError> {
        let s = g.sigmoid(v)?;
        let pr = g.rows(s, &[0])?;
        let pr = g.reshape(pr, &[4, 1])?;
        let pf = g.rows(s, &[1])?;
        let pf = g.reshape(pf, &[4, 1])?;
        let l = g.rows(v, &[2, 3])?;
        Ok((pr, pf, g.reshape(l, &[4, 2])?))
    };
    let g_err = grad_check(|g, v| { let (pr, pf, l) = split(g, v)?; Ok(generator_terms(g, pr, pf, l, &[0, 1, 1, 0])?.0) }, &x, 1e-6).unwrap();
    let d_err = grad_check(|g, v| { let (pr, pf, l) = split(g, v)?; Ok(discriminator_terms(g, pr, pf, l, &[1, 0, 0, 1])?.0) }, &x, 1e-6).unwrap();

    let data = synth_corpus_in_memory(&SynthConfig { n_speakers_per_gender: 2, utts_per_speaker: 2, seed: 6, ..SynthConfig::default() }).unwrap();
    let (vae, _) = train_vae(&data, &VaeConfig { channels: 16, epochs: 2, ..VaeConfig::default() }, 6).unwrap();
    let (_, hist) = train_gan(&data, &vae, &GanConfig { epochs: 1, warmup_epochs: 0, ..GanConfig::default() }, 6).unwrap();
    let e = &hist[0];
    let finite = [e.generator.total, e.generator.real, e.generator.fake, e.generator.class, e.discriminator.total, e.discriminator.real, e.discriminator.fake, e.discriminator.class]
        .iter()
        .all(|v| v.is_finite());
    outcome(
        closed && worst_sum <= 1e-12 && g_err < 1e-4 && d_err < 1e-4 && finite,
        format!(
            "plug-ins G {:.6} (-ln2) D {:.6} (3ln2) exact={closed}, breakdown err {worst_sum:.1e}, grad rel err G {g_err:.1e} D {d_err:.1e}, smoke epoch G {:.3} D {:.3}",
            gen.total, dis.total, e.generator.total, e.discriminator.total
        ),
    )
}

// ---------------------------------------------------------------- 8

fn bfs_distances(src: &str, alphabet: &[char], max_len: usize, all: &HashSet<String>) -> BTreeMap<String, usize> {
    let mut dist = BTreeMap::from([(src.to_string(), 0usize)]);
    let mut queue = VecDeque::from([src.to_string()]);
    while let Some(s) = queue.pop_front() {
        let d = dist[&s];
        let chars: Vec<char> = s.chars().collect();
        let mut next = Vec::new();
        for i in 0..=chars.len() {
            if i < chars.len() {
                let mut c = chars.clone();
                c.remove(i);
                next.push(c.iter().collect::<String>());
                for &a in alphabet {
                    let mut c = chars.clone();
                    c[i] = a;
                    next.push(c.iter().collect());
                }
            }
            if chars.len() < max_len {
                for &a in alphabet {
                    let mut c = chars.clone();
                    c.insert(i, a);
                    next.push(c.iter().collect());
                }
            }
        }
        for n in next {
            if all.contains(&n) && !dist.contains_key(&n) {
                dist.insert(n.clone(), d + 1);
                queue.push_back(n);
            }
        }
    }
    dist
}

fn criterion_8() -> Outcome {
    let alphabet = ['a', 'b', 'c'];
    let mut all = vec![String::new()];
    let mut frontier = vec![String::new()];
    for _ in 0..5 {
        frontier = frontier.iter().flat_map(|s| alphabet.iter().map(move |c| format!("{s}{c}"))).collect();
        all.extend(frontier.iter().cloned());
    }
    let set: HashSet<String> = all.iter().cloned().collect();
    let mismatches: usize = all
        .par_iter()
        .map(|a| {
            let oracle = bfs_distances(a, &alphabet, 5, &set);
            let ac: Vec<char> = a.chars().collect();
            all.iter().filter(|b| edit_distance(&ac, &b.chars().collect::<Vec<_>>()) != oracle[*b]).count()
        })
        .sum();
    let pairs = all.len() * all.len();

    let fixed: [(&str, &str, f64, f64); 20] = [
        ("hello world", "hello word", 1.0 / 11.0, 0.5),
        ("abc", "abc", 0.0, 0.0),
        ("abc", "abd", 1.0 / 3.0, 1.0),
        ("kitten", "sitting", 0.5, 1.0),
        ("the cat sat", "the cat sat", 0.0, 0.0),
        ("the cat sat", "the sat", 4.0 / 11.0, 1.0 / 3.0),
        ("a b c d", "a c d", 2.0 / 7.0, 0.25),
        ("one two", "one two three", 6.0 / 7.0, 0.5),
        ("Hello, World!", "hello world", 0.0, 0.0),
        ("  spaced   out ", "spaced out", 0.0, 0.0),
        ("abc", "", 1.0, 1.0),
        ("ab", "ba", 1.0, 1.0),
        ("flaw", "lawn", 0.5, 1.0),
        ("intention", "execution", 5.0 / 9.0, 1.0),
        ("a b", "b a", 2.0 / 3.0, 1.0),
        ("sunday", "saturday", 0.5, 1.0),
        ("x", "xyz", 2.0, 1.0),
        ("the quick brown fox", "the quick brown", 4.0 / 19.0, 0.25),
        ("aaaa", "aaa", 0.25, 1.0),
        ("cat dog", "cat dig", 1.0 / 7.0, 0.5),
    ];
    let bad: Vec<String> = fixed
        .iter()
        .filter_map(|&(r, h, c, w)| {
            let (gc, gw) = (cer(r, h).unwrap(), wer(r, h).unwrap());
            ((gc - c).abs() > 1e-12 || (gw - w).abs() > 1e-12).then(|| format!("{r:?}/{h:?}: cer {gc} wer {gw}"))
        })
        .collect();
    outcome(
        mismatches == 0 && bad.is_empty(),
        format!("edit distance vs BFS: {mismatches}/{pairs} mismatches; CER/WER fixed pairs: {}/20 correct {}", 20 - bad.len(), bad.join(", ")),
    )
}

// ---------------------------------------------------------------- 9

fn criterion_9() -> Outcome {
    let mut rng = seed::rng(9);
    let mut worst_snr = f64::INFINITY;
    for _ in 0..100 {
        let len = rng.random_range(4096..12000);
        let x: Vec<f32> = (0..len).map(|_| rng.random_range(-1.0f32..1.0)).collect();
        let w = Waveform::new(x.clone(), 16_000).unwrap();
        let y = istft(&stft(&w, 1024, 256).unwrap()).unwrap();
        let interior = 1024..len - 1024;
        let sig: f64 = x[interior.clone()].iter().map(|&v| f64::from(v).powi(2)).sum();
        let err: f64 = x[interior.clone()].iter().zip(&y.samples()[interior]).map(|(&a, &b)| f64::from(a - b).powi(2)).sum();
        worst_snr = worst_snr.min(10.0 * (sig / err.max(1e-300)).log10());
    }

    let mut monotone = true;
    for i in 0..10 {
        let (frames, bins) = (rng.random_range(8..24), 257);
        let values = (0..frames * bins).map(|_| rng.random_range(0.0..1.0)).collect();
        let mag = Spectrogram::new(values, frames, bins, 512, 128, 16_000, false).unwrap();
        let trace = griffin_lim_traced(&mag, 60, i).unwrap();
        monotone &= trace.errors.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12));
    }

    let corpus = synth_corpus_in_memory(&SynthConfig { n_speakers_per_gender: 5, utts_per_speaker: 1, seed: 9, ..SynthConfig::default() }).unwrap();
    let rel: Vec<f64> = corpus
        .par_iter()
        .enumerate()
        .map(|(i, u)| {
            let mag = log_magnitude(&stft(&u.waveform, 1024, 256).unwrap(), 1e-12).unwrap().exponentiate();
            let trace = griffin_lim_traced(&mag, 60, i as u64).unwrap();
            trace.errors[60] / full_spectrum_norm(&mag)
        })
        .collect();
    let worst_rel = rel.iter().copied().fold(0.0, f64::max);
    outcome(
        worst_snr >= 60.0 && monotone && worst_rel <= 0.05,
        format!(
            "worst interior SNR {worst_snr:.1} dB over 100 signals; GL error non-increasing on 10 random magnitudes: {monotone}; GL rel error after 60 iters on {} utterances: worst {worst_rel:.4}, mean {:.4}",
            rel.len(),
            mean(&rel)
        ),
    )
}

// ---------------------------------------------------------------- 10

fn criterion_10() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("config.json");
    let out_dir = dir.path().join("run");
    std::fs::write(
        &cfg,
        format!(
            r#"{{"seed": 7, "out_dir": {:?}, "n_speakers_per_gender": 3, "utts_per_speaker": 2, "holdout_per_class": 1, "n_values": [0, 2], "epochs": 2}}"#,
            out_dir.display().to_string()
        ),
    )
    .unwrap();
    let c = cfg.to_str().unwrap();
    let steps: Vec<(&str, Vec<&str>)> = vec![
        ("synth-data", vec!["synth-data"]),
        ("train-classifier", vec!["train-classifier"]),
        ("train-vae", vec!["train-vae"]),
        ("train-gan", vec!["train-gan", "--label-kind", "gender", "--epochs", "3"]),
        ("encrypt pitch", vec!["encrypt", "--method", "pitch"]),
        ("encrypt vae", vec!["encrypt", "--method", "vae"]),
        ("encrypt gan", vec!["encrypt", "--method", "gan", "--label-kind", "gender"]),
        ("evaluate", vec!["evaluate", "--method", "gan", "--label-kind", "gender"]),
        ("tradeoff", vec!["tradeoff"]),
    ];
    let mut differing = Vec::new();
    let mut errors = Vec::new();
    for (name, args) in &steps {
        let mut outputs = Vec::new();
        for jobs in ["1", "2"] {
            let mut argv = vec!["voxmask", "--config", c, "--jobs", jobs];
            argv.extend(args);
            let (mut out, mut err) = (Vec::new(), Vec::new());
            let code = voxmask_core::cli::run(argv, &mut out, &mut err);
            if code != 0 {
                errors.push(format!("{name} exit {code}: {}", String::from_utf8_lossy(&err).trim()));
            }
            outputs.push(out);
        }
        if outputs[0] != outputs[1] || outputs[0].is_empty() {
            differing.push(*name);
        }
    }
    outcome(
        differing.is_empty() && errors.is_empty(),
        format!(
            "{} subcommand runs repeated (jobs 1 vs 2); differing: {:?}; errors: {:?}",
            steps.len(),
            differing,
            errors
        ),
    )
}
