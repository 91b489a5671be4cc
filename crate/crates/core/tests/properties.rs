use std::collections::HashSet;
use std::path::PathBuf;

use proptest::prelude::*;

use voxmask_core::audio::{add_gaussian_noise, read_wav, write_wav, CANONICAL_RATE_HZ};
use voxmask_core::autodiff::{Graph, Tensor};
use voxmask_core::datasets::{split_speakers, Gender, ManifestEntry};
use voxmask_core::eval::{cer, edit_distance};
use voxmask_core::pitch::semitone_shift;
use voxmask_core::spectral::{istft, stft};
use voxmask_core::Waveform;

fn word() -> impl Strategy<Value = Vec<u8>> {
    prop::collection::vec(0u8..4, 0..12)
}

fn signal(max_len: usize) -> impl Strategy<Value = Vec<f32>> {
    prop::collection::vec(-1.0f32..1.0, 1..max_len)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn edit_distance_is_a_metric(a in word(), b in word(), c in word()) {
        let d = |x: &[u8], y: &[u8]| edit_distance(x, y);
        prop_assert_eq!(d(&a, &a), 0);
        prop_assert_eq!(d(&a, &b) == 0, a == b);
        prop_assert_eq!(d(&a, &b), d(&b, &a));
        prop_assert!(d(&a, &c) <= d(&a, &b) + d(&b, &c));
        prop_assert!(d(&a, &b) >= a.len().abs_diff(b.len()));
        prop_assert!(d(&a, &b) <= a.len().max(b.len()));
    }

    #[test]
    fn cer_is_zero_only_for_equal_text(a in "[a-d]{1,10}", b in "[a-d]{0,10}") {
        let v = cer(&a, &b).unwrap();
        prop_assert!(v >= 0.0);
        prop_assert_eq!(v == 0.0, a == b);
        prop_assert_eq!(cer(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn speaker_splits_are_disjoint_and_cover(
        n_m in 2usize..7, n_f in 2usize..7, utts in 1usize..4, seed: u64, holdout in 1usize..2,
    ) {
        let mut entries = Vec::new();
        for (gender, n) in [(Gender::M, n_m), (Gender::F, n_f)] {
            for s in 0..n {
                for u in 0..utts {
                    entries.push(ManifestEntry {
                        utt_id: format!("{gender}{s}_{u}"),
                        audio_path: PathBuf::from("x.wav"),
                        speaker_id: format!("{gender}{s}"),
                        gender,
                        accent: "a".into(),
                        transcript: "t".into(),
                    });
                }
            }
        }
        let (train, test) = split_speakers(&entries, holdout, seed).unwrap();
        let spk = |v: &[ManifestEntry]| v.iter().map(|e| e.speaker_id.clone()).collect::<HashSet<_>>();
        let (tr, te) = (spk(&train), spk(&test));
        prop_assert!(tr.is_disjoint(&te));
        prop_assert_eq!(train.len() + test.len(), entries.len());
        for g in Gender::ALL {
            let held = test.iter().filter(|e| e.gender == g).map(|e| &e.speaker_id).collect::<HashSet<_>>();
            prop_assert_eq!(held.len(), holdout);
        }
        let again = split_speakers(&entries, holdout, seed).unwrap();
        prop_assert_eq!(again, (train, test));
    }

    #[test]
    fn stft_roundtrip_interior_snr(x in prop::collection::vec(-1.0f32..1.0, 2100..6000), log_frame in 8u32..11) {
        let frame = 1usize << log_frame;
        let w = Waveform::new(x.clone(), CANONICAL_RATE_HZ).unwrap();
        let y = istft(&stft(&w, frame, frame / 4).unwrap()).unwrap();
        prop_assert!(y.len() >= x.len() && y.len() < x.len() + frame);
        // Interior: one full frame away from either edge.
        let range = frame..x.len() - frame;
        let sig: f64 = x[range.clone()].iter().map(|&v| f64::from(v).powi(2)).sum();
        let err: f64 = x[range.clone()].iter().zip(&y.samples()[range]).map(|(&a, &b)| f64::from(a - b).powi(2)).sum();
        prop_assert!(10.0 * (sig / err.max(1e-30)).log10() > 60.0);
    }

    #[test]
    fn kl_to_standard_normal_is_nonnegative(
        vals in prop::collection::vec((-5.0f64..5.0, -8.0f64..8.0), 1..16),
    ) {
        let n = vals.len();
        let mut g = Graph::new();
        let mu = g.input(Tensor::new(vec![1, n], vals.iter().map(|v| v.0).collect()).unwrap());
        let lv = g.input(Tensor::new(vec![1, n], vals.iter().map(|v| v.1).collect()).unwrap());
        let kl = g.kl_standard_normal(mu, lv).unwrap();
        prop_assert!(g.value(kl).data()[0] >= 0.0);
    }

    #[test]
    fn wav_roundtrip_within_one_lsb(x in signal(2000)) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.wav");
        let w = Waveform::new(x.clone(), CANONICAL_RATE_HZ).unwrap();
        write_wav(&w, &path).unwrap();
        let back = read_wav(&path).unwrap();
        prop_assert_eq!(back.len(), x.len());
        for (a, b) in x.iter().zip(back.samples()) {
            prop_assert!((a - b).abs() <= 1.0 / 32768.0 + 1e-7);
        }
    }

    #[test]
    fn semitone_shift_is_antisymmetric(a in 50.0f64..500.0, b in 50.0f64..500.0) {
        let ab = semitone_shift(a, b).unwrap();
        prop_assert!((ab + semitone_shift(b, a).unwrap()).abs() < 1e-9);
        prop_assert!(semitone_shift(a, a).unwrap().abs() < 1e-12);
        prop_assert!((a * 2f64.powf(ab / 12.0) - b).abs() < 1e-9 * b);
    }

    #[test]
    fn noise_stays_in_range(x in signal(500), std in 0.0f64..0.5, seed: u64) {
        let w = Waveform::new(x, CANONICAL_RATE_HZ).unwrap();
        let y = add_gaussian_noise(&w, std, seed).unwrap();
        prop_assert!(y.samples().iter().all(|v| (-1.0..=1.0).contains(v)));
        prop_assert_eq!(&y, &add_gaussian_noise(&w, std, seed).unwrap());
    }
}
