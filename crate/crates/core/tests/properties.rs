//! Randomized invariants for the small numeric building blocks. Case
//! counts are kept low; the acceptance suite already hammers the same
//! oracles with 200 fixed-seed sets.

mod support;

use proptest::prelude::*;

use voicecloak::audio_io::{read_wav, write_wav, AudioClip};
use voicecloak::metrics::{eer, min_dcf, DcfParams, ScoreSet};
use voicecloak::slem::{amplitude_mask, project};

/// Scores drawn from a coarse grid so threshold ties are common.
fn grid_scores() -> impl Strategy<Value = Vec<f64>> {
    (2u32..10).prop_flat_map(|grid| {
        prop::collection::vec(
            (0..=grid).prop_map(move |v| v as f64 / grid as f64),
            1..30,
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn eer_matches_the_brute_force_sweep(
        targets in grid_scores(),
        nontargets in grid_scores(),
    ) {
        let set = ScoreSet { targets: targets.clone(), nontargets: nontargets.clone() };
        let fast = eer(&set).unwrap();
        let slow = support::eer_bruteforce(&targets, &nontargets);
        prop_assert!((fast - slow).abs() <= 1e-9, "{fast} vs {slow}");
        prop_assert!((0.0..=100.0).contains(&fast));
    }

    #[test]
    fn min_dcf_matches_the_brute_force_sweep(
        targets in grid_scores(),
        nontargets in grid_scores(),
        p_target in 0.01f64..0.99,
        c_miss in 0.1f64..10.0,
        c_fa in 0.1f64..10.0,
    ) {
        let set = ScoreSet { targets: targets.clone(), nontargets: nontargets.clone() };
        let params = DcfParams { p_target, c_miss, c_fa };
        let fast = min_dcf(&set, &params).unwrap();
        let slow = support::min_dcf_bruteforce(&targets, &nontargets, p_target, c_miss, c_fa);
        prop_assert!((fast - slow).abs() <= 1e-9, "{fast} vs {slow}");
        // accepting everyone or rejecting everyone caps the normalized cost at 1
        prop_assert!(fast <= 1.0 + 1e-12);
    }

    #[test]
    fn mask_keeps_exactly_the_largest_amplitudes(
        samples in prop::collection::vec(-1.0f64..1.0, 1..200),
        q in 0.0f64..1.0,
    ) {
        let clip = AudioClip::new(samples.clone(), 16_000);
        let mask = amplitude_mask(&clip, q).unwrap();
        let want = (q * samples.len() as f64).ceil() as usize;
        prop_assert_eq!(mask.iter().filter(|&&m| m == 1).count(), want);
        let kept_min = samples.iter().zip(&mask)
            .filter(|(_, &m)| m == 1)
            .map(|(s, _)| s.abs())
            .fold(f64::INFINITY, f64::min);
        let dropped_max = samples.iter().zip(&mask)
            .filter(|(_, &m)| m == 0)
            .map(|(s, _)| s.abs())
            .fold(0.0f64, f64::max);
        prop_assert!(want == 0 || kept_min >= dropped_max,
            "kept {kept_min} below dropped {dropped_max}");
    }

    #[test]
    fn projection_is_bounded_masked_and_idempotent(
        pairs in prop::collection::vec((-1.0f64..1.0, 0u8..2), 1..100),
        epsilon in 0.0f64..0.1,
    ) {
        let (delta, mask): (Vec<f64>, Vec<u8>) = pairs.into_iter().unzip();
        let p = project(&delta, epsilon, &mask);
        for (i, (&v, &m)) in p.iter().zip(&mask).enumerate() {
            prop_assert!(v.abs() <= epsilon, "coord {i}: {v} outside the box");
            prop_assert!(m == 1 || v == 0.0, "coord {i} leaked off-mask");
        }
        prop_assert_eq!(project(&p, epsilon, &mask), p);
    }

    #[test]
    fn wav_round_trip_is_within_one_quantization_step(
        samples in prop::collection::vec(-1.0f64..1.0, 1..500),
        rate in prop::sample::select(vec![8_000u32, 16_000, 44_100]),
    ) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("clip.wav");
        write_wav(&path, &AudioClip::new(samples.clone(), rate)).unwrap();
        let back = read_wav(&path).unwrap();
        prop_assert_eq!(back.rate, rate);
        prop_assert_eq!(back.len(), samples.len());
        for (a, b) in samples.iter().zip(&back.samples) {
            prop_assert!((a - b).abs() <= 1.0 / 32_000.0, "{a} vs {b}");
        }
    }
}
