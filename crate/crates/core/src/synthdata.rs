//! Deterministic synthetic multi-speaker corpus. Each "speaker" is a
//! harmonic source (fixed fundamental on a 6 Hz grid, so speakers never
//! collide) colored by three formant-like resonances and a spectral
//! tilt; each utterance re-draws phases, amplitude modulation, and
//! per-utterance jitters. The jitters are deliberately wide — within-
//! speaker variation approaches the between-speaker gaps, so an encoder
//! has to work for its separability instead of reading it off a single
//! loud cue. Everything derives from one seed: profiles, utterances,
//! and the trial pairing are on disjoint RNG streams.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::audio_io::{write_wav, AudioClip};
use crate::{Error, Result};

/// The fundamental-frequency grid: 29 slots, 6 Hz apart, inside
/// [90, 260] Hz.
pub const F0_SLOTS: usize = 29;
pub const F0_MIN_HZ: f64 = 90.0;
pub const F0_SPACING_HZ: f64 = 6.0;

/// Harmonics are generated up to this frequency.
const HARMONIC_CEILING_HZ: f64 = 4_200.0;

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusSpec {
    pub n_speakers: usize,
    pub utterances_per_speaker: usize,
    pub duration_s: f64,
    pub rate: u32,
    pub seed: u64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        CorpusSpec {
            n_speakers: 20,
            utterances_per_speaker: 30,
            duration_s: 2.0,
            rate: 16_000,
            seed: 42,
        }
    }
}

impl CorpusSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_speakers < 2 {
            return Err(Error::BadCorpusSpec {
                msg: format!("need at least 2 speakers, got {}", self.n_speakers),
            });
        }
        if self.n_speakers > F0_SLOTS {
            return Err(Error::BadCorpusSpec {
                msg: format!(
                    "the fundamental grid has {F0_SLOTS} slots; {} speakers cannot all be distinct",
                    self.n_speakers
                ),
            });
        }
        if self.utterances_per_speaker < 2 {
            return Err(Error::BadCorpusSpec {
                msg: format!(
                    "need at least 2 utterances per speaker, got {}",
                    self.utterances_per_speaker
                ),
            });
        }
        if !(self.duration_s > 0.0) || !self.duration_s.is_finite() {
            return Err(Error::BadCorpusSpec {
                msg: format!("duration must be positive, got {}", self.duration_s),
            });
        }
        if self.rate == 0 {
            return Err(Error::BadCorpusSpec {
                msg: "sample rate must be positive".into(),
            });
        }
        Ok(())
    }

    pub fn samples_per_utterance(&self) -> usize {
        (self.duration_s * self.rate as f64).round() as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerProfile {
    pub f0_hz: f64,
    pub formants_hz: [f64; 3],
    pub bandwidths_hz: [f64; 3],
    pub tilt: f64,
}

// RNG stream layout for one corpus seed:
//   0                    slot permutation + trial pairing
//   1 + id               speaker profile draws
//   (2 + slot) << 24 | u utterance draws (slot and utterance id are
//                        both small, so streams never collide)
fn corpus_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Deterministic per (speaker_id, seed). The fundamental sits on a
/// seeded permutation of the 6 Hz grid, so any two speakers of one
/// corpus are at least 6 Hz apart (ids repeat slots only past 29).
pub fn synth_speaker_profile(speaker_id: usize, seed: u64) -> SpeakerProfile {
    let mut grid_rng = corpus_rng(seed, 0);
    let mut slots: Vec<usize> = (0..F0_SLOTS).collect();
    slots.shuffle(&mut grid_rng);
    let slot = slots[speaker_id % F0_SLOTS];
    let f0_hz = F0_MIN_HZ + F0_SPACING_HZ * slot as f64;

    let mut rng = corpus_rng(seed, 1 + speaker_id as u64);
    let formants_hz = [
        rng.gen_range(350.0..900.0),
        rng.gen_range(1_000.0..2_300.0),
        rng.gen_range(2_500.0..3_800.0),
    ];
    let bandwidths_hz = [
        rng.gen_range(80.0..160.0),
        rng.gen_range(80.0..160.0),
        rng.gen_range(80.0..160.0),
    ];
    let tilt = rng.gen_range(0.6..1.4);
    SpeakerProfile {
        f0_hz,
        formants_hz,
        bandwidths_hz,
        tilt,
    }
}

/// Resonance gain of the vocal-tract stand-in at frequency f.
fn resonance_gain(profile: &SpeakerProfile, jitter: &[f64; 3], f: f64) -> f64 {
    let mut g = 0.05;
    for i in 0..3 {
        let center = profile.formants_hz[i] * jitter[i];
        let d = (f - center) / profile.bandwidths_hz[i];
        g += 1.0 / (1.0 + d * d);
    }
    g
}

/// One utterance: a harmonic stack at the (jittered) fundamental,
/// shaped by the jittered resonances and tilt, under a slow amplitude
/// modulation with a random phase, plus resonance-colored noise and a
/// soft broadband floor. Peak-normalized to 0.5.
pub fn synth_utterance(
    profile: &SpeakerProfile,
    utterance_id: usize,
    spec: &CorpusSpec,
) -> AudioClip {
    let n = spec.samples_per_utterance();
    let rate = spec.rate as f64;
    let slot = ((profile.f0_hz - F0_MIN_HZ) / F0_SPACING_HZ).round() as u64;
    let mut rng = corpus_rng(spec.seed, ((2 + slot) << 24) | utterance_id as u64);

    let f0 = profile.f0_hz * (1.0 + 0.025 * rng.gen_range(-1.0..1.0));
    let tilt = profile.tilt + rng.gen_range(-0.3..0.3);
    let formant_jitter = [
        1.0 + 0.15 * rng.gen_range(-1.0..1.0_f64),
        1.0 + 0.15 * rng.gen_range(-1.0..1.0_f64),
        1.0 + 0.15 * rng.gen_range(-1.0..1.0_f64),
    ];
    let am_freq = rng.gen_range(2.0..6.0);
    let am_phase = rng.gen_range(0.0..std::f64::consts::TAU);

    let n_harmonics = (HARMONIC_CEILING_HZ / f0).floor() as usize;
    let mut amps = Vec::with_capacity(n_harmonics);
    let mut phases = Vec::with_capacity(n_harmonics);
    for k in 1..=n_harmonics {
        let fk = k as f64 * f0;
        amps.push((k as f64).powf(-tilt) * resonance_gain(profile, &formant_jitter, fk));
        phases.push(rng.gen_range(0.0..std::f64::consts::TAU));
    }

    // two-pole resonators color the aspiration noise
    let mut reso_state = [[0.0f64; 2]; 3];
    let mut coeffs = [[0.0f64; 2]; 3];
    for i in 0..3 {
        let r = (-std::f64::consts::PI * profile.bandwidths_hz[i] / rate).exp();
        let w = std::f64::consts::TAU * profile.formants_hz[i] * formant_jitter[i] / rate;
        coeffs[i] = [2.0 * r * w.cos(), -r * r];
    }

    let mut samples = Vec::with_capacity(n);
    let mut peak = 0.0f64;
    for t in 0..n {
        let ts = t as f64 / rate;
        let mut voiced = 0.0;
        for k in 0..n_harmonics {
            voiced +=
                amps[k] * (std::f64::consts::TAU * (k + 1) as f64 * f0 * ts + phases[k]).sin();
        }
        let white: f64 = rng.gen_range(-1.0..1.0);
        let mut colored = 0.0;
        for i in 0..3 {
            let y = white + coeffs[i][0] * reso_state[i][0] + coeffs[i][1] * reso_state[i][1];
            reso_state[i][1] = reso_state[i][0];
            reso_state[i][0] = y;
            colored += y;
        }
        let env = 0.15 + 0.85 * (0.5 + 0.5 * (std::f64::consts::TAU * am_freq * ts + am_phase).sin());
        let v = env * (voiced + 0.05 * colored) + 0.01 * white;
        peak = peak.max(v.abs());
        samples.push(v);
    }
    if peak > 0.0 {
        let g = 0.5 / peak;
        for s in &mut samples {
            *s *= g;
        }
    }
    AudioClip::new(samples, spec.rate)
}

fn utt_rel_path(speaker: usize, utterance: usize) -> String {
    format!("wav/spk{speaker:03}_utt{utterance:03}.wav")
}

/// Write the whole corpus: WAVs under `out_dir/wav/`, a training
/// manifest with the first 80% of each speaker's utterances, and a
/// balanced verification trial list over the held-out 20%. Returns
/// (manifest path, trials path).
pub fn build_corpus(spec: &CorpusSpec, out_dir: impl AsRef<Path>) -> Result<(PathBuf, PathBuf)> {
    spec.validate()?;
    let out_dir = out_dir.as_ref();
    let wav_dir = out_dir.join("wav");
    fs::create_dir_all(&wav_dir).map_err(|e| Error::io(&wav_dir, e))?;

    let profiles: Vec<SpeakerProfile> = (0..spec.n_speakers)
        .map(|s| synth_speaker_profile(s, spec.seed))
        .collect();

    let jobs: Vec<(usize, usize)> = (0..spec.n_speakers)
        .flat_map(|s| (0..spec.utterances_per_speaker).map(move |u| (s, u)))
        .collect();
    jobs.par_iter().try_for_each(|&(s, u)| {
        let clip = synth_utterance(&profiles[s], u, spec);
        write_wav(out_dir.join(utt_rel_path(s, u)), &clip)
    })?;

    let train_per_speaker = (0.8 * spec.utterances_per_speaker as f64).floor() as usize;
    let manifest_path = out_dir.join("manifest.csv");
    let mut manifest = String::new();
    for s in 0..spec.n_speakers {
        for u in 0..train_per_speaker {
            manifest.push_str(&format!("{},{}\n", utt_rel_path(s, u), s));
        }
    }
    fs::write(&manifest_path, manifest).map_err(|e| Error::io(&manifest_path, e))?;

    // held-out utterances feed the trial list: every same-speaker pair
    // is a target; an equal number of seeded cross-speaker pairs are
    // the non-targets
    let held: Vec<Vec<String>> = (0..spec.n_speakers)
        .map(|s| {
            (train_per_speaker..spec.utterances_per_speaker)
                .map(|u| utt_rel_path(s, u))
                .collect()
        })
        .collect();
    let mut lines = Vec::new();
    let mut n_targets = 0usize;
    for utts in &held {
        for i in 0..utts.len() {
            for j in (i + 1)..utts.len() {
                lines.push(format!("1 {} {}", utts[i], utts[j]));
                n_targets += 1;
            }
        }
    }
    let mut pair_rng = corpus_rng(spec.seed, 0);
    let mut seen = HashSet::new();
    let per_speaker = held[0].len();
    while seen.len() < n_targets {
        let sa = pair_rng.gen_range(0..spec.n_speakers);
        let sb = pair_rng.gen_range(0..spec.n_speakers);
        if sa == sb {
            continue;
        }
        let a = &held[sa][pair_rng.gen_range(0..per_speaker)];
        let b = &held[sb][pair_rng.gen_range(0..per_speaker)];
        if seen.insert((a.clone(), b.clone())) {
            lines.push(format!("0 {a} {b}"));
        }
    }
    let trials_path = out_dir.join("trials.txt");
    fs::write(&trials_path, lines.join("\n") + "\n").map_err(|e| Error::io(&trials_path, e))?;
    Ok((manifest_path, trials_path))
}
