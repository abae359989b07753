//! The perturbation engine. For a clip x with speaker label y and a
//! frozen encoder, it finds a small additive delta that *minimizes*
//!
//! ```text
//! alpha * L_margin(g(x + delta), y)   (make the sample trivially easy)
//!   + beta * L_spectral(x, x + delta)  (stay close in the STFT)
//!   + gamma * L_intel(x, x + delta)    (stay intelligible)
//! ```
//!
//! under an l-infinity bound and a mask that confines the noise to the
//! highest-amplitude samples. Training on such minimized samples
//! starves the encoder of gradient signal, which is what makes the
//! corpus unlearnable. The optimizer is plain signed-gradient descent
//! with projection after every step; everything is deterministic.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use rayon::prelude::*;
use rustfft::num_complex::Complex64;

use crate::audio_io::{crop_fixed_patch, read_wav, write_wav, AudioClip, DatasetManifest};
use crate::dsp::{LogMelPipeline, Spectrogram, PIPELINE_RATE};
use crate::encoder::{
    aam_loss_grad, backward, forward_cached, EncoderParams, DEFAULT_MARGIN, DEFAULT_SCALE,
};
use crate::metrics::fmt_sig6;
use crate::perceptual::{
    mse_e6, snr_db, stft_loss_cotangent, stft_loss_from_specs, StoiClean, StoiPipeline,
};
use crate::{Error, Result};

/// Weights of the hybrid objective. `lambda` belongs to the
/// intelligibility loss itself (its envelope L1 term).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PHLWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub lambda: f64,
}

impl Default for PHLWeights {
    fn default() -> Self {
        PHLWeights {
            alpha: 1.0,
            beta: 0.005,
            gamma: 0.01,
            lambda: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    SampleWise,
    SpeakerWise,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlemConfig {
    /// l-infinity bound on delta.
    pub epsilon: f64,
    /// Optimizer steps K.
    pub steps: usize,
    /// Step size eta (defaults to epsilon / 10).
    pub step_size: f64,
    /// Fraction q of samples (by amplitude) that may carry noise.
    pub mask_keep_fraction: f64,
    /// Samples in the fixed patch delta is defined on.
    pub patch_length: usize,
    pub weights: PHLWeights,
    pub mode: Mode,
    /// true zeroes beta and gamma (margin loss only).
    pub plain_slem: bool,
}

impl Default for SlemConfig {
    fn default() -> Self {
        SlemConfig {
            epsilon: 0.005,
            steps: 100,
            step_size: 0.0005,
            mask_keep_fraction: 0.5,
            patch_length: 32_000,
            weights: PHLWeights::default(),
            mode: Mode::SampleWise,
            plain_slem: false,
        }
    }
}

impl SlemConfig {
    fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0) {
            return Err(Error::BadEpsilon { value: self.epsilon });
        }
        if !(0.0..=1.0).contains(&self.mask_keep_fraction) {
            return Err(Error::BadFraction {
                value: self.mask_keep_fraction,
            });
        }
        // A zero bound makes every update a no-op, so the degenerate
        // step that falls out of the epsilon/10 default is fine there.
        if !(self.step_size > 0.0) && self.epsilon > 0.0 {
            return Err(Error::BadStepSize {
                value: self.step_size,
            });
        }
        Ok(())
    }

    /// Weights actually used by the optimizer.
    pub fn effective_weights(&self) -> PHLWeights {
        if self.plain_slem {
            PHLWeights {
                beta: 0.0,
                gamma: 0.0,
                ..self.weights
            }
        } else {
            self.weights
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PerturbationSource {
    /// Index of the utterance in its manifest.
    SampleWise { utterance: usize },
    /// Shared across all utterances of one speaker.
    SpeakerWise { speaker: usize },
}

/// An optimized noise patch, bound and mask included.
#[derive(Debug, Clone, PartialEq)]
pub struct Perturbation {
    pub delta: Vec<f64>,
    pub epsilon: f64,
    pub mask: Vec<u8>,
    pub source: PerturbationSource,
    pub rate: u32,
    /// Total loss at delta = 0.
    pub initial_loss: f64,
    /// Total loss at the returned delta.
    pub final_loss: f64,
}

impl Perturbation {
    pub fn linf(&self) -> f64 {
        self.delta.iter().fold(0.0, |m, &v| m.max(v.abs()))
    }

    /// Largest |delta| outside the mask (0 when the invariant holds).
    pub fn off_mask_max(&self) -> f64 {
        self.delta
            .iter()
            .zip(self.mask.iter())
            .filter(|(_, &m)| m == 0)
            .fold(0.0, |acc, (&v, _)| acc.max(v.abs()))
    }
}

/// 1 for the ceil(q*n) samples with the largest |x|, 0 elsewhere.
/// Equal amplitudes are won by the lower index.
pub fn amplitude_mask(clip: &AudioClip, q: f64) -> Result<Vec<u8>> {
    if clip.is_empty() {
        return Err(Error::EmptyClip);
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::BadFraction { value: q });
    }
    let n = clip.len();
    let ones = (q * n as f64).ceil() as usize;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_unstable_by(|&a, &b| {
        clip.samples[b]
            .abs()
            .total_cmp(&clip.samples[a].abs())
            .then(a.cmp(&b))
    });
    let mut mask = vec![0u8; n];
    for &i in idx.iter().take(ones.min(n)) {
        mask[i] = 1;
    }
    Ok(mask)
}

/// Clamp to the epsilon box, then zero outside the mask.
pub fn project(delta: &[f64], epsilon: f64, mask: &[u8]) -> Vec<f64> {
    delta
        .iter()
        .zip(mask.iter())
        .map(|(&d, &m)| {
            if m == 0 {
                0.0
            } else {
                d.clamp(-epsilon, epsilon)
            }
        })
        .collect()
}

fn project_in_place(delta: &mut [f64], epsilon: f64, mask: &[u8]) {
    for (d, &m) in delta.iter_mut().zip(mask.iter()) {
        *d = if m == 0 { 0.0 } else { d.clamp(-epsilon, epsilon) };
    }
}

/// Unweighted components of one loss evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub l_arc: f64,
    pub l_stft: f64,
    pub l_stoi: f64,
}

impl LossBreakdown {
    pub fn total(&self, w: &PHLWeights) -> f64 {
        w.alpha * self.l_arc + w.beta * self.l_stft + w.gamma * self.l_stoi
    }
}

/// Shared state for evaluating the hybrid loss many times against one
/// clean patch: FFT plans, the clean spectrogram, and the clean-side
/// intelligibility cache. Skips whole branches whose weight is zero.
pub struct LossPipeline<'a> {
    params: &'a EncoderParams,
    label: usize,
    weights: PHLWeights,
    margin: f64,
    scale: f64,
    clean: AudioClip,
    logmel: LogMelPipeline,
    clean_spec: Option<Spectrogram>,
    stoi: Option<(StoiPipeline, StoiClean)>,
}

fn all_finite(xs: &[f64]) -> bool {
    xs.iter().all(|v| v.is_finite())
}

fn all_finite_c(xs: &[Complex64]) -> bool {
    xs.iter().all(|c| c.re.is_finite() && c.im.is_finite())
}

fn non_finite(context: &str) -> Error {
    Error::NonFinite {
        context: context.into(),
    }
}

impl<'a> LossPipeline<'a> {
    /// `need_spectral` / `need_intel` force those branches on even at
    /// weight zero, so the unweighted breakdown can be reported.
    pub fn new(
        params: &'a EncoderParams,
        clean_patch: &AudioClip,
        label: usize,
        weights: PHLWeights,
        margin: f64,
        scale: f64,
        need_spectral: bool,
        need_intel: bool,
    ) -> Result<Self> {
        if label >= params.n_speakers {
            return Err(Error::LabelOutOfRange {
                label,
                n_classes: params.n_speakers,
            });
        }
        let feature_cfg = params.config.feature_config();
        let logmel = LogMelPipeline::new(&feature_cfg, clean_patch.rate)?;
        let clean_spec = if weights.beta != 0.0 || need_spectral {
            Some(logmel.plan.forward(&clean_patch.samples, clean_patch.rate)?)
        } else {
            None
        };
        let stoi = if weights.gamma != 0.0 || need_intel {
            let pipe = StoiPipeline::new()?;
            let cache = pipe.prepare_clean(clean_patch)?;
            Some((pipe, cache))
        } else {
            None
        };
        Ok(LossPipeline {
            params,
            label,
            weights,
            margin,
            scale,
            clean: clean_patch.clone(),
            logmel,
            clean_spec,
            stoi,
        })
    }

    fn degraded(&self, delta: &[f64]) -> AudioClip {
        debug_assert_eq!(delta.len(), self.clean.len());
        let samples = self
            .clean
            .samples
            .iter()
            .zip(delta.iter())
            .map(|(&x, &d)| x + d)
            .collect();
        AudioClip::new(samples, self.clean.rate)
    }

    /// Forward-only evaluation.
    pub fn eval(&self, delta: &[f64]) -> Result<LossBreakdown> {
        let deg = self.degraded(delta);
        let (features, cache) = self.logmel.forward_cached(&deg.samples, deg.rate)?;
        let (emb, _) = forward_cached(self.params, &features)?;
        let l_arc =
            crate::encoder::aam_loss(self.params, &emb, self.label, self.margin, self.scale)?;
        let l_stft = match &self.clean_spec {
            Some(cs) => stft_loss_from_specs(cs, &cache.spec),
            None => 0.0,
        };
        let l_stoi = match &self.stoi {
            Some((pipe, clean)) => pipe.eval(clean, &deg)?.loss(self.weights.lambda),
            None => 0.0,
        };
        Ok(LossBreakdown {
            l_arc,
            l_stft,
            l_stoi,
        })
    }

    /// Loss plus d(total)/d(delta).
    pub fn eval_grad(&self, delta: &[f64]) -> Result<(LossBreakdown, Vec<f64>)> {
        let w = &self.weights;
        let deg = self.degraded(delta);
        let n = deg.len();
        let (features, mel_cache) = self.logmel.forward_cached(&deg.samples, deg.rate)?;
        let (emb, enc_cache) = forward_cached(self.params, &features)?;
        let (l_arc, d_emb) =
            aam_loss_grad(self.params, &emb, self.label, self.margin, self.scale)?;
        if !l_arc.is_finite() {
            return Err(non_finite("margin loss"));
        }

        // margin-loss branch: embedding -> features -> spectrogram
        let mut spec_cot = if w.alpha != 0.0 {
            let d_emb_scaled: Vec<f64> = d_emb.iter().map(|g| g * w.alpha).collect();
            let d_features = backward(self.params, &enc_cache, &d_emb_scaled, None);
            if !all_finite(&d_features) {
                return Err(non_finite("margin loss gradient"));
            }
            self.logmel.spec_cotangent(&mel_cache, &d_features)
        } else {
            vec![Complex64::new(0.0, 0.0); mel_cache.spec.data.len()]
        };

        // spectral branch shares the same degraded spectrogram
        let l_stft = match &self.clean_spec {
            Some(cs) => {
                let l = stft_loss_from_specs(cs, &mel_cache.spec);
                if !l.is_finite() {
                    return Err(non_finite("spectral loss"));
                }
                if w.beta != 0.0 && l != 0.0 {
                    let cot = stft_loss_cotangent(cs, &mel_cache.spec, l, w.beta);
                    if !all_finite_c(&cot) {
                        return Err(non_finite("spectral loss gradient"));
                    }
                    for (a, b) in spec_cot.iter_mut().zip(cot.iter()) {
                        *a += b;
                    }
                }
                l
            }
            None => 0.0,
        };

        let mut grad = self
            .logmel
            .plan
            .adjoint(&spec_cot, mel_cache.spec.frames, n);

        // intelligibility branch
        let l_stoi = match &self.stoi {
            Some((pipe, clean)) => {
                if w.gamma != 0.0 {
                    let (eval, g) = pipe.loss_and_grad(clean, &deg, w.lambda, w.gamma)?;
                    if !all_finite(&g) {
                        return Err(non_finite("intelligibility loss gradient"));
                    }
                    for (a, b) in grad.iter_mut().zip(g.iter()) {
                        *a += b;
                    }
                    eval.loss(w.lambda)
                } else {
                    pipe.eval(clean, &deg)?.loss(w.lambda)
                }
            }
            None => 0.0,
        };
        if !l_stoi.is_finite() {
            return Err(non_finite("intelligibility loss"));
        }

        Ok((
            LossBreakdown {
                l_arc,
                l_stft,
                l_stoi,
            },
            grad,
        ))
    }
}

/// Hybrid loss of `clean + delta` with every component reported
/// unweighted alongside the weighted total. Uses the default margin
/// and scale of the encoder head.
pub fn total_loss(
    params: &EncoderParams,
    clean_patch: &AudioClip,
    delta: &[f64],
    label: usize,
    weights: &PHLWeights,
) -> Result<(f64, LossBreakdown)> {
    if delta.len() != clean_patch.len() {
        return Err(Error::LengthMismatch {
            left: clean_patch.len(),
            right: delta.len(),
        });
    }
    let pipe = LossPipeline::new(
        params,
        clean_patch,
        label,
        *weights,
        DEFAULT_MARGIN,
        DEFAULT_SCALE,
        true,
        true,
    )?;
    let breakdown = pipe.eval(delta)?;
    Ok((breakdown.total(weights), breakdown))
}

/// Exact gradient of [`total_loss`] with respect to `delta`.
pub fn loss_grad_wrt_delta(
    params: &EncoderParams,
    clean_patch: &AudioClip,
    delta: &[f64],
    label: usize,
    weights: &PHLWeights,
) -> Result<Vec<f64>> {
    if delta.len() != clean_patch.len() {
        return Err(Error::LengthMismatch {
            left: clean_patch.len(),
            right: delta.len(),
        });
    }
    let pipe = LossPipeline::new(
        params,
        clean_patch,
        label,
        *weights,
        DEFAULT_MARGIN,
        DEFAULT_SCALE,
        true,
        true,
    )?;
    Ok(pipe.eval_grad(delta)?.1)
}

fn generate_on_patch(
    params: &EncoderParams,
    patch: &AudioClip,
    label: usize,
    config: &SlemConfig,
    margin: f64,
    scale: f64,
) -> Result<Perturbation> {
    config.validate()?;
    let weights = config.effective_weights();
    let mask = amplitude_mask(patch, config.mask_keep_fraction)?;
    let pipe = LossPipeline::new(
        params, patch, label, weights, margin, scale, false, false,
    )?;
    let n = patch.len();
    let mut delta = vec![0.0; n];
    let mut initial_loss = f64::NAN;
    // a zero box pins delta at zero; don't pay for the gradient steps
    let steps = if config.epsilon > 0.0 { config.steps } else { 0 };
    for k in 0..steps {
        let (breakdown, grad) = pipe.eval_grad(&delta)?;
        if k == 0 {
            initial_loss = breakdown.total(&weights);
        }
        for (d, &g) in delta.iter_mut().zip(grad.iter()) {
            if g > 0.0 {
                *d -= config.step_size;
            } else if g < 0.0 {
                *d += config.step_size;
            }
        }
        project_in_place(&mut delta, config.epsilon, &mask);
    }
    let final_breakdown = pipe.eval(&delta)?;
    let final_loss = final_breakdown.total(&weights);
    if steps == 0 {
        initial_loss = final_loss;
    }
    Ok(Perturbation {
        delta,
        epsilon: config.epsilon,
        mask,
        source: PerturbationSource::SampleWise { utterance: 0 },
        rate: patch.rate,
        initial_loss,
        final_loss,
    })
}

/// Optimize one perturbation for one clip. The clip is cropped (or
/// cyclically extended) to the fixed patch first; `source` is tagged
/// sample-wise with utterance 0 — batch drivers re-tag it.
pub fn generate_sample_wise(
    params: &EncoderParams,
    clip: &AudioClip,
    label: usize,
    config: &SlemConfig,
) -> Result<Perturbation> {
    let patch = crop_fixed_patch(clip, config.patch_length)?;
    generate_on_patch(params, &patch, label, config, DEFAULT_MARGIN, DEFAULT_SCALE)
}

/// One perturbation per speaker, each optimized on that speaker's
/// representative clip and meant to be applied to every utterance of
/// the speaker.
pub fn generate_speaker_wise(
    params: &EncoderParams,
    representatives: &[(AudioClip, usize)],
    config: &SlemConfig,
) -> Result<BTreeMap<usize, Perturbation>> {
    let mut seen = std::collections::HashSet::new();
    for (_, speaker) in representatives {
        if !seen.insert(*speaker) {
            return Err(Error::DuplicateSpeaker { speaker: *speaker });
        }
    }
    let pairs: Vec<(usize, Perturbation)> = representatives
        .par_iter()
        .map(|(clip, speaker)| {
            let mut p = generate_sample_wise(params, clip, *speaker, config)?;
            p.source = PerturbationSource::SpeakerWise { speaker: *speaker };
            Ok((*speaker, p))
        })
        .collect::<Result<_>>()?;
    Ok(pairs.into_iter().collect())
}

/// Add a perturbation to the head of a clip. The delta is truncated if
/// the clip is shorter than the patch; the sum is clamped to [-1, 1];
/// samples past the patch are untouched.
pub fn apply(clip: &AudioClip, perturbation: &Perturbation) -> Result<AudioClip> {
    if clip.rate != perturbation.rate {
        return Err(Error::RateMismatch {
            left: clip.rate,
            right: perturbation.rate,
        });
    }
    let mut samples = clip.samples.clone();
    for (s, &d) in samples.iter_mut().zip(perturbation.delta.iter()) {
        *s = (*s + d).clamp(-1.0, 1.0);
    }
    Ok(AudioClip::new(samples, clip.rate))
}

/// One line of `protection.log`.
#[derive(Debug, Clone)]
pub struct ProtectionRecord {
    pub rel_path: String,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub delta_linf: f64,
    /// None when the perturbation came out identically zero.
    pub snr_db: Option<f64>,
    pub mse_e6: f64,
    /// Largest |delta| outside the mask; 0 when the invariant holds.
    pub off_mask_max: f64,
}

/// Protect every manifest entry: optimize (per utterance or per
/// speaker), apply, and write the result under `out_dir` mirroring the
/// manifest's relative paths, together with `manifest.csv` and
/// `protection.log`.
pub fn protect_manifest(
    params: &EncoderParams,
    manifest: &DatasetManifest,
    out_dir: impl AsRef<Path>,
    config: &SlemConfig,
) -> Result<Vec<ProtectionRecord>> {
    let out_dir = out_dir.as_ref();
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let clips: Vec<AudioClip> = manifest
        .entries
        .par_iter()
        .map(|entry| {
            let clip = read_wav(manifest.resolve(&entry.rel_path))?;
            if clip.rate != PIPELINE_RATE {
                return Err(Error::RateMismatch {
                    left: PIPELINE_RATE,
                    right: clip.rate,
                });
            }
            Ok(clip)
        })
        .collect::<Result<_>>()?;

    let perturbations: Vec<Perturbation> = match config.mode {
        Mode::SampleWise => manifest
            .entries
            .par_iter()
            .zip(clips.par_iter())
            .enumerate()
            .map(|(utterance, (entry, clip))| {
                let mut p = generate_sample_wise(params, clip, entry.speaker, config)?;
                p.source = PerturbationSource::SampleWise { utterance };
                Ok(p)
            })
            .collect::<Result<_>>()?,
        Mode::SpeakerWise => {
            // representative = first utterance of each speaker, manifest order
            let mut reps: Vec<(AudioClip, usize)> = Vec::new();
            let mut seen = std::collections::HashSet::new();
            for (entry, clip) in manifest.entries.iter().zip(clips.iter()) {
                if seen.insert(entry.speaker) {
                    reps.push((clip.clone(), entry.speaker));
                }
            }
            let per_speaker = generate_speaker_wise(params, &reps, config)?;
            manifest
                .entries
                .iter()
                .map(|entry| per_speaker[&entry.speaker].clone())
                .collect()
        }
    };

    let mut records = Vec::with_capacity(manifest.entries.len());
    for ((entry, clip), pert) in manifest
        .entries
        .iter()
        .zip(clips.iter())
        .zip(perturbations.iter())
    {
        let protected = apply(clip, pert)?;
        let dst = out_dir.join(&entry.rel_path);
        if let Some(parent) = dst.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        write_wav(&dst, &protected)?;

        // report SNR over the patch region, quality over the full clip
        let span = clip.len().min(pert.delta.len());
        let clean_patch = AudioClip::new(clip.samples[..span].to_vec(), clip.rate);
        let prot_patch = AudioClip::new(protected.samples[..span].to_vec(), clip.rate);
        let snr = match snr_db(&clean_patch, &prot_patch) {
            Ok(v) => Some(v),
            Err(Error::ZeroNoise) => None,
            Err(e) => return Err(e),
        };
        records.push(ProtectionRecord {
            rel_path: entry.rel_path.clone(),
            initial_loss: pert.initial_loss,
            final_loss: pert.final_loss,
            delta_linf: pert.linf(),
            snr_db: snr,
            mse_e6: mse_e6(clip, &protected)?,
            off_mask_max: pert.off_mask_max(),
        });
    }

    // mirror the manifest (labels already contiguous) and write the log
    let manifest_path = out_dir.join("manifest.csv");
    let mut mf = String::new();
    for entry in &manifest.entries {
        mf.push_str(&format!("{},{}\n", entry.rel_path, entry.speaker));
    }
    fs::write(&manifest_path, mf).map_err(|e| Error::io(&manifest_path, e))?;

    let log_path = out_dir.join("protection.log");
    let mut log = fs::File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
    writeln!(
        log,
        "path,initial_loss,final_loss,delta_linf,snr_db,mse_e6"
    )
    .map_err(|e| Error::io(&log_path, e))?;
    for r in &records {
        let snr = match r.snr_db {
            Some(v) => fmt_sig6(v),
            None => "zero_noise".to_string(),
        };
        writeln!(
            log,
            "{},{},{},{},{},{}",
            r.rel_path,
            fmt_sig6(r.initial_loss),
            fmt_sig6(r.final_loss),
            fmt_sig6(r.delta_linf),
            snr,
            fmt_sig6(r.mse_e6)
        )
        .map_err(|e| Error::io(&log_path, e))?;
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{init_params, EncoderConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn test_clip(n: usize, seed: u64) -> AudioClip {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f0 = rng.gen_range(120.0..280.0);
        let fm = rng.gen_range(2.0..6.0);
        let samples = (0..n)
            .map(|t| {
                let ts = t as f64 / PIPELINE_RATE as f64;
                let env = 0.15 + 0.85 * (0.5 + 0.5 * (2.0 * std::f64::consts::PI * fm * ts).sin());
                let mut v = 0.0;
                for k in 1..6 {
                    v += (2.0 * std::f64::consts::PI * k as f64 * f0 * ts).sin() / k as f64;
                }
                0.3 * env * v + 0.001 * rng.gen_range(-1.0..1.0)
            })
            .collect();
        AudioClip::new(samples, PIPELINE_RATE)
    }

    fn small_params(seed: u64) -> EncoderParams {
        let cfg = EncoderConfig {
            n_mels: 40,
            channels: 8,
            embedding_dim: 8,
            seed,
        };
        init_params(&cfg, 4)
    }

    fn small_config(steps: usize) -> SlemConfig {
        SlemConfig {
            steps,
            patch_length: 8_000,
            ..SlemConfig::default()
        }
    }

    #[test]
    fn mask_selects_largest_amplitudes() {
        let clip = AudioClip::new(vec![0.1, -0.5, 0.3, -0.05], 16_000);
        assert_eq!(amplitude_mask(&clip, 0.5).unwrap(), vec![0, 1, 1, 0]);
        assert_eq!(amplitude_mask(&clip, 1.0).unwrap(), vec![1, 1, 1, 1]);
        assert_eq!(amplitude_mask(&clip, 0.0).unwrap(), vec![0, 0, 0, 0]);
    }

    #[test]
    fn mask_breaks_ties_toward_lower_index() {
        let clip = AudioClip::new(vec![0.5, -0.5, 0.1, 0.5], 16_000);
        assert_eq!(amplitude_mask(&clip, 0.5).unwrap(), vec![1, 1, 0, 0]);
        // ceil: 5 samples at q=0.5 -> 3 ones
        let clip5 = AudioClip::new(vec![1.0, 0.9, 0.8, 0.7, 0.6], 16_000);
        assert_eq!(amplitude_mask(&clip5, 0.5).unwrap(), vec![1, 1, 1, 0, 0]);
    }

    #[test]
    fn mask_validates_input() {
        let empty = AudioClip::new(vec![], 16_000);
        assert!(matches!(
            amplitude_mask(&empty, 0.5),
            Err(Error::EmptyClip)
        ));
        let clip = AudioClip::new(vec![1.0], 16_000);
        assert!(matches!(
            amplitude_mask(&clip, 1.5),
            Err(Error::BadFraction { .. })
        ));
    }

    #[test]
    fn projection_clamps_and_masks() {
        let out = project(&[0.01, -0.002], 0.005, &[1, 1]);
        assert_eq!(out, vec![0.005, -0.002]);
        let out = project(&[0.01, -0.002], 0.005, &[0, 1]);
        assert_eq!(out, vec![0.0, -0.002]);

        // scalar-loop comparison on random input
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let delta: Vec<f64> = (0..64).map(|_| rng.gen_range(-0.02..0.02)).collect();
        let mask: Vec<u8> = (0..64).map(|_| rng.gen_range(0..2) as u8).collect();
        let got = project(&delta, 0.005, &mask);
        for i in 0..64 {
            let expect = if mask[i] == 0 {
                0.0
            } else if delta[i] > 0.005 {
                0.005
            } else if delta[i] < -0.005 {
                -0.005
            } else {
                delta[i]
            };
            assert_eq!(got[i], expect, "index {i}");
        }
    }

    #[test]
    fn total_loss_recombines_from_breakdown() {
        let params = small_params(1);
        let clip = test_clip(8_000, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let delta: Vec<f64> = (0..8_000).map(|_| rng.gen_range(-0.005..0.005)).collect();
        let w = PHLWeights::default();
        let (total, b) = total_loss(&params, &clip, &delta, 1, &w).unwrap();
        let recombined = w.alpha * b.l_arc + w.beta * b.l_stft + w.gamma * b.l_stoi;
        assert!((total - recombined).abs() < 1e-12);
        assert!(b.l_stft > 0.0 && b.l_stoi > 0.0);

        // margin-only weights leave exactly the margin term
        let w_arc = PHLWeights {
            alpha: 1.0,
            beta: 0.0,
            gamma: 0.0,
            lambda: 0.1,
        };
        let (total_arc, b_arc) = total_loss(&params, &clip, &delta, 1, &w_arc).unwrap();
        assert_eq!(total_arc, b_arc.l_arc);
    }

    #[test]
    fn zero_delta_zeroes_perceptual_terms() {
        let params = small_params(5);
        let clip = test_clip(8_000, 6);
        let delta = vec![0.0; 8_000];
        let w = PHLWeights::default();
        let (total, b) = total_loss(&params, &clip, &delta, 0, &w).unwrap();
        assert_eq!(b.l_stft, 0.0);
        assert!(b.l_stoi.abs() < 1e-18, "{}", b.l_stoi);
        assert!((total - w.alpha * b.l_arc).abs() < 1e-18);
    }

    #[test]
    fn zero_steps_and_zero_epsilon_are_identities() {
        let params = small_params(7);
        let clip = test_clip(8_000, 8);
        let p0 = generate_sample_wise(&params, &clip, 0, &small_config(0)).unwrap();
        assert!(p0.delta.iter().all(|&d| d == 0.0));
        assert_eq!(p0.initial_loss, p0.final_loss);

        let mut cfg = small_config(3);
        cfg.epsilon = 0.0;
        let pe = generate_sample_wise(&params, &clip, 0, &cfg).unwrap();
        assert!(pe.delta.iter().all(|&d| d == 0.0));
    }

    #[test]
    fn generated_delta_obeys_bound_mask_and_reduces_loss() {
        let params = small_params(9);
        let clip = test_clip(8_000, 10);
        let cfg = small_config(6);
        let p = generate_sample_wise(&params, &clip, 2, &cfg).unwrap();
        assert!(p.linf() <= cfg.epsilon, "{}", p.linf());
        assert_eq!(p.off_mask_max(), 0.0);
        assert!(p.final_loss < p.initial_loss, "{} -> {}", p.initial_loss, p.final_loss);

        // determinism
        let q = generate_sample_wise(&params, &clip, 2, &cfg).unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn plain_and_perceptual_modes_differ() {
        let params = small_params(11);
        let clip = test_clip(8_000, 12);
        let cfg = small_config(3);
        let plain = SlemConfig {
            plain_slem: true,
            ..cfg.clone()
        };
        let a = generate_sample_wise(&params, &clip, 1, &cfg).unwrap();
        let b = generate_sample_wise(&params, &clip, 1, &plain).unwrap();
        assert_ne!(a.delta, b.delta);
    }

    #[test]
    fn apply_is_local_and_clamped() {
        let pert = Perturbation {
            delta: vec![0.005, -0.005, 0.0],
            epsilon: 0.005,
            mask: vec![1, 1, 0],
            source: PerturbationSource::SampleWise { utterance: 0 },
            rate: 16_000,
            initial_loss: 0.0,
            final_loss: 0.0,
        };
        let clip = AudioClip::new(vec![0.999, 0.5, 0.25, -0.125], 16_000);
        let out = apply(&clip, &pert).unwrap();
        assert_eq!(out.samples[0], 1.0); // clamped
        assert_eq!(out.samples[1], 0.495);
        assert_eq!(out.samples[2], 0.25);
        assert_eq!(out.samples[3], -0.125); // beyond the patch

        let zero = Perturbation {
            delta: vec![0.0; 3],
            ..pert.clone()
        };
        assert_eq!(apply(&clip, &zero).unwrap().samples, clip.samples);

        let wrong_rate = AudioClip::new(vec![0.0; 4], 8_000);
        assert!(matches!(
            apply(&wrong_rate, &pert),
            Err(Error::RateMismatch { .. })
        ));
    }

    #[test]
    fn speaker_wise_matches_sample_wise_for_one_speaker() {
        let params = small_params(13);
        let clip = test_clip(8_000, 14);
        let cfg = small_config(2);
        let single = generate_sample_wise(&params, &clip, 3, &cfg).unwrap();
        let map = generate_speaker_wise(&params, &[(clip, 3)], &cfg).unwrap();
        assert_eq!(map.len(), 1);
        let p = &map[&3];
        assert_eq!(p.delta, single.delta);
        assert_eq!(p.source, PerturbationSource::SpeakerWise { speaker: 3 });
    }

    #[test]
    fn speaker_wise_rejects_duplicates_and_zeroes_at_k0() {
        let params = small_params(15);
        let a = test_clip(8_000, 16);
        let b = test_clip(8_000, 17);
        let cfg = small_config(2);
        assert!(matches!(
            generate_speaker_wise(&params, &[(a.clone(), 1), (b.clone(), 1)], &cfg),
            Err(Error::DuplicateSpeaker { speaker: 1 })
        ));
        let map = generate_speaker_wise(&params, &[(a, 0), (b, 1)], &small_config(0)).unwrap();
        assert!(map.values().all(|p| p.delta.iter().all(|&d| d == 0.0)));
    }

    #[test]
    fn config_validation_errors() {
        let params = small_params(18);
        let clip = test_clip(8_000, 19);
        let mut cfg = small_config(1);
        cfg.epsilon = -0.1;
        assert!(matches!(
            generate_sample_wise(&params, &clip, 0, &cfg),
            Err(Error::BadEpsilon { .. })
        ));
        let mut cfg = small_config(1);
        cfg.mask_keep_fraction = 1.2;
        assert!(matches!(
            generate_sample_wise(&params, &clip, 0, &cfg),
            Err(Error::BadFraction { .. })
        ));
        let mut cfg = small_config(1);
        cfg.step_size = 0.0;
        assert!(matches!(
            generate_sample_wise(&params, &clip, 0, &cfg),
            Err(Error::BadStepSize { .. })
        ));
    }
}
