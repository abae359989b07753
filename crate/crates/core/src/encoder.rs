//! A small speaker encoder: per-frame feature centering, three dilated
//! temporal convolutions over log-mel frames, mean+std pooling, a
//! linear projection to a unit-norm embedding, and an
//! additive-angular-margin softmax head.
//!
//! Forward and backward passes are written out by hand (f64 math,
//! f32 parameter storage) so the perturbation optimizer can pull
//! exact gradients back to the input features, and training needs
//! nothing beyond plain mini-batch gradient descent.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::audio_io::{crop_fixed_patch, read_wav, DatasetManifest};
use crate::dsp::{FeatureConfig, FeatureMap, LogMelPipeline, PIPELINE_RATE};
use crate::{Error, Result};

pub const CONV_KERNELS: [usize; 3] = [5, 3, 3];
pub const CONV_DILATIONS: [usize; 3] = [1, 2, 3];
/// Frames required by the receptive field of the conv stack.
pub const MIN_FRAMES: usize = 9;
/// Mini-batch size used by [`train`].
pub const BATCH_SIZE: usize = 32;
/// Variance floor inside the std pooling branch.
const STD_EPS: f64 = 1e-10;

pub const DEFAULT_MARGIN: f64 = 0.2;
pub const DEFAULT_SCALE: f64 = 30.0;
/// Mini-batch gradient descent step. 0.05 sits at the edge of
/// stability for this architecture (the loss stalls near ln S); 0.01
/// converges to a usable verification baseline in ~30 epochs.
pub const DEFAULT_LR: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncoderConfig {
    pub n_mels: usize,
    /// Hidden width C of every conv layer.
    pub channels: usize,
    /// Embedding size E.
    pub embedding_dim: usize,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            n_mels: 40,
            channels: 64,
            embedding_dim: 64,
            seed: 0,
        }
    }
}

impl EncoderConfig {
    /// Named architectures for cross-model experiments. cfgA is the
    /// default; cfgB widens the network, cfgC changes the front end,
    /// cfgD does both.
    pub fn preset(name: &str) -> Result<Self> {
        let (n_mels, channels, embedding_dim) = match name {
            "cfgA" => (40, 64, 64),
            "cfgB" => (40, 96, 128),
            "cfgC" => (48, 64, 64),
            "cfgD" => (48, 96, 128),
            _ => {
                return Err(Error::UnknownPreset {
                    name: name.to_string(),
                })
            }
        };
        Ok(EncoderConfig {
            n_mels,
            channels,
            embedding_dim,
            seed: 0,
        })
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Feature front end matching this architecture.
    pub fn feature_config(&self) -> FeatureConfig {
        FeatureConfig {
            n_mels: self.n_mels,
            ..FeatureConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    /// `[out_ch][in_ch][kernel]`, row-major.
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub dilation: usize,
}

impl ConvLayer {
    fn pad(&self) -> usize {
        (self.kernel - 1) * self.dilation / 2
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub config: EncoderConfig,
    pub n_speakers: usize,
    pub trained_epochs: u32,
    pub conv: Vec<ConvLayer>,
    /// Projection `[embedding_dim][2 * channels]`, no bias.
    pub proj: Vec<f32>,
    /// Class directions `[n_speakers][embedding_dim]`, unit rows.
    pub aam: Vec<f32>,
}

/// Unit-norm speaker embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding(pub Vec<f64>);

impl Embedding {
    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

/// Fresh parameters: conv kernels uniform in `±1/sqrt(fan_in)`, zero
/// biases, Gaussian class directions normalized to unit length.
/// Deterministic in `config.seed`.
pub fn init_params(config: &EncoderConfig, n_speakers: usize) -> EncoderParams {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut uniform = |n: usize, bound: f64| -> Vec<f32> {
        (0..n).map(|_| rng.gen_range(-bound..bound) as f32).collect()
    };
    let c = config.channels;
    let mut conv = Vec::with_capacity(3);
    let mut in_ch = config.n_mels;
    for (k, d) in CONV_KERNELS.iter().zip(CONV_DILATIONS.iter()) {
        let bound = 1.0 / ((in_ch * k) as f64).sqrt();
        conv.push(ConvLayer {
            weight: uniform(c * in_ch * k, bound),
            bias: vec![0.0; c],
            in_ch,
            out_ch: c,
            kernel: *k,
            dilation: *d,
        });
        in_ch = c;
    }
    let proj_bound = 1.0 / ((2 * c) as f64).sqrt();
    let proj = uniform(config.embedding_dim * 2 * c, proj_bound);

    // Box-Muller pairs for the class directions
    let mut aam = vec![0.0f32; n_speakers * config.embedding_dim];
    for row in aam.chunks_mut(config.embedding_dim) {
        let mut i = 0;
        while i < row.len() {
            let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
            let u2: f64 = rng.gen_range(0.0..1.0);
            let r = (-2.0 * u1.ln()).sqrt();
            let theta = 2.0 * std::f64::consts::PI * u2;
            row[i] = (r * theta.cos()) as f32;
            if i + 1 < row.len() {
                row[i + 1] = (r * theta.sin()) as f32;
            }
            i += 2;
        }
        normalize_row_f32(row);
    }
    EncoderParams {
        config: config.clone(),
        n_speakers,
        trained_epochs: 0,
        conv,
        proj,
        aam,
    }
}

fn normalize_row_f32(row: &mut [f32]) {
    let norm = row.iter().map(|&v| v as f64 * v as f64).sum::<f64>().sqrt();
    if norm > 0.0 {
        for v in row.iter_mut() {
            *v = (*v as f64 / norm) as f32;
        }
    }
}

/// Everything the backward pass needs from one forward evaluation.
pub struct ForwardCache {
    /// Centered input features, channel-major `[n_mels][frames]`.
    input: Vec<f64>,
    /// Post-rectification activations per layer, channel-major.
    acts: Vec<Vec<f64>>,
    frames: usize,
    mean: Vec<f64>,
    std: Vec<f64>,
    pooled: Vec<f64>,
    /// Projection output before normalization.
    raw: Vec<f64>,
    raw_norm: f64,
}

fn conv_forward(layer: &ConvLayer, input: &[f64], frames: usize, out: &mut [f64]) {
    let pad = layer.pad();
    let k = layer.kernel;
    let d = layer.dilation;
    for oc in 0..layer.out_ch {
        let bias = layer.bias[oc] as f64;
        let dst = &mut out[oc * frames..(oc + 1) * frames];
        for slot in dst.iter_mut() {
            *slot = bias;
        }
        for ic in 0..layer.in_ch {
            let src = &input[ic * frames..(ic + 1) * frames];
            let wbase = (oc * layer.in_ch + ic) * k;
            for j in 0..k {
                let w = layer.weight[wbase + j] as f64;
                if w == 0.0 {
                    continue;
                }
                // out[t] += w * src[t + j*d - pad] over the valid range
                let shift = j * d;
                let (t_lo, s_lo) = if shift >= pad {
                    (0usize, shift - pad)
                } else {
                    (pad - shift, 0usize)
                };
                let span = (frames - s_lo).min(frames - t_lo);
                let dsti = &mut dst[t_lo..t_lo + span];
                let srci = &src[s_lo..s_lo + span];
                for (a, b) in dsti.iter_mut().zip(srci.iter()) {
                    *a += w * b;
                }
            }
        }
    }
}

/// `d_input += W^T d_out`, and optionally `d_w`, `d_b` accumulation.
fn conv_backward(
    layer: &ConvLayer,
    input: &[f64],
    d_out: &[f64],
    frames: usize,
    d_input: &mut [f64],
    mut grads: Option<(&mut [f64], &mut [f64])>,
) {
    let pad = layer.pad();
    let k = layer.kernel;
    let d = layer.dilation;
    for oc in 0..layer.out_ch {
        let gout = &d_out[oc * frames..(oc + 1) * frames];
        if let Some((_, ref mut d_bias)) = grads {
            d_bias[oc] += gout.iter().sum::<f64>();
        }
        for ic in 0..layer.in_ch {
            let src = &input[ic * frames..(ic + 1) * frames];
            let dsrc = &mut d_input[ic * frames..(ic + 1) * frames];
            let wbase = (oc * layer.in_ch + ic) * k;
            for j in 0..k {
                let shift = j * d;
                let (t_lo, s_lo) = if shift >= pad {
                    (0usize, shift - pad)
                } else {
                    (pad - shift, 0usize)
                };
                let span = (frames - s_lo).min(frames - t_lo);
                let w = layer.weight[wbase + j] as f64;
                if w != 0.0 {
                    let gi = &gout[t_lo..t_lo + span];
                    let di = &mut dsrc[s_lo..s_lo + span];
                    for (a, b) in di.iter_mut().zip(gi.iter()) {
                        *a += w * b;
                    }
                }
                if let Some((ref mut d_weight, _)) = grads {
                    let gi = &gout[t_lo..t_lo + span];
                    let si = &src[s_lo..s_lo + span];
                    let mut acc = 0.0;
                    for (a, b) in gi.iter().zip(si.iter()) {
                        acc += a * b;
                    }
                    d_weight[wbase + j] += acc;
                }
            }
        }
    }
}

fn check_features(params: &EncoderParams, features: &FeatureMap) -> Result<()> {
    if features.bands != params.config.n_mels {
        return Err(Error::FeatureShape {
            expected: params.config.n_mels,
            got: features.bands,
        });
    }
    if features.frames < MIN_FRAMES {
        return Err(Error::TooFewFrames {
            frames: features.frames,
            needed: MIN_FRAMES,
        });
    }
    Ok(())
}

pub fn forward(params: &EncoderParams, features: &FeatureMap) -> Result<Embedding> {
    Ok(forward_cached(params, features)?.0)
}

pub fn forward_cached(
    params: &EncoderParams,
    features: &FeatureMap,
) -> Result<(Embedding, ForwardCache)> {
    check_features(params, features)?;
    let frames = features.frames;
    let n_mels = features.bands;
    let tf = frames as f64;
    // transpose to channel-major
    let mut input = vec![0.0; n_mels * frames];
    for t in 0..frames {
        for b in 0..n_mels {
            input[b * frames + t] = features.data[t * n_mels + b];
        }
    }
    // Center each frame across bins. Log energies shift all bins
    // together with loudness and the amplitude envelope; left in, that
    // common component dominates the pooled statistics and every clip
    // collapses to nearly the same embedding. Centering keeps only the
    // spectral shape, which is what separates speakers.
    let bf = n_mels as f64;
    for t in 0..frames {
        let mut m = 0.0;
        for b in 0..n_mels {
            m += input[b * frames + t];
        }
        m /= bf;
        for b in 0..n_mels {
            input[b * frames + t] -= m;
        }
    }
    let c = params.config.channels;
    let mut acts = Vec::with_capacity(3);
    let mut cur = input.clone();
    for layer in &params.conv {
        let mut out = vec![0.0; c * frames];
        conv_forward(layer, &cur, frames, &mut out);
        for v in out.iter_mut() {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        acts.push(out.clone());
        cur = out;
    }

    let mut mean = vec![0.0; c];
    let mut std = vec![0.0; c];
    for ch in 0..c {
        let row = &cur[ch * frames..(ch + 1) * frames];
        let m = row.iter().sum::<f64>() / tf;
        let var = row.iter().map(|&v| (v - m) * (v - m)).sum::<f64>() / tf;
        mean[ch] = m;
        std[ch] = (var + STD_EPS).sqrt();
    }
    let mut pooled = Vec::with_capacity(2 * c);
    pooled.extend_from_slice(&mean);
    pooled.extend_from_slice(&std);

    let e_dim = params.config.embedding_dim;
    let mut raw = vec![0.0; e_dim];
    for e in 0..e_dim {
        let row = &params.proj[e * 2 * c..(e + 1) * 2 * c];
        raw[e] = row
            .iter()
            .zip(pooled.iter())
            .map(|(&w, &p)| w as f64 * p)
            .sum();
    }
    let raw_norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(raw_norm.is_finite() && raw_norm > 0.0) {
        return Err(Error::NonFinite {
            context: "embedding norm".into(),
        });
    }
    let emb: Vec<f64> = raw.iter().map(|v| v / raw_norm).collect();
    let cache = ForwardCache {
        input,
        acts,
        frames,
        mean,
        std,
        pooled,
        raw,
        raw_norm,
    };
    Ok((Embedding(emb), cache))
}

/// Gradients of every parameter tensor, in f64.
pub struct ParamGrads {
    pub conv_w: Vec<Vec<f64>>,
    pub conv_b: Vec<Vec<f64>>,
    pub proj: Vec<f64>,
    pub aam: Vec<f64>,
}

impl ParamGrads {
    pub fn zeros_like(params: &EncoderParams) -> Self {
        ParamGrads {
            conv_w: params.conv.iter().map(|l| vec![0.0; l.weight.len()]).collect(),
            conv_b: params.conv.iter().map(|l| vec![0.0; l.bias.len()]).collect(),
            proj: vec![0.0; params.proj.len()],
            aam: vec![0.0; params.aam.len()],
        }
    }
}

/// Pull an embedding cotangent back to the input features
/// (frame-major, like `FeatureMap.data`). With `grads` given, also
/// accumulates parameter gradients.
pub fn backward(
    params: &EncoderParams,
    cache: &ForwardCache,
    d_emb: &[f64],
    mut grads: Option<&mut ParamGrads>,
) -> Vec<f64> {
    let frames = cache.frames;
    let c = params.config.channels;
    let e_dim = params.config.embedding_dim;
    let tf = frames as f64;

    // normalization: e = raw / |raw|
    let n = cache.raw_norm;
    let dot: f64 = d_emb.iter().zip(cache.raw.iter()).map(|(g, r)| g * r).sum();
    let d_raw: Vec<f64> = d_emb
        .iter()
        .zip(cache.raw.iter())
        .map(|(g, r)| g / n - r * dot / (n * n * n))
        .collect();

    // projection
    let mut d_pooled = vec![0.0; 2 * c];
    for e in 0..e_dim {
        let g = d_raw[e];
        if g == 0.0 {
            continue;
        }
        let row = &params.proj[e * 2 * c..(e + 1) * 2 * c];
        for (slot, &w) in d_pooled.iter_mut().zip(row.iter()) {
            *slot += w as f64 * g;
        }
    }
    if let Some(ref mut gr) = grads {
        for e in 0..e_dim {
            let g = d_raw[e];
            if g == 0.0 {
                continue;
            }
            let row = &mut gr.proj[e * 2 * c..(e + 1) * 2 * c];
            for (slot, &p) in row.iter_mut().zip(cache.pooled.iter()) {
                *slot += g * p;
            }
        }
    }

    // pooling: mean and std per channel
    let top = &cache.acts[2];
    let mut d_top = vec![0.0; c * frames];
    for ch in 0..c {
        let d_mean = d_pooled[ch];
        let d_std = d_pooled[c + ch];
        let m = cache.mean[ch];
        let s = cache.std[ch];
        let row = &top[ch * frames..(ch + 1) * frames];
        let dst = &mut d_top[ch * frames..(ch + 1) * frames];
        let mean_term = d_mean / tf;
        let std_term = d_std / (tf * s);
        for (slot, &a) in dst.iter_mut().zip(row.iter()) {
            *slot = mean_term + std_term * (a - m);
        }
    }

    // conv stack, last to first, rectifier gates on the activations
    let mut d_cur = d_top;
    for li in (0..3).rev() {
        let act = &cache.acts[li];
        for (g, &a) in d_cur.iter_mut().zip(act.iter()) {
            if a <= 0.0 {
                *g = 0.0;
            }
        }
        let below = if li == 0 { &cache.input } else { &cache.acts[li - 1] };
        let layer = &params.conv[li];
        let mut d_below = vec![0.0; layer.in_ch * frames];
        let layer_grads = grads
            .as_deref_mut()
            .map(|gr| {
                let (w, b) = (&mut gr.conv_w[li], &mut gr.conv_b[li]);
                (w.as_mut_slice(), b.as_mut_slice())
            });
        conv_backward(layer, below, &d_cur, frames, &mut d_below, layer_grads);
        d_cur = d_below;
    }

    // centering is the linear projection I - (1/B) 11^T per frame and
    // is its own adjoint: subtract each frame's mean gradient
    let n_mels = params.config.n_mels;
    let bf = n_mels as f64;
    for t in 0..frames {
        let mut m = 0.0;
        for b in 0..n_mels {
            m += d_cur[b * frames + t];
        }
        m /= bf;
        for b in 0..n_mels {
            d_cur[b * frames + t] -= m;
        }
    }

    // back to frame-major feature layout
    let mut d_features = vec![0.0; frames * n_mels];
    for b in 0..n_mels {
        for t in 0..frames {
            d_features[t * n_mels + b] = d_cur[b * frames + t];
        }
    }
    d_features
}

fn aam_target_logit(cos_y: f64, margin: f64, scale: f64) -> (f64, f64) {
    // clamp so the sine stays real and the backward stays bounded
    let clamped = cos_y.clamp(-(1.0 - 1e-7), 1.0 - 1e-7);
    let sin_y = (1.0 - clamped * clamped).sqrt();
    let logit = scale * (clamped * margin.cos() - sin_y * margin.sin());
    // d logit / d cos_y (zero where the clamp is active)
    let dlogit = if cos_y == clamped {
        scale * (margin.cos() + clamped / sin_y * margin.sin())
    } else {
        0.0
    };
    (logit, dlogit)
}

/// Margin-softmax loss of an embedding against class `label`:
/// the target logit is `scale * cos(theta + margin)`, every other
/// class keeps `scale * cos(theta)`; the loss is the negative log
/// softmax of the target.
pub fn aam_loss(
    params: &EncoderParams,
    emb: &Embedding,
    label: usize,
    margin: f64,
    scale: f64,
) -> Result<f64> {
    Ok(aam_eval(params, emb, label, margin, scale)?.0)
}

/// (loss, d_loss/d_embedding, softmax probabilities)
fn aam_eval(
    params: &EncoderParams,
    emb: &Embedding,
    label: usize,
    margin: f64,
    scale: f64,
) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    let s_count = params.n_speakers;
    if label >= s_count {
        return Err(Error::LabelOutOfRange {
            label,
            n_classes: s_count,
        });
    }
    let e_dim = params.config.embedding_dim;
    debug_assert_eq!(emb.0.len(), e_dim);
    let mut cos = vec![0.0; s_count];
    for (c, slot) in cos.iter_mut().enumerate() {
        let row = &params.aam[c * e_dim..(c + 1) * e_dim];
        *slot = row
            .iter()
            .zip(emb.0.iter())
            .map(|(&w, &e)| w as f64 * e)
            .sum();
    }
    let (target_logit, d_target) = aam_target_logit(cos[label], margin, scale);
    let mut logits: Vec<f64> = cos.iter().map(|&c| scale * c).collect();
    logits[label] = target_logit;

    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum_exp: f64 = logits.iter().map(|&z| (z - max).exp()).sum();
    let lse = max + sum_exp.ln();
    let loss = lse - logits[label];

    // d loss / d logit_c = p_c - [c = label]
    let probs: Vec<f64> = logits.iter().map(|&z| (z - lse).exp()).collect();
    let mut d_cos = vec![0.0; s_count];
    for c in 0..s_count {
        let dz = probs[c] - if c == label { 1.0 } else { 0.0 };
        d_cos[c] = dz * if c == label { d_target } else { scale };
    }
    let mut d_emb = vec![0.0; e_dim];
    for c in 0..s_count {
        let g = d_cos[c];
        if g == 0.0 {
            continue;
        }
        let row = &params.aam[c * e_dim..(c + 1) * e_dim];
        for (slot, &w) in d_emb.iter_mut().zip(row.iter()) {
            *slot += g * w as f64;
        }
    }
    Ok((loss, d_emb, d_cos))
}

/// Loss plus the embedding cotangent; `d_cos` lets callers push
/// gradients into the class directions too.
pub fn aam_loss_grad(
    params: &EncoderParams,
    emb: &Embedding,
    label: usize,
    margin: f64,
    scale: f64,
) -> Result<(f64, Vec<f64>)> {
    let (loss, d_emb, _) = aam_eval(params, emb, label, margin, scale)?;
    Ok((loss, d_emb))
}

/// One mean-gradient descent update over a batch. Returns the updated
/// parameters and the mean loss before the update.
pub fn train_step(
    params: &EncoderParams,
    batch: &[(&FeatureMap, usize)],
    learning_rate: f64,
    margin: f64,
    scale: f64,
) -> Result<(EncoderParams, f64)> {
    assert!(!batch.is_empty(), "empty batch");
    let mut grads = ParamGrads::zeros_like(params);
    let mut total_loss = 0.0;
    let inv = 1.0 / batch.len() as f64;
    let e_dim = params.config.embedding_dim;
    for &(features, label) in batch {
        let (emb, cache) = forward_cached(params, features)?;
        let (loss, d_emb, d_cos) = aam_eval(params, &emb, label, margin, scale)?;
        total_loss += loss;
        let d_emb_scaled: Vec<f64> = d_emb.iter().map(|g| g * inv).collect();
        backward(params, &cache, &d_emb_scaled, Some(&mut grads));
        for (c, &g) in d_cos.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            let row = &mut grads.aam[c * e_dim..(c + 1) * e_dim];
            for (slot, &e) in row.iter_mut().zip(emb.0.iter()) {
                *slot += g * e * inv;
            }
        }
    }
    let mean_loss = total_loss * inv;
    if !mean_loss.is_finite() {
        return Err(Error::NonFinite {
            context: "training loss".into(),
        });
    }

    let mut next = params.clone();
    for (li, layer) in next.conv.iter_mut().enumerate() {
        for (w, g) in layer.weight.iter_mut().zip(grads.conv_w[li].iter()) {
            *w = (*w as f64 - learning_rate * g) as f32;
        }
        for (b, g) in layer.bias.iter_mut().zip(grads.conv_b[li].iter()) {
            *b = (*b as f64 - learning_rate * g) as f32;
        }
    }
    for (w, g) in next.proj.iter_mut().zip(grads.proj.iter()) {
        *w = (*w as f64 - learning_rate * g) as f32;
    }
    for (w, g) in next.aam.iter_mut().zip(grads.aam.iter()) {
        *w = (*w as f64 - learning_rate * g) as f32;
    }
    for row in next.aam.chunks_mut(e_dim) {
        normalize_row_f32(row);
    }
    Ok((next, mean_loss))
}

/// Load every manifest clip, crop to the fixed patch, extract log-mel
/// features. Order follows the manifest.
pub fn corpus_features(
    manifest: &DatasetManifest,
    cfg: &FeatureConfig,
    patch_length: usize,
) -> Result<Vec<(FeatureMap, usize)>> {
    let pipe = LogMelPipeline::new(cfg, PIPELINE_RATE)?;
    manifest
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
            let patch = crop_fixed_patch(&clip, patch_length)?;
            let features = pipe.forward(&patch.samples, patch.rate)?;
            Ok((features, entry.speaker))
        })
        .collect()
}

/// Train a fresh encoder on a manifest: `epochs` passes of shuffled
/// mini-batches (size 32), shuffle order seeded by `config.seed`.
pub fn train(
    manifest: &DatasetManifest,
    config: &EncoderConfig,
    epochs: u32,
    learning_rate: f64,
    margin: f64,
    scale: f64,
    patch_length: usize,
) -> Result<EncoderParams> {
    Ok(train_logged(
        manifest,
        config,
        epochs,
        learning_rate,
        margin,
        scale,
        patch_length,
    )?
    .0)
}

/// [`train`] plus the mean training loss of every epoch.
pub fn train_logged(
    manifest: &DatasetManifest,
    config: &EncoderConfig,
    epochs: u32,
    learning_rate: f64,
    margin: f64,
    scale: f64,
    patch_length: usize,
) -> Result<(EncoderParams, Vec<f64>)> {
    let data = corpus_features(manifest, &config.feature_config(), patch_length)?;
    let mut params = init_params(config, manifest.n_speakers);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut epoch_losses = Vec::with_capacity(epochs as usize);
    for epoch in 0..epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(1 + epoch as u64); // distinct shuffle per epoch
        shuffle(&mut order, &mut rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(BATCH_SIZE) {
            let batch: Vec<(&FeatureMap, usize)> =
                chunk.iter().map(|&i| (&data[i].0, data[i].1)).collect();
            let (next, mean_loss) = train_step(&params, &batch, learning_rate, margin, scale)?;
            loss_sum += mean_loss * batch.len() as f64;
            params = next;
        }
        epoch_losses.push(loss_sum / data.len() as f64);
        params.trained_epochs = epoch + 1;
    }
    Ok((params, epoch_losses))
}

fn shuffle(order: &mut [usize], rng: &mut ChaCha8Rng) {
    // Fisher-Yates
    for i in (1..order.len()).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
}

const MODEL_MAGIC: &[u8; 4] = b"HSPK";
const MODEL_VERSION: u32 = 1;

impl EncoderParams {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MODEL_MAGIC);
        for v in [
            MODEL_VERSION,
            self.config.n_mels as u32,
            self.config.channels as u32,
            self.config.embedding_dim as u32,
            self.n_speakers as u32,
            self.trained_epochs,
            self.config.seed as u32,
            (self.config.seed >> 32) as u32,
        ] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        let mut tensor = |values: &[f32]| {
            for v in values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        };
        for layer in &self.conv {
            tensor(&layer.weight);
            tensor(&layer.bias);
        }
        tensor(&self.proj);
        tensor(&self.aam);
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad_len = || Error::ModelBadLength { path: path.into() };
        if bytes.len() < 4 + 8 * 4 {
            return Err(bad_len());
        }
        if &bytes[0..4] != MODEL_MAGIC {
            return Err(Error::ModelBadMagic { path: path.into() });
        }
        let mut pos = 4;
        let read_u32 = |pos: &mut usize| -> u32 {
            let v = u32::from_le_bytes(bytes[*pos..*pos + 4].try_into().unwrap());
            *pos += 4;
            v
        };
        let version = read_u32(&mut pos);
        if version != MODEL_VERSION {
            return Err(Error::ModelBadVersion {
                path: path.into(),
                version,
            });
        }
        let n_mels = read_u32(&mut pos) as usize;
        let channels = read_u32(&mut pos) as usize;
        let embedding_dim = read_u32(&mut pos) as usize;
        let n_speakers = read_u32(&mut pos) as usize;
        let trained_epochs = read_u32(&mut pos);
        let seed_lo = read_u32(&mut pos) as u64;
        let seed_hi = read_u32(&mut pos) as u64;
        let config = EncoderConfig {
            n_mels,
            channels,
            embedding_dim,
            seed: seed_lo | (seed_hi << 32),
        };
        if n_mels == 0 || channels == 0 || embedding_dim == 0 || n_speakers == 0 {
            return Err(bad_len());
        }

        let take = |n: usize, pos: &mut usize| -> Result<Vec<f32>> {
            let need = n * 4;
            if *pos + need > bytes.len() {
                return Err(bad_len());
            }
            let v = bytes[*pos..*pos + need]
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
                .collect();
            *pos += need;
            Ok(v)
        };
        let mut conv = Vec::with_capacity(3);
        let mut in_ch = n_mels;
        for (k, d) in CONV_KERNELS.iter().zip(CONV_DILATIONS.iter()) {
            let weight = take(channels * in_ch * k, &mut pos)?;
            let bias = take(channels, &mut pos)?;
            conv.push(ConvLayer {
                weight,
                bias,
                in_ch,
                out_ch: channels,
                kernel: *k,
                dilation: *d,
            });
            in_ch = channels;
        }
        let proj = take(embedding_dim * 2 * channels, &mut pos)?;
        let aam = take(n_speakers * embedding_dim, &mut pos)?;
        if pos != bytes.len() {
            return Err(bad_len());
        }
        Ok(EncoderParams {
            config,
            n_speakers,
            trained_epochs,
            conv,
            proj,
            aam,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}
