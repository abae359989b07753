//! Spectral plumbing: STFT and its adjoint, mel filterbank, log-mel
//! features, one-third-octave bands and linear resampling.
//!
//! Everything that the perturbation optimizer differentiates through
//! lives here, so each linear transform carries an explicit adjoint
//! (`stft` / `StftPlan::adjoint`, `LinearResampler::adjoint`, the
//! sparse filterbank rows). All math is f64.

use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::audio_io::AudioClip;
use crate::{Error, Result};

/// Sample rate every training/perturbation pipeline runs at.
pub const PIPELINE_RATE: u32 = 16_000;

/// Symmetric Hann window: `0.5 * (1 - cos(2*pi*t / (len-1)))`.
pub fn hann_window(len: usize) -> Result<Vec<f64>> {
    if len < 2 {
        return Err(Error::WindowTooShort { len });
    }
    let denom = (len - 1) as f64;
    Ok((0..len)
        .map(|t| 0.5 * (1.0 - (2.0 * std::f64::consts::PI * t as f64 / denom).cos()))
        .collect())
}

/// Periodic Hann window: `0.5 * (1 - cos(2*pi*t / len))`.
///
/// At 50% overlap consecutive windows sum to exactly 1, which the
/// silent-frame rebuild in [`crate::perceptual`] relies on.
pub fn periodic_hann(len: usize) -> Result<Vec<f64>> {
    if len < 2 {
        return Err(Error::WindowTooShort { len });
    }
    let denom = len as f64;
    Ok((0..len)
        .map(|t| 0.5 * (1.0 - (2.0 * std::f64::consts::PI * t as f64 / denom).cos()))
        .collect())
}

/// Complex short-time spectrum, frames by bins, row-major.
/// Bins run 0..=nfft/2 (the non-negative frequencies).
#[derive(Debug, Clone)]
pub struct Spectrogram {
    pub data: Vec<Complex64>,
    pub frames: usize,
    pub bins: usize,
    pub window_len: usize,
    pub hop: usize,
    pub nfft: usize,
    pub rate: u32,
}

impl Spectrogram {
    #[inline]
    pub fn at(&self, frame: usize, bin: usize) -> Complex64 {
        self.data[frame * self.bins + bin]
    }

    pub fn frame(&self, frame: usize) -> &[Complex64] {
        &self.data[frame * self.bins..(frame + 1) * self.bins]
    }
}

/// Reusable STFT machinery for one (window, hop, nfft) combination.
pub struct StftPlan {
    pub window: Vec<f64>,
    pub hop: usize,
    pub nfft: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl StftPlan {
    pub fn new(window_len: usize, hop: usize, nfft: usize) -> Result<Self> {
        let window = hann_window(window_len)?;
        if hop == 0 || nfft < window_len {
            return Err(Error::ClipTooShort {
                len: nfft,
                window: window_len,
            });
        }
        let mut planner = FftPlanner::new();
        Ok(StftPlan {
            window,
            hop,
            nfft,
            fwd: planner.plan_fft_forward(nfft),
            inv: planner.plan_fft_inverse(nfft),
        })
    }

    pub fn bins(&self) -> usize {
        self.nfft / 2 + 1
    }

    /// Number of full windows that fit: `1 + (n - window) / hop`.
    pub fn frames_for(&self, n: usize) -> Result<usize> {
        if n < self.window.len() {
            return Err(Error::ClipTooShort {
                len: n,
                window: self.window.len(),
            });
        }
        Ok(1 + (n - self.window.len()) / self.hop)
    }

    /// Windowed, zero-padded, unnormalized FFT of every frame.
    pub fn forward(&self, samples: &[f64], rate: u32) -> Result<Spectrogram> {
        let frames = self.frames_for(samples.len())?;
        let bins = self.bins();
        let wlen = self.window.len();
        let mut data = vec![Complex64::new(0.0, 0.0); frames * bins];
        let mut buf = vec![Complex64::new(0.0, 0.0); self.nfft];
        let mut scratch = vec![Complex64::new(0.0, 0.0); self.fwd.get_inplace_scratch_len()];
        for m in 0..frames {
            let start = m * self.hop;
            for t in 0..wlen {
                buf[t] = Complex64::new(samples[start + t] * self.window[t], 0.0);
            }
            for slot in buf[wlen..].iter_mut() {
                *slot = Complex64::new(0.0, 0.0);
            }
            self.fwd.process_with_scratch(&mut buf, &mut scratch);
            data[m * bins..(m + 1) * bins].copy_from_slice(&buf[..bins]);
        }
        Ok(Spectrogram {
            data,
            frames,
            bins,
            window_len: wlen,
            hop: self.hop,
            nfft: self.nfft,
            rate,
        })
    }

    /// Adjoint of [`forward`](Self::forward) as a map from samples to
    /// the stored bins: given a cotangent `g` on the spectrogram
    /// (row-major frames x bins, `re` paired with d/dRe and `im` with
    /// d/dIm), accumulate the sample-domain gradient.
    pub fn adjoint(&self, cotangent: &[Complex64], frames: usize, n_samples: usize) -> Vec<f64> {
        let bins = self.bins();
        debug_assert_eq!(cotangent.len(), frames * bins);
        let wlen = self.window.len();
        let mut grad = vec![0.0; n_samples];
        let mut buf = vec![Complex64::new(0.0, 0.0); self.nfft];
        let mut scratch = vec![Complex64::new(0.0, 0.0); self.inv.get_inplace_scratch_len()];
        for m in 0..frames {
            let row = &cotangent[m * bins..(m + 1) * bins];
            if row.iter().all(|c| c.re == 0.0 && c.im == 0.0) {
                continue;
            }
            buf[..bins].copy_from_slice(row);
            for slot in buf[bins..].iter_mut() {
                *slot = Complex64::new(0.0, 0.0);
            }
            // unnormalized inverse: buf[t] = sum_k row[k] * exp(+i 2 pi k t / nfft)
            self.inv.process_with_scratch(&mut buf, &mut scratch);
            let start = m * self.hop;
            for t in 0..wlen {
                grad[start + t] += self.window[t] * buf[t].re;
            }
        }
        grad
    }
}

/// Short-time Fourier transform with a symmetric Hann window.
pub fn stft(clip: &AudioClip, window: usize, hop: usize, nfft: usize) -> Result<Spectrogram> {
    StftPlan::new(window, hop, nfft)?.forward(&clip.samples, clip.rate)
}

/// Mel scale: `2595 * log10(1 + f / 700)`.
pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10.0f64.powf(m / 2595.0) - 1.0)
}

/// Triangular mel filterbank over FFT bins. Triangles have unit peak
/// and are stored sparsely (each row touches a contiguous bin range).
#[derive(Debug, Clone)]
pub struct MelFilterbank {
    rows: Vec<MelRow>,
    pub n_bins: usize,
    pub nfft: usize,
    pub rate: u32,
}

#[derive(Debug, Clone)]
struct MelRow {
    first_bin: usize,
    weights: Vec<f64>,
}

impl MelFilterbank {
    pub fn new(nfft: usize, rate: u32, n_mels: usize, f_min: f64, f_max: f64) -> Result<Self> {
        let nyquist = rate as f64 / 2.0;
        if !(0.0..nyquist).contains(&f_min) || f_max <= f_min || f_max > nyquist {
            return Err(Error::BadFrequencyRange { f_min, f_max, rate });
        }
        let n_bins = nfft / 2 + 1;
        let m_lo = hz_to_mel(f_min);
        let m_hi = hz_to_mel(f_max);
        let edges: Vec<f64> = (0..n_mels + 2)
            .map(|i| mel_to_hz(m_lo + (m_hi - m_lo) * i as f64 / (n_mels + 1) as f64))
            .collect();
        let bin_hz = rate as f64 / nfft as f64;
        let mut rows = Vec::with_capacity(n_mels);
        for m in 0..n_mels {
            let (left, center, right) = (edges[m], edges[m + 1], edges[m + 2]);
            let mut first_bin = 0;
            let mut weights = Vec::new();
            for b in 0..n_bins {
                let f = b as f64 * bin_hz;
                let rise = (f - left) / (center - left);
                let fall = (right - f) / (right - center);
                let w = rise.min(fall).max(0.0);
                if w > 0.0 {
                    if weights.is_empty() {
                        first_bin = b;
                    }
                    weights.push(w);
                } else if !weights.is_empty() {
                    break; // triangles cover one contiguous range
                }
            }
            rows.push(MelRow { first_bin, weights });
        }
        Ok(MelFilterbank {
            rows,
            n_bins,
            nfft,
            rate,
        })
    }

    pub fn n_mels(&self) -> usize {
        self.rows.len()
    }

    pub fn weight(&self, mel: usize, bin: usize) -> f64 {
        let row = &self.rows[mel];
        if bin >= row.first_bin && bin < row.first_bin + row.weights.len() {
            row.weights[bin - row.first_bin]
        } else {
            0.0
        }
    }

    /// `out[m] = sum_b weight(m, b) * power[b]`
    pub fn apply(&self, power: &[f64], out: &mut [f64]) {
        debug_assert_eq!(power.len(), self.n_bins);
        for (m, row) in self.rows.iter().enumerate() {
            let mut acc = 0.0;
            for (i, &w) in row.weights.iter().enumerate() {
                acc += w * power[row.first_bin + i];
            }
            out[m] = acc;
        }
    }

    /// Adjoint of [`apply`]: scatter a mel-space cotangent back onto bins.
    pub fn apply_transposed(&self, d_mel: &[f64], d_power: &mut [f64]) {
        for (m, row) in self.rows.iter().enumerate() {
            let g = d_mel[m];
            if g == 0.0 {
                continue;
            }
            for (i, &w) in row.weights.iter().enumerate() {
                d_power[row.first_bin + i] += w * g;
            }
        }
    }
}

/// Settings for the log-mel front end shared by the encoder and the
/// spectral loss.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureConfig {
    pub window: usize,
    pub hop: usize,
    pub nfft: usize,
    pub n_mels: usize,
    pub f_min: f64,
    pub f_max: f64,
    /// Mel energies are clamped to this floor before the log.
    pub energy_floor: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            window: 400,
            hop: 160,
            nfft: 512,
            n_mels: 40,
            f_min: 0.0,
            f_max: 8000.0,
            energy_floor: 1e-10,
        }
    }
}

/// Log-mel features, frames by bands, row-major.
#[derive(Debug, Clone)]
pub struct FeatureMap {
    pub data: Vec<f64>,
    pub frames: usize,
    pub bands: usize,
}

impl FeatureMap {
    #[inline]
    pub fn at(&self, frame: usize, band: usize) -> f64 {
        self.data[frame * self.bands + band]
    }

    pub fn frame(&self, frame: usize) -> &[f64] {
        &self.data[frame * self.bands..(frame + 1) * self.bands]
    }
}

/// STFT power -> mel energies -> `ln(max(E, floor))`, with everything
/// needed to run the chain backwards.
pub struct LogMelPipeline {
    pub plan: StftPlan,
    pub mel: MelFilterbank,
    pub floor: f64,
}

/// Intermediates kept by [`LogMelPipeline::forward_cached`].
pub struct LogMelCache {
    pub spec: Spectrogram,
    /// Mel energies before the floor/log, frames x n_mels.
    pub energies: Vec<f64>,
}

impl LogMelPipeline {
    pub fn new(cfg: &FeatureConfig, rate: u32) -> Result<Self> {
        Ok(LogMelPipeline {
            plan: StftPlan::new(cfg.window, cfg.hop, cfg.nfft)?,
            mel: MelFilterbank::new(cfg.nfft, rate, cfg.n_mels, cfg.f_min, cfg.f_max)?,
            floor: cfg.energy_floor,
        })
    }

    pub fn forward(&self, samples: &[f64], rate: u32) -> Result<FeatureMap> {
        Ok(self.forward_cached(samples, rate)?.0)
    }

    pub fn forward_cached(&self, samples: &[f64], rate: u32) -> Result<(FeatureMap, LogMelCache)> {
        let spec = self.plan.forward(samples, rate)?;
        let n_mels = self.mel.n_mels();
        let mut energies = vec![0.0; spec.frames * n_mels];
        let mut data = vec![0.0; spec.frames * n_mels];
        let mut power = vec![0.0; spec.bins];
        for m in 0..spec.frames {
            let row = spec.frame(m);
            for (b, c) in row.iter().enumerate() {
                power[b] = c.norm_sqr();
            }
            let e = &mut energies[m * n_mels..(m + 1) * n_mels];
            self.mel.apply(&power, e);
            for (dst, &src) in data[m * n_mels..(m + 1) * n_mels].iter_mut().zip(e.iter()) {
                *dst = src.max(self.floor).ln();
            }
        }
        let features = FeatureMap {
            data,
            frames: spec.frames,
            bands: n_mels,
        };
        Ok((features, LogMelCache { spec, energies }))
    }

    /// Map a cotangent on the log-mel features back to a cotangent on
    /// the complex spectrogram (frames x bins, row-major). Floored
    /// cells pass no gradient.
    pub fn spec_cotangent(&self, cache: &LogMelCache, d_features: &[f64]) -> Vec<Complex64> {
        let n_mels = self.mel.n_mels();
        let spec = &cache.spec;
        let mut d_spec = vec![Complex64::new(0.0, 0.0); spec.frames * spec.bins];
        let mut d_mel = vec![0.0; n_mels];
        let mut d_power = vec![0.0; spec.bins];
        for m in 0..spec.frames {
            let e = &cache.energies[m * n_mels..(m + 1) * n_mels];
            let g = &d_features[m * n_mels..(m + 1) * n_mels];
            for j in 0..n_mels {
                d_mel[j] = if e[j] > self.floor { g[j] / e[j] } else { 0.0 };
            }
            for slot in d_power.iter_mut() {
                *slot = 0.0;
            }
            self.mel.apply_transposed(&d_mel, &mut d_power);
            let row = spec.frame(m);
            let out = &mut d_spec[m * spec.bins..(m + 1) * spec.bins];
            for b in 0..spec.bins {
                // d|S|^2/dRe = 2 Re, d|S|^2/dIm = 2 Im
                out[b] = Complex64::new(
                    2.0 * d_power[b] * row[b].re,
                    2.0 * d_power[b] * row[b].im,
                );
            }
        }
        d_spec
    }

    /// Full backward pass: feature cotangent -> sample gradient.
    pub fn backward(&self, cache: &LogMelCache, d_features: &[f64], n_samples: usize) -> Vec<f64> {
        let d_spec = self.spec_cotangent(cache, d_features);
        self.plan.adjoint(&d_spec, cache.spec.frames, n_samples)
    }
}

/// Log-mel features for one clip: STFT power through a mel filterbank,
/// floored and logged. The default config at 16 kHz gives 40 bands.
pub fn log_mel_features(clip: &AudioClip, cfg: &FeatureConfig) -> Result<FeatureMap> {
    LogMelPipeline::new(cfg, clip.rate)?.forward(&clip.samples, clip.rate)
}

/// One-third-octave analysis bands: 15 bands with center frequencies
/// `150 * 2^(k/3)` Hz; band k collects the FFT bins whose frequency
/// falls in `[cf * 2^(-1/6), cf * 2^(1/6))`.
#[derive(Debug, Clone)]
pub struct OctaveBands {
    /// Half-open bin ranges, one per band.
    pub ranges: Vec<(usize, usize)>,
    pub centers: Vec<f64>,
}

pub const N_OCTAVE_BANDS: usize = 15;

impl OctaveBands {
    pub fn new(nfft: usize, rate: u32) -> Result<Self> {
        let n_bins = nfft / 2 + 1;
        let bin_hz = rate as f64 / nfft as f64;
        let mut ranges = Vec::with_capacity(N_OCTAVE_BANDS);
        let mut centers = Vec::with_capacity(N_OCTAVE_BANDS);
        for k in 0..N_OCTAVE_BANDS {
            let cf = 150.0 * 2f64.powf(k as f64 / 3.0);
            let lo = cf * 2f64.powf(-1.0 / 6.0);
            let hi = cf * 2f64.powf(1.0 / 6.0);
            let start = (lo / bin_hz).ceil() as usize;
            let mut end = start;
            while end < n_bins && (end as f64) * bin_hz < hi {
                end += 1;
            }
            if start >= end {
                return Err(Error::EmptyBand { band: k, lo, hi });
            }
            ranges.push((start, end));
            centers.push(cf);
        }
        Ok(OctaveBands { ranges, centers })
    }

    pub fn weight(&self, band: usize, bin: usize) -> f64 {
        let (s, e) = self.ranges[band];
        if bin >= s && bin < e {
            1.0
        } else {
            0.0
        }
    }
}

/// Sample-rate conversion by linear interpolation, with its adjoint.
///
/// Output sample i reads source position `i * from / to`; the output
/// length is `round(n * to / from)`.
#[derive(Debug, Clone)]
pub struct LinearResampler {
    pub from: u32,
    pub to: u32,
    pub n_in: usize,
    pub n_out: usize,
}

impl LinearResampler {
    pub fn new(n_in: usize, from: u32, to: u32) -> Result<Self> {
        if n_in == 0 {
            return Err(Error::EmptyClip);
        }
        if from == 0 || to == 0 {
            return Err(Error::BadResampleRate { from, to });
        }
        let n_out = ((n_in as f64) * to as f64 / from as f64).round().max(1.0) as usize;
        Ok(LinearResampler {
            from,
            to,
            n_in,
            n_out,
        })
    }

    #[inline]
    fn pos(&self, i: usize) -> (usize, f64) {
        let p = i as f64 * self.from as f64 / self.to as f64;
        let j = (p.floor() as usize).min(self.n_in - 1);
        (j, p - j as f64)
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.n_in);
        (0..self.n_out)
            .map(|i| {
                let (j, frac) = self.pos(i);
                let next = x[(j + 1).min(self.n_in - 1)];
                x[j] * (1.0 - frac) + next * frac
            })
            .collect()
    }

    pub fn adjoint(&self, d_out: &[f64]) -> Vec<f64> {
        debug_assert_eq!(d_out.len(), self.n_out);
        let mut d_in = vec![0.0; self.n_in];
        for (i, &g) in d_out.iter().enumerate() {
            let (j, frac) = self.pos(i);
            d_in[j] += (1.0 - frac) * g;
            d_in[(j + 1).min(self.n_in - 1)] += frac * g;
        }
        d_in
    }
}

/// Resample a clip with linear interpolation. 16000 samples at 16 kHz
/// become exactly 10000 samples at 10 kHz.
pub fn resample_linear(clip: &AudioClip, target_rate: u32) -> Result<AudioClip> {
    if clip.rate == target_rate {
        return Ok(clip.clone());
    }
    let rs = LinearResampler::new(clip.samples.len(), clip.rate, target_rate)?;
    Ok(AudioClip {
        samples: rs.forward(&clip.samples),
        rate: target_rate,
    })
}
