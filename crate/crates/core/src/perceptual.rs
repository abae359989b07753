//! Perceptual distances between a clean clip and a degraded copy:
//! a complex-spectral loss, an intelligibility score/loss in the
//! style of short-time band-envelope correlation, and the plain
//! SNR / MSE numbers used by audit reports.
//!
//! The intelligibility pipeline resamples to 10 kHz, drops frames
//! more than 40 dB below the loudest clean frame, splits the STFT
//! into 15 one-third octave bands, and correlates 30-frame envelope
//! windows between clean and degraded. Which frames are dropped is
//! decided by the clean signal alone, so the whole degraded branch
//! stays differentiable; [`StoiPipeline`] exposes that gradient to
//! the perturbation optimizer.

use rustfft::num_complex::Complex64;

use crate::audio_io::AudioClip;
use crate::dsp::{periodic_hann, LinearResampler, OctaveBands, Spectrogram, StftPlan};
use crate::{Error, Result};

/// Internal sample rate of the intelligibility measure.
pub const STOI_RATE: u32 = 10_000;
/// Analysis window / hop / FFT size at 10 kHz.
pub const STOI_WINDOW: usize = 256;
pub const STOI_HOP: usize = 128;
pub const STOI_NFFT: usize = 512;
/// Envelope window length in frames.
pub const STOI_ENV_FRAMES: usize = 30;
/// Silent-frame threshold below the loudest clean frame, in dB.
pub const STOI_DYN_RANGE_DB: f64 = 40.0;
/// Default weight of the envelope L1 term in [`stoi_loss`].
pub const DEFAULT_STOI_LAMBDA: f64 = 0.1;

fn check_pair(a: &AudioClip, b: &AudioClip) -> Result<()> {
    if a.rate != b.rate {
        return Err(Error::RateMismatch {
            left: a.rate,
            right: b.rate,
        });
    }
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    if a.is_empty() {
        return Err(Error::EmptyClip);
    }
    Ok(())
}

/// l2 norm of the complex STFT difference between two same-length,
/// same-rate clips: `sqrt(sum |S_clean - S_deg|^2)`.
pub fn stft_loss(
    clean: &AudioClip,
    degraded: &AudioClip,
    window: usize,
    hop: usize,
    nfft: usize,
) -> Result<f64> {
    check_pair(clean, degraded)?;
    let plan = StftPlan::new(window, hop, nfft)?;
    let s_clean = plan.forward(&clean.samples, clean.rate)?;
    let s_deg = plan.forward(&degraded.samples, degraded.rate)?;
    Ok(stft_loss_from_specs(&s_clean, &s_deg))
}

/// The same loss on precomputed spectrograms.
pub fn stft_loss_from_specs(clean: &Spectrogram, degraded: &Spectrogram) -> f64 {
    debug_assert_eq!(clean.data.len(), degraded.data.len());
    clean
        .data
        .iter()
        .zip(degraded.data.iter())
        .map(|(a, b)| (a - b).norm_sqr())
        .sum::<f64>()
        .sqrt()
}

/// Cotangent of [`stft_loss_from_specs`] on the degraded spectrogram,
/// scaled by `upstream`. Zero loss has zero gradient.
pub fn stft_loss_cotangent(
    clean: &Spectrogram,
    degraded: &Spectrogram,
    loss: f64,
    upstream: f64,
) -> Vec<Complex64> {
    if loss == 0.0 || upstream == 0.0 {
        return vec![Complex64::new(0.0, 0.0); degraded.data.len()];
    }
    let scale = upstream / loss;
    clean
        .data
        .iter()
        .zip(degraded.data.iter())
        .map(|(a, b)| (b - a) * scale)
        .collect()
}

/// Signal-to-noise ratio in dB of `noisy` against `clean`.
pub fn snr_db(clean: &AudioClip, noisy: &AudioClip) -> Result<f64> {
    check_pair(clean, noisy)?;
    let signal: f64 = clean.samples.iter().map(|s| s * s).sum();
    if signal == 0.0 {
        return Err(Error::SilentSignal);
    }
    let noise: f64 = clean
        .samples
        .iter()
        .zip(noisy.samples.iter())
        .map(|(c, n)| (n - c) * (n - c))
        .sum();
    if noise == 0.0 {
        return Err(Error::ZeroNoise);
    }
    Ok(10.0 * (signal / noise).log10())
}

/// Mean squared error scaled by 1e6 (a convenient magnitude for
/// perturbations bounded around 5e-3).
pub fn mse_e6(a: &AudioClip, b: &AudioClip) -> Result<f64> {
    check_pair(a, b)?;
    let n = a.len() as f64;
    let sum: f64 = a
        .samples
        .iter()
        .zip(b.samples.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    Ok(sum / n * 1e6)
}

/// Frame starts kept after thresholding windowed clean-frame energy.
fn silent_keep_list(
    clean: &[f64],
    window: &[f64],
    hop: usize,
    dyn_range_db: f64,
) -> Result<Vec<usize>> {
    let wlen = window.len();
    if clean.len() < wlen {
        return Err(Error::ClipTooShort {
            len: clean.len(),
            window: wlen,
        });
    }
    let n_frames = 1 + (clean.len() - wlen) / hop;
    let energies: Vec<f64> = (0..n_frames)
        .map(|m| {
            let start = m * hop;
            let e: f64 = (0..wlen)
                .map(|t| {
                    let v = window[t] * clean[start + t];
                    v * v
                })
                .sum();
            10.0 * e.log10()
        })
        .collect();
    let e_max = energies.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let keep: Vec<usize> = (0..n_frames)
        .filter(|&m| energies[m] > e_max - dyn_range_db)
        .collect();
    if keep.is_empty() || e_max == f64::NEG_INFINITY {
        return Err(Error::AllFramesSilent);
    }
    Ok(keep)
}

/// Overlap-add the kept frames back into a shorter signal.
fn overlap_add_kept(x: &[f64], keep: &[usize], window: &[f64], hop: usize) -> Vec<f64> {
    let wlen = window.len();
    let out_len = (keep.len() - 1) * hop + wlen;
    let mut out = vec![0.0; out_len];
    for (k, &m) in keep.iter().enumerate() {
        let src = m * hop;
        let dst = k * hop;
        for t in 0..wlen {
            out[dst + t] += window[t] * x[src + t];
        }
    }
    out
}

/// Adjoint of [`overlap_add_kept`] with respect to `x`.
fn overlap_add_adjoint(
    d_out: &[f64],
    keep: &[usize],
    window: &[f64],
    hop: usize,
    n_in: usize,
) -> Vec<f64> {
    let wlen = window.len();
    let mut d_in = vec![0.0; n_in];
    for (k, &m) in keep.iter().enumerate() {
        let src = m * hop;
        let dst = k * hop;
        for t in 0..wlen {
            d_in[src + t] += window[t] * d_out[dst + t];
        }
    }
    d_in
}

/// Drop frames whose *clean* energy is more than `dyn_range_db` below
/// the loudest clean frame, from both signals, and overlap-add what is
/// left with a periodic Hann window. With a fully voiced signal the
/// interior of the reconstruction equals the input.
pub fn remove_silent_frames(
    clean: &AudioClip,
    degraded: &AudioClip,
    window: usize,
    hop: usize,
    dyn_range_db: f64,
) -> Result<(AudioClip, AudioClip)> {
    check_pair(clean, degraded)?;
    let w = periodic_hann(window)?;
    let keep = silent_keep_list(&clean.samples, &w, hop, dyn_range_db)?;
    let c = overlap_add_kept(&clean.samples, &keep, &w, hop);
    let d = overlap_add_kept(&degraded.samples, &keep, &w, hop);
    Ok((
        AudioClip::new(c, clean.rate),
        AudioClip::new(d, degraded.rate),
    ))
}

/// Root-sum-square energy of each one-third octave band per frame,
/// bands-by-frames (band-major).
#[derive(Debug, Clone)]
pub struct Envelopes {
    pub data: Vec<f64>,
    pub bands: usize,
    pub frames: usize,
}

impl Envelopes {
    #[inline]
    pub fn at(&self, band: usize, frame: usize) -> f64 {
        self.data[band * self.frames + frame]
    }
}

fn envelopes_from_spec(spec: &Spectrogram, bands: &OctaveBands) -> Envelopes {
    let frames = spec.frames;
    let mut data = vec![0.0; bands.ranges.len() * frames];
    for m in 0..frames {
        let row = spec.frame(m);
        for (j, &(s, e)) in bands.ranges.iter().enumerate() {
            let p: f64 = row[s..e].iter().map(|c| c.norm_sqr()).sum();
            data[j * frames + m] = p.sqrt();
        }
    }
    Envelopes {
        data,
        bands: bands.ranges.len(),
        frames,
    }
}

/// One-third octave band envelopes of a clip (no silence stripping).
pub fn band_envelopes(clip: &AudioClip) -> Result<Envelopes> {
    let plan = StftPlan::new(STOI_WINDOW, STOI_HOP, STOI_NFFT)?;
    let bands = OctaveBands::new(STOI_NFFT, clip.rate)?;
    let spec = plan.forward(&clip.samples, clip.rate)?;
    Ok(envelopes_from_spec(&spec, &bands))
}

/// Everything fixed by the clean clip: the resampler, the kept-frame
/// list, the silenced clean signal, its envelopes and the per-window
/// statistics the correlation needs. Built once, reused across all
/// optimizer steps on the same clip.
pub struct StoiClean {
    rate_in: u32,
    n_in: usize,
    resampler: Option<LinearResampler>,
    n_10k: usize,
    keep: Vec<usize>,
    sil_len: usize,
    pub env: Envelopes,
    /// number of 30-frame windows (frames - 29)
    pub windows: usize,
    /// per cell (band-major): unit centered clean envelope, 30 values
    cell_u: Vec<f64>,
    /// per cell: ||x||
    cell_nx: Vec<f64>,
    /// per cell: clean side has spread (variance > 0)
    cell_valid: Vec<bool>,
}

/// Intelligibility machinery reusable across clips.
pub struct StoiPipeline {
    plan: StftPlan,
    bands: OctaveBands,
    sil_window: Vec<f64>,
    pub clip_factor: f64,
}

/// Score and loss pieces for one clean/degraded pair.
#[derive(Debug, Clone, Copy)]
pub struct StoiEval {
    pub score: f64,
    /// mean |X - X'| over all band-frame cells (raw envelopes)
    pub env_l1: f64,
}

impl StoiEval {
    pub fn loss(&self, lambda: f64) -> f64 {
        let d = 1.0 - self.score;
        d * d + lambda * self.env_l1
    }
}

impl StoiPipeline {
    pub fn new() -> Result<Self> {
        Ok(StoiPipeline {
            plan: StftPlan::new(STOI_WINDOW, STOI_HOP, STOI_NFFT)?,
            bands: OctaveBands::new(STOI_NFFT, STOI_RATE)?,
            sil_window: periodic_hann(STOI_WINDOW)?,
            clip_factor: 1.0 + 10f64.powf(-15.0 / 20.0),
        })
    }

    pub fn prepare_clean(&self, clean: &AudioClip) -> Result<StoiClean> {
        if clean.is_empty() {
            return Err(Error::EmptyClip);
        }
        let (clean_10k, resampler) = if clean.rate == STOI_RATE {
            (clean.samples.clone(), None)
        } else {
            let rs = LinearResampler::new(clean.len(), clean.rate, STOI_RATE)?;
            (rs.forward(&clean.samples), Some(rs))
        };
        let keep = silent_keep_list(&clean_10k, &self.sil_window, STOI_HOP, STOI_DYN_RANGE_DB)?;
        let clean_sil = overlap_add_kept(&clean_10k, &keep, &self.sil_window, STOI_HOP);
        let sil_len = clean_sil.len();
        let spec = self.plan.forward(&clean_sil, STOI_RATE)?;
        let env = envelopes_from_spec(&spec, &self.bands);
        if env.frames < STOI_ENV_FRAMES {
            return Err(Error::TooFewFrames {
                frames: env.frames,
                needed: STOI_ENV_FRAMES,
            });
        }
        let windows = env.frames - (STOI_ENV_FRAMES - 1);
        let n_cells = env.bands * windows;
        let mut cell_u = vec![0.0; n_cells * STOI_ENV_FRAMES];
        let mut cell_nx = vec![0.0; n_cells];
        let mut cell_valid = vec![false; n_cells];
        for j in 0..env.bands {
            for w in 0..windows {
                let cell = j * windows + w;
                let x = &env.data[j * env.frames + w..j * env.frames + w + STOI_ENV_FRAMES];
                let mean = x.iter().sum::<f64>() / STOI_ENV_FRAMES as f64;
                let mut nsq = 0.0;
                let mut csq = 0.0;
                for &v in x {
                    nsq += v * v;
                    let c = v - mean;
                    csq += c * c;
                }
                cell_nx[cell] = nsq.sqrt();
                if csq > 0.0 && nsq > 0.0 {
                    cell_valid[cell] = true;
                    let inv = 1.0 / csq.sqrt();
                    let u = &mut cell_u[cell * STOI_ENV_FRAMES..(cell + 1) * STOI_ENV_FRAMES];
                    for (slot, &v) in u.iter_mut().zip(x.iter()) {
                        *slot = (v - mean) * inv;
                    }
                }
            }
        }
        Ok(StoiClean {
            rate_in: clean.rate,
            n_in: clean.len(),
            resampler,
            n_10k: clean_10k.len(),
            keep,
            sil_len,
            env,
            windows,
            cell_u,
            cell_nx,
            cell_valid,
        })
    }

    fn degraded_pipeline(
        &self,
        cache: &StoiClean,
        degraded: &AudioClip,
    ) -> Result<(Envelopes, Spectrogram)> {
        if degraded.rate != cache.rate_in {
            return Err(Error::RateMismatch {
                left: cache.rate_in,
                right: degraded.rate,
            });
        }
        if degraded.len() != cache.n_in {
            return Err(Error::LengthMismatch {
                left: cache.n_in,
                right: degraded.len(),
            });
        }
        let deg_10k = match &cache.resampler {
            Some(rs) => rs.forward(&degraded.samples),
            None => degraded.samples.clone(),
        };
        let deg_sil = overlap_add_kept(&deg_10k, &cache.keep, &self.sil_window, STOI_HOP);
        let spec = self.plan.forward(&deg_sil, STOI_RATE)?;
        Ok((envelopes_from_spec(&spec, &self.bands), spec))
    }

    /// Correlation of each valid cell; returns (sum, contributing count).
    fn correlation_sum(&self, cache: &StoiClean, env_y: &Envelopes) -> (f64, usize) {
        let n = STOI_ENV_FRAMES;
        let mut sum = 0.0;
        let mut count = 0usize;
        for j in 0..env_y.bands {
            for w in 0..cache.windows {
                let cell = j * cache.windows + w;
                if !cache.cell_valid[cell] {
                    continue;
                }
                let y = &env_y.data[j * env_y.frames + w..j * env_y.frames + w + n];
                let ny = y.iter().map(|v| v * v).sum::<f64>().sqrt();
                if ny == 0.0 {
                    continue;
                }
                let alpha = cache.cell_nx[cell] / ny;
                let u = &cache.cell_u[cell * n..(cell + 1) * n];
                let x = &cache.env.data[j * cache.env.frames + w..j * cache.env.frames + w + n];
                let mut yp = [0.0f64; STOI_ENV_FRAMES];
                let mut mean = 0.0;
                for i in 0..n {
                    yp[i] = (alpha * y[i]).min(self.clip_factor * x[i]);
                    mean += yp[i];
                }
                mean /= n as f64;
                let mut dot = 0.0;
                let mut nsq = 0.0;
                for i in 0..n {
                    let c = yp[i] - mean;
                    dot += u[i] * c;
                    nsq += c * c;
                }
                if nsq == 0.0 {
                    continue;
                }
                sum += dot / nsq.sqrt();
                count += 1;
            }
        }
        (sum, count)
    }

    pub fn eval(&self, cache: &StoiClean, degraded: &AudioClip) -> Result<StoiEval> {
        let (env_y, _) = self.degraded_pipeline(cache, degraded)?;
        self.eval_from_envelopes(cache, &env_y)
    }

    fn eval_from_envelopes(&self, cache: &StoiClean, env_y: &Envelopes) -> Result<StoiEval> {
        let (sum, count) = self.correlation_sum(cache, env_y);
        if count == 0 {
            return Err(Error::SilentSignal);
        }
        let score = sum / count as f64;
        let cells = (env_y.bands * env_y.frames) as f64;
        let env_l1 = cache
            .env
            .data
            .iter()
            .zip(env_y.data.iter())
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            / cells;
        Ok(StoiEval {
            score,
            env_l1,
        })
    }

    /// Loss and its gradient with respect to the degraded samples (at
    /// the caller's rate). `upstream` scales the whole gradient.
    pub fn loss_and_grad(
        &self,
        cache: &StoiClean,
        degraded: &AudioClip,
        lambda: f64,
        upstream: f64,
    ) -> Result<(StoiEval, Vec<f64>)> {
        let n = STOI_ENV_FRAMES;
        let (env_y, spec) = self.degraded_pipeline(cache, degraded)?;
        let eval = self.eval_from_envelopes(cache, &env_y)?;
        let (_, count) = self.correlation_sum(cache, &env_y);

        // d loss / d score, spread over contributing cells
        let d_score = -2.0 * (1.0 - eval.score) * upstream;
        let per_cell = d_score / count as f64;
        let m_total = (env_y.bands * env_y.frames) as f64;
        let l1_scale = lambda * upstream / m_total;

        let mut d_env = vec![0.0; env_y.data.len()];
        // envelope L1 term on raw envelopes
        for (slot, (a, b)) in d_env
            .iter_mut()
            .zip(cache.env.data.iter().zip(env_y.data.iter()))
        {
            if b > a {
                *slot += l1_scale;
            } else if b < a {
                *slot -= l1_scale;
            }
        }

        // correlation term, cell by cell
        for j in 0..env_y.bands {
            for w in 0..cache.windows {
                let cell = j * cache.windows + w;
                if !cache.cell_valid[cell] {
                    continue;
                }
                let base = j * env_y.frames + w;
                let y = &env_y.data[base..base + n];
                let ny_sq = y.iter().map(|v| v * v).sum::<f64>();
                let ny = ny_sq.sqrt();
                if ny == 0.0 {
                    continue;
                }
                let alpha = cache.cell_nx[cell] / ny;
                let u = &cache.cell_u[cell * n..(cell + 1) * n];
                let x = &cache.env.data[j * cache.env.frames + w..j * cache.env.frames + w + n];
                let mut yp = [0.0f64; STOI_ENV_FRAMES];
                let mut unclipped = [false; STOI_ENV_FRAMES];
                let mut mean = 0.0;
                for i in 0..n {
                    let a = alpha * y[i];
                    let b = self.clip_factor * x[i];
                    unclipped[i] = a <= b;
                    yp[i] = if unclipped[i] { a } else { b };
                    mean += yp[i];
                }
                mean /= n as f64;
                let mut dot = 0.0;
                let mut nsq = 0.0;
                let mut cent = [0.0f64; STOI_ENV_FRAMES];
                for i in 0..n {
                    cent[i] = yp[i] - mean;
                    dot += u[i] * cent[i];
                    nsq += cent[i] * cent[i];
                }
                if nsq == 0.0 {
                    continue;
                }
                let nyp = nsq.sqrt();
                let d = dot / nyp;
                // d d / d yp, through the centering
                let mut g_mean = 0.0;
                let mut g = [0.0f64; STOI_ENV_FRAMES];
                for i in 0..n {
                    g[i] = (u[i] - d * cent[i] / nyp) / nyp;
                    g_mean += g[i];
                }
                g_mean /= n as f64;
                // chain through y' = min(alpha*y, c*x) and alpha(y)
                let mut t_sum = 0.0;
                for i in 0..n {
                    if unclipped[i] {
                        t_sum += (g[i] - g_mean) * y[i];
                    }
                }
                let alpha_over_nysq = alpha / ny_sq;
                for i in 0..n {
                    let h = g[i] - g_mean;
                    let mut dy = -alpha_over_nysq * y[i] * t_sum;
                    if unclipped[i] {
                        dy += alpha * h;
                    }
                    d_env[base + i] += per_cell * dy;
                }
            }
        }

        // envelopes -> spectrogram cotangent
        let mut d_spec = vec![Complex64::new(0.0, 0.0); spec.data.len()];
        for j in 0..env_y.bands {
            let (s, e) = self.bands.ranges[j];
            for m in 0..env_y.frames {
                let env = env_y.data[j * env_y.frames + m];
                let g = d_env[j * env_y.frames + m];
                if g == 0.0 || env <= 0.0 {
                    continue;
                }
                let d_power = g / (2.0 * env);
                let row = spec.frame(m);
                let out = &mut d_spec[m * spec.bins..(m + 1) * spec.bins];
                for b in s..e {
                    out[b].re += 2.0 * d_power * row[b].re;
                    out[b].im += 2.0 * d_power * row[b].im;
                }
            }
        }

        // spectrogram -> silenced signal -> 10 kHz signal -> input rate
        let d_sil = self.plan.adjoint(&d_spec, spec.frames, cache.sil_len);
        let d_10k =
            overlap_add_adjoint(&d_sil, &cache.keep, &self.sil_window, STOI_HOP, cache.n_10k);
        let grad = match &cache.resampler {
            Some(rs) => rs.adjoint(&d_10k),
            None => d_10k,
        };
        Ok((eval, grad))
    }
}

/// Intelligibility score of `degraded` against `clean`; 1.0 means the
/// band envelopes correlate perfectly. Both clips must share length
/// and rate.
pub fn stoi_score(clean: &AudioClip, degraded: &AudioClip) -> Result<f64> {
    check_pair(clean, degraded)?;
    let pipe = StoiPipeline::new()?;
    let cache = pipe.prepare_clean(clean)?;
    Ok(pipe.eval(&cache, degraded)?.score)
}

/// `(1 - score)^2 + lambda * mean |X - X'|` over raw band envelopes.
pub fn stoi_loss(clean: &AudioClip, degraded: &AudioClip, lambda: f64) -> Result<f64> {
    check_pair(clean, degraded)?;
    let pipe = StoiPipeline::new()?;
    let cache = pipe.prepare_clean(clean)?;
    Ok(pipe.eval(&cache, degraded)?.loss(lambda))
}
