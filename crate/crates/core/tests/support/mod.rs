//! Test-side reference implementations, written directly from the
//! published definitions and sharing no code with the library: a naive
//! intelligibility scorer (own resampler, own DFT), brute-force
//! verification metrics, and a central-difference helper. Deliberately
//! slow and obvious.

#![allow(dead_code)] // each test target uses a subset

/// Linear-interpolation resampler, index-mapped like a lookup table.
fn resample_ref(x: &[f64], from: u32, to: u32) -> Vec<f64> {
    let n_out = (x.len() as f64 * to as f64 / from as f64).round() as usize;
    let mut out = Vec::with_capacity(n_out);
    for i in 0..n_out {
        let pos = i as f64 * from as f64 / to as f64;
        let j = (pos.floor() as usize).min(x.len() - 1);
        let frac = pos - j as f64;
        let nxt = x[(j + 1).min(x.len() - 1)];
        out.push(x[j] * (1.0 - frac) + nxt * frac);
    }
    out
}

/// Plain O(n^2) DFT of a real windowed frame zero-padded to `nfft`;
/// returns (re, im) for bins 0..=nfft/2.
fn dft_ref(frame: &[f64], nfft: usize) -> Vec<(f64, f64)> {
    let bins = nfft / 2 + 1;
    let mut out = Vec::with_capacity(bins);
    for b in 0..bins {
        let mut re = 0.0;
        let mut im = 0.0;
        for (t, &v) in frame.iter().enumerate() {
            let phase = -2.0 * std::f64::consts::PI * b as f64 * t as f64 / nfft as f64;
            re += v * phase.cos();
            im += v * phase.sin();
        }
        out.push((re, im));
    }
    out
}

fn hann_periodic_ref(len: usize) -> Vec<f64> {
    (0..len)
        .map(|t| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * t as f64 / len as f64).cos())
        .collect()
}

/// Short-time objective intelligibility, straight from the reference
/// procedure: resample to 10 kHz, drop frames more than 40 dB below
/// the loudest clean frame, 15 one-third-octave band envelopes from a
/// 256/128/512 STFT, clipped correlation over 30-frame windows.
pub fn stoi_reference(clean: &[f64], degraded: &[f64], rate: u32) -> f64 {
    assert_eq!(clean.len(), degraded.len());
    let x = resample_ref(clean, rate, 10_000);
    let y = resample_ref(degraded, rate, 10_000);

    let win = 256;
    let hop = 128;
    let window = hann_periodic_ref(win);
    let n_frames = if x.len() < win { 0 } else { 1 + (x.len() - win) / hop };
    assert!(n_frames > 0, "clip too short for the reference scorer");

    // silent-frame mask from the clean signal
    let frame_energy_db = |sig: &[f64], m: usize| -> f64 {
        let mut e = 0.0;
        for t in 0..win {
            let v = sig[m * hop + t] * window[t];
            e += v * v;
        }
        10.0 * e.log10()
    };
    let max_db = (0..n_frames)
        .map(|m| frame_energy_db(&x, m))
        .fold(f64::NEG_INFINITY, f64::max);
    let keep: Vec<usize> = (0..n_frames)
        .filter(|&m| frame_energy_db(&x, m) > max_db - 40.0)
        .collect();
    assert!(!keep.is_empty());

    // overlap-add reconstruction of only the kept frames
    let rebuild = |sig: &[f64]| -> Vec<f64> {
        let n = (keep.len() - 1) * hop + win;
        let mut out = vec![0.0; n];
        for (i, &m) in keep.iter().enumerate() {
            for t in 0..win {
                out[i * hop + t] += sig[m * hop + t] * window[t] * window[t];
            }
        }
        out
    };
    let xs = rebuild(&x);
    let ys = rebuild(&y);

    // band envelopes from a 512-point spectrum
    let nfft = 512;
    let m_frames = 1 + (xs.len() - win) / hop;
    let bands: Vec<(f64, f64)> = (0..15)
        .map(|k| {
            let cf = 150.0 * 2f64.powf(k as f64 / 3.0);
            (cf * 2f64.powf(-1.0 / 6.0), cf * 2f64.powf(1.0 / 6.0))
        })
        .collect();
    let envelope = |sig: &[f64]| -> Vec<Vec<f64>> {
        let mut env = vec![vec![0.0; m_frames]; 15];
        for m in 0..m_frames {
            let mut frame = vec![0.0; win];
            for t in 0..win {
                frame[t] = sig[m * hop + t] * window[t];
            }
            let spec = dft_ref(&frame, nfft);
            for (j, &(lo, hi)) in bands.iter().enumerate() {
                let mut acc = 0.0;
                for (b, &(re, im)) in spec.iter().enumerate() {
                    let f = b as f64 * 10_000.0 / nfft as f64;
                    if f >= lo && f < hi {
                        acc += re * re + im * im;
                    }
                }
                env[j][m] = acc.sqrt();
            }
        }
        env
    };
    let ex = envelope(&xs);
    let ey = envelope(&ys);

    let clip_gain = 1.0 + 10f64.powf(-15.0 / 20.0);
    let seg = 30;
    let mut total = 0.0;
    let mut count = 0usize;
    for j in 0..15 {
        for m in seg..=m_frames {
            let xv = &ex[j][m - seg..m];
            let yv = &ey[j][m - seg..m];
            let nx: f64 = xv.iter().map(|v| v * v).sum::<f64>().sqrt();
            let ny: f64 = yv.iter().map(|v| v * v).sum::<f64>().sqrt();
            if nx == 0.0 || ny == 0.0 {
                continue;
            }
            let alpha = nx / ny;
            let yp: Vec<f64> = xv
                .iter()
                .zip(yv.iter())
                .map(|(&xc, &yc)| (alpha * yc).min(clip_gain * xc))
                .collect();
            let mx = xv.iter().sum::<f64>() / seg as f64;
            let my = yp.iter().sum::<f64>() / seg as f64;
            let mut num = 0.0;
            let mut dx = 0.0;
            let mut dy = 0.0;
            for i in 0..seg {
                num += (xv[i] - mx) * (yp[i] - my);
                dx += (xv[i] - mx) * (xv[i] - mx);
                dy += (yp[i] - my) * (yp[i] - my);
            }
            if dx == 0.0 || dy == 0.0 {
                continue;
            }
            total += num / (dx * dy).sqrt();
            count += 1;
        }
    }
    assert!(count > 0);
    total / count as f64
}

/// Equal error rate (percent), by exhaustive candidate sweep and
/// linear interpolation at the sign change of FRR - FAR.
pub fn eer_bruteforce(targets: &[f64], nontargets: &[f64]) -> f64 {
    let mut cands: Vec<f64> = targets.iter().chain(nontargets.iter()).copied().collect();
    cands.sort_by(|a, b| a.partial_cmp(b).unwrap());
    cands.dedup();
    cands.insert(0, f64::NEG_INFINITY);
    cands.push(f64::INFINITY);

    let rates = |t: f64| -> (f64, f64) {
        let frr = targets.iter().filter(|&&s| s < t).count() as f64 / targets.len() as f64;
        let far =
            nontargets.iter().filter(|&&s| s >= t).count() as f64 / nontargets.len() as f64;
        (frr, far)
    };

    let mut prev: Option<(f64, f64)> = None;
    for &t in &cands {
        let (frr, far) = rates(t);
        if frr - far >= 0.0 {
            let eer = match prev {
                Some((pf, pa)) if frr - far > 0.0 => {
                    let d0 = pf - pa;
                    let d1 = frr - far;
                    let s = -d0 / (d1 - d0);
                    pf + (frr - pf) * s
                }
                _ => frr,
            };
            return eer * 100.0;
        }
        prev = Some((frr, far));
    }
    unreachable!();
}

/// Minimum normalized detection cost by exhaustive candidate sweep.
pub fn min_dcf_bruteforce(
    targets: &[f64],
    nontargets: &[f64],
    p_target: f64,
    c_miss: f64,
    c_fa: f64,
) -> f64 {
    let mut cands: Vec<f64> = targets.iter().chain(nontargets.iter()).copied().collect();
    cands.push(f64::NEG_INFINITY);
    cands.push(f64::INFINITY);
    let norm = (c_miss * p_target).min(c_fa * (1.0 - p_target));
    let mut best = f64::INFINITY;
    for &t in &cands {
        let p_miss = targets.iter().filter(|&&s| s < t).count() as f64 / targets.len() as f64;
        let p_fa =
            nontargets.iter().filter(|&&s| s >= t).count() as f64 / nontargets.len() as f64;
        let dcf = c_miss * p_miss * p_target + c_fa * p_fa * (1.0 - p_target);
        if dcf / norm < best {
            best = dcf / norm;
        }
    }
    best
}

/// Central finite difference of `f` along coordinate `i`.
pub fn central_diff(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], i: usize, h: f64) -> f64 {
    let mut hi = x.to_vec();
    hi[i] += h;
    let mut lo = x.to_vec();
    lo[i] -= h;
    (f(&hi) - f(&lo)) / (2.0 * h)
}
