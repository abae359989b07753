//! Verification scoring and corpus audits: cosine trial scores, EER and
//! minDCF over a threshold sweep, and per-utterance distortion reports
//! (SNR / MSE / intelligibility) for a protected corpus.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::io::Write as _;
use std::path::Path;

use rayon::prelude::*;

use crate::audio_io::{crop_fixed_patch, read_wav, AudioClip, DatasetManifest, TrialList};
use crate::dsp::{LogMelPipeline, PIPELINE_RATE};
use crate::encoder::{forward, Embedding, EncoderParams};
use crate::perceptual::{mse_e6, snr_db, stoi_score};
use crate::{Error, Result};

/// Detection-cost parameters: target prior and the two error costs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DcfParams {
    pub p_target: f64,
    pub c_miss: f64,
    pub c_fa: f64,
}

impl Default for DcfParams {
    fn default() -> Self {
        DcfParams {
            p_target: 0.01,
            c_miss: 1.0,
            c_fa: 1.0,
        }
    }
}

/// Trial scores split by ground truth.
#[derive(Debug, Clone, Default)]
pub struct ScoreSet {
    pub targets: Vec<f64>,
    pub nontargets: Vec<f64>,
}

impl ScoreSet {
    fn check_two_classes(&self) -> Result<()> {
        if self.targets.is_empty() && self.nontargets.is_empty() {
            return Err(Error::EmptyTrials);
        }
        if self.targets.is_empty() || self.nontargets.is_empty() {
            return Err(Error::SingleClassTrials {
                targets: self.targets.len(),
                nontargets: self.nontargets.len(),
            });
        }
        Ok(())
    }
}

pub fn cosine_score(a: &Embedding, b: &Embedding) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            left: a.dim(),
            right: b.dim(),
        });
    }
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (x, y) in a.0.iter().zip(b.0.iter()) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    let denom = (na * nb).sqrt();
    if !(denom > 0.0) || !denom.is_finite() {
        return Err(Error::NonFinite {
            context: "cosine score".into(),
        });
    }
    Ok(dot / denom)
}

/// Embed every file referenced by the trial list (each unique path once,
/// in parallel) and score all pairs.
pub fn score_trials(
    params: &EncoderParams,
    trials: &TrialList,
    patch_length: usize,
) -> Result<ScoreSet> {
    if trials.trials.is_empty() {
        return Err(Error::EmptyTrials);
    }
    let mut unique: BTreeSet<&str> = BTreeSet::new();
    for t in &trials.trials {
        unique.insert(&t.a);
        unique.insert(&t.b);
    }
    let paths: Vec<&str> = unique.into_iter().collect();
    let feature_cfg = params.config.feature_config();
    let pipeline = LogMelPipeline::new(&feature_cfg, PIPELINE_RATE)?;

    let embeddings: Vec<(&str, Embedding)> = paths
        .par_iter()
        .map(|&rel| {
            let clip = read_wav(trials.resolve(rel))?;
            if clip.rate != PIPELINE_RATE {
                return Err(Error::RateMismatch {
                    left: PIPELINE_RATE,
                    right: clip.rate,
                });
            }
            let patch = crop_fixed_patch(&clip, patch_length)?;
            let features = pipeline.forward(&patch.samples, patch.rate)?;
            Ok((rel, forward(params, &features)?))
        })
        .collect::<Result<_>>()?;
    let by_path: HashMap<&str, &Embedding> =
        embeddings.iter().map(|(p, e)| (*p, e)).collect();

    let mut scores = ScoreSet::default();
    for t in &trials.trials {
        let s = cosine_score(by_path[t.a.as_str()], by_path[t.b.as_str()])?;
        if t.target {
            scores.targets.push(s);
        } else {
            scores.nontargets.push(s);
        }
    }
    scores.check_two_classes()?;
    Ok(scores)
}

/// Thresholds worth sweeping: every observed score plus sentinels that
/// accept or reject everything.
fn candidate_thresholds(scores: &ScoreSet) -> Vec<f64> {
    let mut t: Vec<f64> = scores
        .targets
        .iter()
        .chain(scores.nontargets.iter())
        .copied()
        .collect();
    t.sort_by(f64::total_cmp);
    t.dedup();
    t.insert(0, f64::NEG_INFINITY);
    t.push(f64::INFINITY);
    t
}

/// Fraction of targets scored below `t` (rejected) and of non-targets
/// scored at or above `t` (accepted).
fn error_rates_at(scores: &ScoreSet, t: f64) -> (f64, f64) {
    let frr = scores.targets.iter().filter(|&&s| s < t).count() as f64
        / scores.targets.len() as f64;
    let far = scores.nontargets.iter().filter(|&&s| s >= t).count() as f64
        / scores.nontargets.len() as f64;
    (frr, far)
}

/// Equal error rate in percent. FRR - FAR is non-decreasing along the
/// sweep; the crossing is linearly interpolated between the two
/// candidates where its sign flips.
pub fn eer(scores: &ScoreSet) -> Result<f64> {
    scores.check_two_classes()?;
    let thresholds = candidate_thresholds(scores);
    let mut prev: Option<(f64, f64)> = None;
    for &t in &thresholds {
        let (frr, far) = error_rates_at(scores, t);
        let diff = frr - far;
        if diff >= 0.0 {
            let rate = match prev {
                Some((p_frr, p_far)) => {
                    let p_diff = p_frr - p_far;
                    if diff == 0.0 {
                        frr
                    } else {
                        // p_diff < 0 <= diff, so the span is positive
                        let s = -p_diff / (diff - p_diff);
                        p_frr + (frr - p_frr) * s
                    }
                }
                None => frr,
            };
            return Ok(rate * 100.0);
        }
        prev = Some((frr, far));
    }
    unreachable!("the +infinity sentinel rejects everything, so FRR - FAR ends at +1");
}

/// Minimum normalized detection cost over the same threshold sweep.
pub fn min_dcf(scores: &ScoreSet, params: &DcfParams) -> Result<f64> {
    scores.check_two_classes()?;
    let norm = (params.c_miss * params.p_target).min(params.c_fa * (1.0 - params.p_target));
    let mut best = f64::INFINITY;
    for &t in &candidate_thresholds(scores) {
        let (p_miss, p_fa) = error_rates_at(scores, t);
        let dcf = params.c_miss * p_miss * params.p_target
            + params.c_fa * p_fa * (1.0 - params.p_target);
        best = best.min(dcf / norm);
    }
    Ok(best)
}

/// Distortion of one protected utterance relative to its clean source.
#[derive(Debug, Clone)]
pub struct AuditRow {
    pub rel_path: String,
    /// None when protected == clean (SNR undefined).
    pub snr_db: Option<f64>,
    pub mse_e6: f64,
    pub stoi: f64,
}

#[derive(Debug, Clone)]
pub struct AuditReport {
    pub rows: Vec<AuditRow>,
    /// Mean over the rows where SNR is defined; None if there are none.
    pub mean_snr_db: Option<f64>,
    pub mean_mse_e6: f64,
    pub mean_stoi: f64,
}

/// Compare every clean manifest entry with its counterpart under
/// `protected_dir` (same relative path). SNR is measured over the
/// perturbation patch, MSE and intelligibility over the full clips.
pub fn audit_report(
    clean: &DatasetManifest,
    protected_dir: impl AsRef<Path>,
    patch_length: usize,
) -> Result<AuditReport> {
    let protected_dir = protected_dir.as_ref();
    let rows: Vec<AuditRow> = clean
        .entries
        .par_iter()
        .map(|entry| {
            let clean_clip = read_wav(clean.resolve(&entry.rel_path))?;
            let prot_path = protected_dir.join(&entry.rel_path);
            if !prot_path.is_file() {
                return Err(Error::MissingCounterpart { path: prot_path });
            }
            let prot_clip = read_wav(&prot_path)?;
            if prot_clip.rate != clean_clip.rate {
                return Err(Error::RateMismatch {
                    left: clean_clip.rate,
                    right: prot_clip.rate,
                });
            }
            if prot_clip.len() != clean_clip.len() {
                return Err(Error::LengthMismatch {
                    left: clean_clip.len(),
                    right: prot_clip.len(),
                });
            }
            let span = clean_clip.len().min(patch_length);
            let clean_patch = AudioClip::new(clean_clip.samples[..span].to_vec(), clean_clip.rate);
            let prot_patch = AudioClip::new(prot_clip.samples[..span].to_vec(), prot_clip.rate);
            let snr = match snr_db(&clean_patch, &prot_patch) {
                Ok(v) => Some(v),
                Err(Error::ZeroNoise) => None,
                Err(e) => return Err(e),
            };
            Ok(AuditRow {
                rel_path: entry.rel_path.clone(),
                snr_db: snr,
                mse_e6: mse_e6(&clean_clip, &prot_clip)?,
                stoi: stoi_score(&clean_clip, &prot_clip)?,
            })
        })
        .collect::<Result<_>>()?;

    let defined: Vec<f64> = rows.iter().filter_map(|r| r.snr_db).collect();
    let mean_snr_db = if defined.is_empty() {
        None
    } else {
        Some(defined.iter().sum::<f64>() / defined.len() as f64)
    };
    let n = rows.len() as f64;
    let mean_mse_e6 = rows.iter().map(|r| r.mse_e6).sum::<f64>() / n;
    let mean_stoi = rows.iter().map(|r| r.stoi).sum::<f64>() / n;
    Ok(AuditReport {
        rows,
        mean_snr_db,
        mean_mse_e6,
        mean_stoi,
    })
}

/// Six significant digits, plain decimal notation.
pub fn fmt_sig6(v: f64) -> String {
    if !v.is_finite() {
        return format!("{v}");
    }
    if v == 0.0 {
        return "0".to_string();
    }
    let magnitude = v.abs().log10().floor() as i32;
    let decimals = (5 - magnitude).clamp(0, 17) as usize;
    format!("{v:.decimals$}")
}

fn fmt_snr(snr: Option<f64>) -> String {
    match snr {
        Some(v) => fmt_sig6(v),
        None => "zero_noise".to_string(),
    }
}

/// Write the audit as CSV: one row per utterance plus a trailing MEAN row.
pub fn write_audit_csv(report: &AuditReport, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    writeln!(f, "path,snr_db,mse_e6,stoi").map_err(|e| Error::io(path, e))?;
    for r in &report.rows {
        writeln!(
            f,
            "{},{},{},{}",
            r.rel_path,
            fmt_snr(r.snr_db),
            fmt_sig6(r.mse_e6),
            fmt_sig6(r.stoi)
        )
        .map_err(|e| Error::io(path, e))?;
    }
    writeln!(
        f,
        "MEAN,{},{},{}",
        fmt_snr(report.mean_snr_db),
        fmt_sig6(report.mean_mse_e6),
        fmt_sig6(report.mean_stoi)
    )
    .map_err(|e| Error::io(path, e))?;
    Ok(())
}
