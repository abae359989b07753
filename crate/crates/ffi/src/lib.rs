//! C bindings for the protection pipeline: opaque clip and model
//! handles, status codes, and thin wrappers over the core operations.
//! Every function is safe to call with null pointers (it reports
//! `VC_STATUS_NULL_ARGUMENT`), and the last error message is kept in
//! thread-local storage for `vc_last_error`.
//!
//! The generated header lands in `include/voicecloak.h` at build time.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::path::PathBuf;
use std::ptr;

use voicecloak::audio_io::{read_wav, write_wav, AudioClip};
use voicecloak::encoder::EncoderParams;
use voicecloak::metrics::{eer, min_dcf, DcfParams, ScoreSet};
use voicecloak::perceptual::{mse_e6, snr_db, stoi_score};
use voicecloak::slem::{apply, generate_sample_wise, Mode, PHLWeights, SlemConfig};
use voicecloak::Error;

/// Result of every fallible call. Anything but `VC_STATUS_OK` leaves a
/// human-readable message in `vc_last_error`.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VcStatus {
    VcStatusOk = 0,
    /// File system failure (path in the error message).
    VcStatusIo = 1,
    /// A file exists but is not in the expected format.
    VcStatusFormat = 2,
    /// Arguments violate a documented invariant.
    VcStatusInvalidArgument = 3,
    /// The computation produced a non-finite value.
    VcStatusNumeric = 4,
    /// A required pointer was null.
    VcStatusNullArgument = 5,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(msg: &str) {
    let sanitized = msg.replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).unwrap();
    });
}

fn status_of(err: &Error) -> VcStatus {
    match err {
        Error::Io { .. } => VcStatus::VcStatusIo,
        Error::WavBadHeader { .. }
        | Error::WavTruncated { .. }
        | Error::WavUnsupportedEncoding { .. }
        | Error::WavUnsupportedChannels { .. }
        | Error::ManifestParse { .. }
        | Error::ManifestDuplicate { .. }
        | Error::TrialParse { .. }
        | Error::ConfigParse { .. }
        | Error::UnknownConfigKey { .. }
        | Error::ModelBadMagic { .. }
        | Error::ModelBadVersion { .. }
        | Error::ModelBadLength { .. } => VcStatus::VcStatusFormat,
        Error::NonFinite { .. } => VcStatus::VcStatusNumeric,
        _ => VcStatus::VcStatusInvalidArgument,
    }
}

fn fail(err: Error) -> VcStatus {
    let status = status_of(&err);
    set_error(&err.to_string());
    status
}

fn null_arg(what: &str) -> VcStatus {
    set_error(&format!("{what} must not be null"));
    VcStatus::VcStatusNullArgument
}

unsafe fn path_from(ptr_: *const c_char, what: &str) -> Result<PathBuf, VcStatus> {
    if ptr_.is_null() {
        return Err(null_arg(what));
    }
    match CStr::from_ptr(ptr_).to_str() {
        Ok(s) => Ok(PathBuf::from(s)),
        Err(_) => {
            set_error(&format!("{what} is not valid UTF-8"));
            Err(VcStatus::VcStatusInvalidArgument)
        }
    }
}

/// An audio clip: f64 samples in [-1, 1] plus a sample rate.
pub struct VcClip {
    inner: AudioClip,
}

/// A trained (or freshly initialized) speaker-encoder model.
pub struct VcModel {
    inner: EncoderParams,
}

/// Message describing the most recent failure on this thread. The
/// pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn vc_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Read a 16-bit PCM WAV file into a new clip handle.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be a valid
/// pointer to write the handle to.
#[no_mangle]
pub unsafe extern "C" fn vc_clip_read(path: *const c_char, out: *mut *mut VcClip) -> VcStatus {
    if out.is_null() {
        return null_arg("out");
    }
    let path = match path_from(path, "path") {
        Ok(p) => p,
        Err(s) => return s,
    };
    match read_wav(&path) {
        Ok(clip) => {
            *out = Box::into_raw(Box::new(VcClip { inner: clip }));
            VcStatus::VcStatusOk
        }
        Err(e) => fail(e),
    }
}

/// Build a clip handle from a sample buffer (copied).
///
/// # Safety
/// `samples` must point to `len` readable doubles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn vc_clip_from_samples(
    samples: *const f64,
    len: usize,
    rate: u32,
    out: *mut *mut VcClip,
) -> VcStatus {
    if out.is_null() {
        return null_arg("out");
    }
    if samples.is_null() && len > 0 {
        return null_arg("samples");
    }
    let data = if len == 0 {
        Vec::new()
    } else {
        std::slice::from_raw_parts(samples, len).to_vec()
    };
    *out = Box::into_raw(Box::new(VcClip {
        inner: AudioClip::new(data, rate),
    }));
    VcStatus::VcStatusOk
}

/// Write a clip as 16-bit PCM WAV.
///
/// # Safety
/// `clip` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn vc_clip_write(clip: *const VcClip, path: *const c_char) -> VcStatus {
    let Some(clip) = clip.as_ref() else {
        return null_arg("clip");
    };
    let path = match path_from(path, "path") {
        Ok(p) => p,
        Err(s) => return s,
    };
    match write_wav(&path, &clip.inner) {
        Ok(()) => VcStatus::VcStatusOk,
        Err(e) => fail(e),
    }
}

/// Number of samples in the clip; 0 for a null handle.
///
/// # Safety
/// `clip` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn vc_clip_len(clip: *const VcClip) -> usize {
    clip.as_ref().map_or(0, |c| c.inner.len())
}

/// Sample rate in Hz; 0 for a null handle.
///
/// # Safety
/// `clip` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn vc_clip_rate(clip: *const VcClip) -> u32 {
    clip.as_ref().map_or(0, |c| c.inner.rate)
}

/// Copy the clip's samples into `out` (must hold `vc_clip_len` doubles).
///
/// # Safety
/// `clip` must be a live handle; `out` must point to `cap` writable
/// doubles.
#[no_mangle]
pub unsafe extern "C" fn vc_clip_samples(
    clip: *const VcClip,
    out: *mut f64,
    cap: usize,
) -> VcStatus {
    let Some(clip) = clip.as_ref() else {
        return null_arg("clip");
    };
    if out.is_null() {
        return null_arg("out");
    }
    if cap < clip.inner.len() {
        set_error(&format!(
            "buffer holds {cap} samples, clip has {}",
            clip.inner.len()
        ));
        return VcStatus::VcStatusInvalidArgument;
    }
    ptr::copy_nonoverlapping(clip.inner.samples.as_ptr(), out, clip.inner.len());
    VcStatus::VcStatusOk
}

/// Release a clip handle. Null is a no-op.
///
/// # Safety
/// `clip` must be a handle returned by this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn vc_clip_free(clip: *mut VcClip) {
    if !clip.is_null() {
        drop(Box::from_raw(clip));
    }
}

/// Load a model file produced by the trainer.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn vc_model_load(path: *const c_char, out: *mut *mut VcModel) -> VcStatus {
    if out.is_null() {
        return null_arg("out");
    }
    let path = match path_from(path, "path") {
        Ok(p) => p,
        Err(s) => return s,
    };
    match EncoderParams::load(&path) {
        Ok(params) => {
            *out = Box::into_raw(Box::new(VcModel { inner: params }));
            VcStatus::VcStatusOk
        }
        Err(e) => fail(e),
    }
}

/// Save a model handle back to a file.
///
/// # Safety
/// `model` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn vc_model_save(model: *const VcModel, path: *const c_char) -> VcStatus {
    let Some(model) = model.as_ref() else {
        return null_arg("model");
    };
    let path = match path_from(path, "path") {
        Ok(p) => p,
        Err(s) => return s,
    };
    match model.inner.save(&path) {
        Ok(()) => VcStatus::VcStatusOk,
        Err(e) => fail(e),
    }
}

/// Number of speaker classes the model was trained with; 0 for null.
///
/// # Safety
/// `model` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn vc_model_speakers(model: *const VcModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.n_speakers)
}

/// Release a model handle. Null is a no-op.
///
/// # Safety
/// `model` must be a handle returned by this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn vc_model_free(model: *mut VcModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Knobs of the perturbation optimizer; get defaults from
/// `vc_protect_options_default`.
#[repr(C)]
#[derive(Clone, Copy)]
pub struct VcProtectOptions {
    /// l-infinity bound on the perturbation.
    pub epsilon: f64,
    /// Optimizer steps.
    pub steps: usize,
    /// Step size; <= 0 picks epsilon / 10.
    pub step_size: f64,
    /// Fraction of samples (largest amplitudes) allowed to change.
    pub mask_fraction: f64,
    /// Length of the optimized patch in samples.
    pub patch_length: usize,
    /// Weight of the margin (training) loss.
    pub alpha: f64,
    /// Weight of the spectral penalty.
    pub beta: f64,
    /// Weight of the intelligibility penalty.
    pub gamma: f64,
    /// Envelope-L1 weight inside the intelligibility penalty.
    pub lambda: f64,
    /// Nonzero drops the perceptual penalties entirely.
    pub plain: i32,
}

/// Optimizer telemetry for one protected clip.
#[repr(C)]
#[derive(Clone, Copy)]
pub struct VcProtectStats {
    /// Objective before optimization (delta = 0).
    pub initial_loss: f64,
    /// Objective at the returned perturbation.
    pub final_loss: f64,
    /// Largest absolute perturbation sample.
    pub delta_linf: f64,
}

/// Fill `out` with the library defaults.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn vc_protect_options_default(out: *mut VcProtectOptions) {
    if out.is_null() {
        return;
    }
    let d = SlemConfig::default();
    *out = VcProtectOptions {
        epsilon: d.epsilon,
        steps: d.steps,
        step_size: d.step_size,
        mask_fraction: d.mask_keep_fraction,
        patch_length: d.patch_length,
        alpha: d.weights.alpha,
        beta: d.weights.beta,
        gamma: d.weights.gamma,
        lambda: d.weights.lambda,
        plain: 0,
    };
}

/// Optimize a perturbation for `clean` against `model` (treating the
/// clip as speaker `label`) and return the protected clip.
///
/// # Safety
/// `model` and `clean` must be live handles; `options` may be null for
/// defaults; `out` must be valid; `stats` may be null.
#[no_mangle]
pub unsafe extern "C" fn vc_protect(
    model: *const VcModel,
    clean: *const VcClip,
    label: usize,
    options: *const VcProtectOptions,
    out: *mut *mut VcClip,
    stats: *mut VcProtectStats,
) -> VcStatus {
    let Some(model) = model.as_ref() else {
        return null_arg("model");
    };
    let Some(clean) = clean.as_ref() else {
        return null_arg("clean");
    };
    if out.is_null() {
        return null_arg("out");
    }
    let config = match options.as_ref() {
        None => SlemConfig::default(),
        Some(o) => SlemConfig {
            epsilon: o.epsilon,
            steps: o.steps,
            step_size: if o.step_size > 0.0 {
                o.step_size
            } else {
                o.epsilon / 10.0
            },
            mask_keep_fraction: o.mask_fraction,
            patch_length: o.patch_length,
            weights: PHLWeights {
                alpha: o.alpha,
                beta: o.beta,
                gamma: o.gamma,
                lambda: o.lambda,
            },
            mode: Mode::SampleWise,
            plain_slem: o.plain != 0,
        },
    };
    let result = generate_sample_wise(&model.inner, &clean.inner, label, &config)
        .and_then(|p| apply(&clean.inner, &p).map(|c| (p, c)));
    match result {
        Ok((pert, protected)) => {
            if let Some(s) = stats.as_mut() {
                *s = VcProtectStats {
                    initial_loss: pert.initial_loss,
                    final_loss: pert.final_loss,
                    delta_linf: pert.linf(),
                };
            }
            *out = Box::into_raw(Box::new(VcClip { inner: protected }));
            VcStatus::VcStatusOk
        }
        Err(e) => fail(e),
    }
}

unsafe fn pair<'a>(
    clean: *const VcClip,
    degraded: *const VcClip,
) -> Result<(&'a VcClip, &'a VcClip), VcStatus> {
    let Some(c) = clean.as_ref() else {
        return Err(null_arg("clean"));
    };
    let Some(d) = degraded.as_ref() else {
        return Err(null_arg("degraded"));
    };
    Ok((c, d))
}

macro_rules! pair_metric {
    ($name:ident, $func:ident, $doc:literal) => {
        #[doc = $doc]
        ///
        /// # Safety
        /// `clean` and `degraded` must be live handles; `out` must be a
        /// valid pointer.
        #[no_mangle]
        pub unsafe extern "C" fn $name(
            clean: *const VcClip,
            degraded: *const VcClip,
            out: *mut f64,
        ) -> VcStatus {
            if out.is_null() {
                return null_arg("out");
            }
            let (c, d) = match pair(clean, degraded) {
                Ok(p) => p,
                Err(s) => return s,
            };
            match $func(&c.inner, &d.inner) {
                Ok(v) => {
                    *out = v;
                    VcStatus::VcStatusOk
                }
                Err(e) => fail(e),
            }
        }
    };
}

pair_metric!(
    vc_stoi,
    stoi_score,
    "Intelligibility score of `degraded` against `clean` (about 1 = fully intelligible)."
);
pair_metric!(
    vc_snr_db,
    snr_db,
    "Signal-to-noise ratio in dB, treating `degraded - clean` as the noise."
);
pair_metric!(
    vc_mse_e6,
    mse_e6,
    "Mean squared error between the clips, scaled by 1e6."
);

unsafe fn score_set(
    targets: *const f64,
    n_targets: usize,
    nontargets: *const f64,
    n_nontargets: usize,
) -> Result<ScoreSet, VcStatus> {
    if targets.is_null() && n_targets > 0 {
        return Err(null_arg("targets"));
    }
    if nontargets.is_null() && n_nontargets > 0 {
        return Err(null_arg("nontargets"));
    }
    let t = if n_targets == 0 {
        Vec::new()
    } else {
        std::slice::from_raw_parts(targets, n_targets).to_vec()
    };
    let n = if n_nontargets == 0 {
        Vec::new()
    } else {
        std::slice::from_raw_parts(nontargets, n_nontargets).to_vec()
    };
    Ok(ScoreSet {
        targets: t,
        nontargets: n,
    })
}

/// Equal error rate (percent) of a scored trial set.
///
/// # Safety
/// The score arrays must hold the stated number of doubles; `out`
/// must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn vc_eer(
    targets: *const f64,
    n_targets: usize,
    nontargets: *const f64,
    n_nontargets: usize,
    out: *mut f64,
) -> VcStatus {
    if out.is_null() {
        return null_arg("out");
    }
    let scores = match score_set(targets, n_targets, nontargets, n_nontargets) {
        Ok(s) => s,
        Err(st) => return st,
    };
    match eer(&scores) {
        Ok(v) => {
            *out = v;
            VcStatus::VcStatusOk
        }
        Err(e) => fail(e),
    }
}

/// Minimum normalized detection cost of a scored trial set.
///
/// # Safety
/// The score arrays must hold the stated number of doubles; `out`
/// must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn vc_min_dcf(
    targets: *const f64,
    n_targets: usize,
    nontargets: *const f64,
    n_nontargets: usize,
    p_target: f64,
    c_miss: f64,
    c_fa: f64,
    out: *mut f64,
) -> VcStatus {
    if out.is_null() {
        return null_arg("out");
    }
    let scores = match score_set(targets, n_targets, nontargets, n_nontargets) {
        Ok(s) => s,
        Err(st) => return st,
    };
    let params = DcfParams {
        p_target,
        c_miss,
        c_fa,
    };
    match min_dcf(&scores, &params) {
        Ok(v) => {
            *out = v;
            VcStatus::VcStatusOk
        }
        Err(e) => fail(e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::ffi::CString;
    use voicecloak::encoder::{init_params, EncoderConfig};

    fn c_path(p: &std::path::Path) -> CString {
        CString::new(p.to_str().unwrap()).unwrap()
    }

    fn tone(n: usize) -> Vec<f64> {
        (0..n)
            .map(|t| 0.4 * (2.0 * std::f64::consts::PI * 220.0 * t as f64 / 16_000.0).sin())
            .collect()
    }

    #[test]
    fn clip_round_trip_through_the_c_surface() {
        let dir = tempfile::tempdir().unwrap();
        let wav = dir.path().join("t.wav");
        let samples = tone(4_000);
        unsafe {
            let mut clip: *mut VcClip = ptr::null_mut();
            assert_eq!(
                vc_clip_from_samples(samples.as_ptr(), samples.len(), 16_000, &mut clip),
                VcStatus::VcStatusOk
            );
            assert_eq!(vc_clip_len(clip), 4_000);
            assert_eq!(vc_clip_rate(clip), 16_000);
            assert_eq!(vc_clip_write(clip, c_path(&wav).as_ptr()), VcStatus::VcStatusOk);

            let mut back: *mut VcClip = ptr::null_mut();
            assert_eq!(
                vc_clip_read(c_path(&wav).as_ptr(), &mut back),
                VcStatus::VcStatusOk
            );
            let mut buf = vec![0.0; vc_clip_len(back)];
            assert_eq!(
                vc_clip_samples(back, buf.as_mut_ptr(), buf.len()),
                VcStatus::VcStatusOk
            );
            // 16-bit quantization error only
            for (a, b) in samples.iter().zip(buf.iter()) {
                assert!((a - b).abs() < 1.0 / 32_000.0);
            }
            vc_clip_free(clip);
            vc_clip_free(back);
        }
    }

    #[test]
    fn protect_respects_the_bound_and_reports_stats() {
        let dir = tempfile::tempdir().unwrap();
        let model_path = dir.path().join("m.vcm");
        let cfg = EncoderConfig {
            channels: 8,
            embedding_dim: 8,
            ..EncoderConfig::default()
        };
        init_params(&cfg, 3).save(&model_path).unwrap();

        let samples = tone(8_000);
        unsafe {
            let mut model: *mut VcModel = ptr::null_mut();
            assert_eq!(
                vc_model_load(c_path(&model_path).as_ptr(), &mut model),
                VcStatus::VcStatusOk
            );
            assert_eq!(vc_model_speakers(model), 3);

            let mut clip: *mut VcClip = ptr::null_mut();
            vc_clip_from_samples(samples.as_ptr(), samples.len(), 16_000, &mut clip);

            let mut opts = VcProtectOptions {
                epsilon: 0.0,
                steps: 0,
                step_size: 0.0,
                mask_fraction: 0.0,
                patch_length: 0,
                alpha: 0.0,
                beta: 0.0,
                gamma: 0.0,
                lambda: 0.0,
                plain: 0,
            };
            vc_protect_options_default(&mut opts);
            assert_eq!(opts.epsilon, 0.005);
            opts.steps = 3;
            opts.patch_length = 8_000;

            let mut protected: *mut VcClip = ptr::null_mut();
            let mut stats = VcProtectStats {
                initial_loss: 0.0,
                final_loss: 0.0,
                delta_linf: 0.0,
            };
            assert_eq!(
                vc_protect(model, clip, 1, &opts, &mut protected, &mut stats),
                VcStatus::VcStatusOk
            );
            assert!(stats.delta_linf > 0.0 && stats.delta_linf <= opts.epsilon);
            assert!(stats.initial_loss.is_finite() && stats.final_loss.is_finite());
            assert_eq!(vc_clip_len(protected), 8_000);

            // out-of-range label fails with a message
            let mut bogus: *mut VcClip = ptr::null_mut();
            let st = vc_protect(model, clip, 99, &opts, &mut bogus, ptr::null_mut());
            assert_eq!(st, VcStatus::VcStatusInvalidArgument);
            let msg = CStr::from_ptr(vc_last_error()).to_str().unwrap();
            assert!(!msg.is_empty());

            vc_clip_free(protected);
            vc_clip_free(clip);
            vc_model_free(model);
        }
    }

    #[test]
    fn metrics_and_null_handling() {
        let targets = [0.9, 0.8, 0.4];
        let nontargets = [0.5, 0.3, 0.1];
        unsafe {
            let mut e = 0.0;
            assert_eq!(
                vc_eer(targets.as_ptr(), 3, nontargets.as_ptr(), 3, &mut e),
                VcStatus::VcStatusOk
            );
            assert!((e - 100.0 / 3.0).abs() < 1e-9);

            let mut d = 0.0;
            assert_eq!(
                vc_min_dcf(
                    targets.as_ptr(),
                    2,
                    nontargets.as_ptr(),
                    2,
                    0.01,
                    1.0,
                    1.0,
                    &mut d
                ),
                VcStatus::VcStatusOk
            );

            assert_eq!(
                vc_eer(ptr::null(), 3, nontargets.as_ptr(), 3, &mut e),
                VcStatus::VcStatusNullArgument
            );
            assert_eq!(
                vc_clip_write(ptr::null(), ptr::null()),
                VcStatus::VcStatusNullArgument
            );

            // mismatched pair errors propagate
            let a = tone(4_000);
            let mut ca: *mut VcClip = ptr::null_mut();
            vc_clip_from_samples(a.as_ptr(), a.len(), 16_000, &mut ca);
            let mut cb: *mut VcClip = ptr::null_mut();
            vc_clip_from_samples(a.as_ptr(), 2_000, 16_000, &mut cb);
            let mut v = 0.0;
            assert_eq!(
                vc_snr_db(ca, cb, &mut v),
                VcStatus::VcStatusInvalidArgument
            );
            vc_clip_free(ca);
            vc_clip_free(cb);
        }
    }
}
