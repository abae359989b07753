use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: not a RIFF/WAVE file")]
    WavBadHeader { path: PathBuf },

    #[error("{path}: truncated WAV data")]
    WavTruncated { path: PathBuf },

    #[error("{path}: unsupported WAV encoding (format tag {format_tag}, {bits}-bit); only 16-bit PCM is supported")]
    WavUnsupportedEncoding {
        path: PathBuf,
        format_tag: u16,
        bits: u16,
    },

    #[error("{path}: {channels} channels; only mono is supported")]
    WavUnsupportedChannels { path: PathBuf, channels: u16 },

    #[error("clip is empty")]
    EmptyClip,

    #[error("{path}:{line}: {msg}")]
    ManifestParse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("{path}:{line}: duplicate entry {entry:?}")]
    ManifestDuplicate {
        path: PathBuf,
        line: usize,
        entry: String,
    },

    #[error("{path}:{line}: {msg}")]
    TrialParse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("window length {len} is too short (need at least 2)")]
    WindowTooShort { len: usize },

    #[error("clip has {len} samples, shorter than one analysis window of {window}")]
    ClipTooShort { len: usize, window: usize },

    #[error("invalid mel range {f_min}..{f_max} Hz at sample rate {rate}")]
    BadFrequencyRange { f_min: f64, f_max: f64, rate: u32 },

    #[error("one-third octave band {band} ({lo:.1}..{hi:.1} Hz) covers no FFT bins")]
    EmptyBand { band: usize, lo: f64, hi: f64 },

    #[error("cannot resample from {from} Hz to {to} Hz")]
    BadResampleRate { from: u32, to: u32 },

    #[error("signals have different lengths ({left} vs {right})")]
    LengthMismatch { left: usize, right: usize },

    #[error("signals have different sample rates ({left} vs {right} Hz)")]
    RateMismatch { left: u32, right: u32 },

    #[error("every frame is below the energy threshold; no speech to compare")]
    AllFramesSilent,

    #[error("reference signal is silent")]
    SilentSignal,

    #[error("signals are identical; signal-to-noise ratio is unbounded")]
    ZeroNoise,

    #[error("feature map has {got} bands, encoder expects {expected}")]
    FeatureShape { expected: usize, got: usize },

    #[error("only {frames} analysis frames, need at least {needed}")]
    TooFewFrames { frames: usize, needed: usize },

    #[error("speaker label {label} out of range for {n_classes} classes")]
    LabelOutOfRange { label: usize, n_classes: usize },

    #[error("non-finite value in {context}; training diverged")]
    NonFinite { context: String },

    #[error("{path}: not a voicecloak model file")]
    ModelBadMagic { path: PathBuf },

    #[error("{path}: unsupported model version {version}")]
    ModelBadVersion { path: PathBuf, version: u32 },

    #[error("{path}: model file is truncated or has trailing data")]
    ModelBadLength { path: PathBuf },

    #[error("perturbation bound must be non-negative, got {value}")]
    BadEpsilon { value: f64 },

    #[error("mask keep fraction must be in [0, 1], got {value}")]
    BadFraction { value: f64 },

    #[error("step size must be positive, got {value}")]
    BadStepSize { value: f64 },

    #[error("more than one representative clip for speaker {speaker}")]
    DuplicateSpeaker { speaker: usize },

    #[error("embedding dimensions differ ({left} vs {right})")]
    DimensionMismatch { left: usize, right: usize },

    #[error("trial list is empty")]
    EmptyTrials,

    #[error("trial list needs both target and non-target pairs (got {targets} targets, {nontargets} non-targets)")]
    SingleClassTrials { targets: usize, nontargets: usize },

    #[error("no protected counterpart for {path}")]
    MissingCounterpart { path: PathBuf },

    #[error("{path}:{line}: {msg}")]
    ConfigParse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("{path}:{line}: unknown setting {key:?}")]
    UnknownConfigKey {
        path: PathBuf,
        line: usize,
        key: String,
    },

    #[error("unknown encoder preset {name:?} (expected cfgA, cfgB, cfgC or cfgD)")]
    UnknownPreset { name: String },

    #[error("corpus spec is invalid: {msg}")]
    BadCorpusSpec { msg: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
