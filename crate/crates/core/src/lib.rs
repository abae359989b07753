//! voicecloak makes speech recordings useless as training data for
//! speaker-verification encoders while keeping them sound clean to a
//! human listener.
//!
//! The core idea: add a tiny, amplitude-bounded perturbation to each
//! recording that *minimizes* the training loss of a speaker encoder.
//! A model trained on such "already solved" examples learns almost
//! nothing about the speakers, so verification built on top of it
//! collapses to chance. Two perceptual penalties (a spectral distance
//! and an intelligibility proxy) keep the perturbation inaudible.
//!
//! Modules follow the processing pipeline:
//!
//! * [`audio_io`] — WAV i/o, dataset manifests, trial lists
//! * [`dsp`] — STFT, mel filterbank, log-mel features, resampling
//! * [`perceptual`] — spectral loss, intelligibility score and loss
//! * [`encoder`] — small dilated-conv speaker encoder + margin softmax
//! * [`slem`] — the perturbation optimizer itself
//! * [`metrics`] — verification scoring (EER / minDCF) and audit stats
//! * [`synthdata`] — deterministic synthetic speech corpus
//! * [`cli`] — command implementations used by the `voicecloak` binary

pub mod audio_io;
pub mod cli;
pub mod dsp;
pub mod encoder;
mod error;
pub mod metrics;
pub mod perceptual;
pub mod slem;
pub mod synthdata;

pub use error::{Error, Result};
