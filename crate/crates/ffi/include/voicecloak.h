#ifndef VOICECLOAK_H
#define VOICECLOAK_H

/* Generated by cbindgen from voicecloak-ffi; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result of every fallible call. Anything but `VC_STATUS_OK` leaves a
// human-readable message in `vc_last_error`.
typedef enum vc_status_t {
  VC_STATUS_OK = 0,
  // File system failure (path in the error message).
  VC_STATUS_IO = 1,
  // A file exists but is not in the expected format.
  VC_STATUS_FORMAT = 2,
  // Arguments violate a documented invariant.
  VC_STATUS_INVALID_ARGUMENT = 3,
  // The computation produced a non-finite value.
  VC_STATUS_NUMERIC = 4,
  // A required pointer was null.
  VC_STATUS_NULL_ARGUMENT = 5,
} vc_status_t;

// An audio clip: f64 samples in [-1, 1] plus a sample rate.
typedef struct vc_clip_t vc_clip_t;

// A trained (or freshly initialized) speaker-encoder model.
typedef struct vc_model_t vc_model_t;

// Knobs of the perturbation optimizer; get defaults from
// `vc_protect_options_default`.
typedef struct vc_protect_options_t {
  // l-infinity bound on the perturbation.
  double epsilon;
  // Optimizer steps.
  size_t steps;
  // Step size; <= 0 picks epsilon / 10.
  double step_size;
  // Fraction of samples (largest amplitudes) allowed to change.
  double mask_fraction;
  // Length of the optimized patch in samples.
  size_t patch_length;
  // Weight of the margin (training) loss.
  double alpha;
  // Weight of the spectral penalty.
  double beta;
  // Weight of the intelligibility penalty.
  double gamma;
  // Envelope-L1 weight inside the intelligibility penalty.
  double lambda;
  // Nonzero drops the perceptual penalties entirely.
  int32_t plain;
} vc_protect_options_t;

// Optimizer telemetry for one protected clip.
typedef struct vc_protect_stats_t {
  // Objective before optimization (delta = 0).
  double initial_loss;
  // Objective at the returned perturbation.
  double final_loss;
  // Largest absolute perturbation sample.
  double delta_linf;
} vc_protect_stats_t;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message describing the most recent failure on this thread. The
// pointer stays valid until the next failing call on the same thread.
const char *vc_last_error(void);

// Read a 16-bit PCM WAV file into a new clip handle.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be a valid
// pointer to write the handle to.
enum vc_status_t vc_clip_read(const char *path, struct vc_clip_t **out);

// Build a clip handle from a sample buffer (copied).
//
// # Safety
// `samples` must point to `len` readable doubles; `out` must be valid.
enum vc_status_t vc_clip_from_samples(const double *samples,
                                      size_t len,
                                      uint32_t rate,
                                      struct vc_clip_t **out);

// Write a clip as 16-bit PCM WAV.
//
// # Safety
// `clip` must be a live handle; `path` a NUL-terminated string.
enum vc_status_t vc_clip_write(const struct vc_clip_t *clip, const char *path);

// Number of samples in the clip; 0 for a null handle.
//
// # Safety
// `clip` must be a live handle or null.
size_t vc_clip_len(const struct vc_clip_t *clip);

// Sample rate in Hz; 0 for a null handle.
//
// # Safety
// `clip` must be a live handle or null.
uint32_t vc_clip_rate(const struct vc_clip_t *clip);

// Copy the clip's samples into `out` (must hold `vc_clip_len` doubles).
//
// # Safety
// `clip` must be a live handle; `out` must point to `cap` writable
// doubles.
enum vc_status_t vc_clip_samples(const struct vc_clip_t *clip, double *out, size_t cap);

// Release a clip handle. Null is a no-op.
//
// # Safety
// `clip` must be a handle returned by this library, freed once.
void vc_clip_free(struct vc_clip_t *clip);

// Load a model file produced by the trainer.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be valid.
enum vc_status_t vc_model_load(const char *path, struct vc_model_t **out);

// Save a model handle back to a file.
//
// # Safety
// `model` must be a live handle; `path` a NUL-terminated string.
enum vc_status_t vc_model_save(const struct vc_model_t *model, const char *path);

// Number of speaker classes the model was trained with; 0 for null.
//
// # Safety
// `model` must be a live handle or null.
size_t vc_model_speakers(const struct vc_model_t *model);

// Release a model handle. Null is a no-op.
//
// # Safety
// `model` must be a handle returned by this library, freed once.
void vc_model_free(struct vc_model_t *model);

// Fill `out` with the library defaults.
//
// # Safety
// `out` must be a valid pointer.
void vc_protect_options_default(struct vc_protect_options_t *out);

// Optimize a perturbation for `clean` against `model` (treating the
// clip as speaker `label`) and return the protected clip.
//
// # Safety
// `model` and `clean` must be live handles; `options` may be null for
// defaults; `out` must be valid; `stats` may be null.
enum vc_status_t vc_protect(const struct vc_model_t *model,
                            const struct vc_clip_t *clean,
                            size_t label,
                            const struct vc_protect_options_t *options,
                            struct vc_clip_t **out,
                            struct vc_protect_stats_t *stats);

// Equal error rate (percent) of a scored trial set.
//
// # Safety
// The score arrays must hold the stated number of doubles; `out`
// must be a valid pointer.
enum vc_status_t vc_eer(const double *targets,
                        size_t n_targets,
                        const double *nontargets,
                        size_t n_nontargets,
                        double *out);

// Minimum normalized detection cost of a scored trial set.
//
// # Safety
// The score arrays must hold the stated number of doubles; `out`
// must be a valid pointer.
enum vc_status_t vc_min_dcf(const double *targets,
                            size_t n_targets,
                            const double *nontargets,
                            size_t n_nontargets,
                            double p_target,
                            double c_miss,
                            double c_fa,
                            double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* VOICECLOAK_H */
