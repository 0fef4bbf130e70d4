#ifndef DENSECAM_H
#define DENSECAM_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum DcStatus {
  DC_STATUS_OK = 0,
  DC_STATUS_NULL_POINTER = 1,
  DC_STATUS_INVALID_ARGUMENT = 2,
  DC_STATUS_IO = 3,
  DC_STATUS_FORMAT = 4,
  // Audio shorter than the model's minimum input, or too long.
  DC_STATUS_INPUT_LENGTH = 5,
  DC_STATUS_BUFFER_TOO_SMALL = 6,
  DC_STATUS_INTERNAL = 7,
} DcStatus;

// Inference output for one clip.
typedef struct DcClip DcClip;

typedef struct DcModel DcModel;

// Per-class decoding thresholds. `median_len` must be odd.
typedef struct DcThreshold {
  float utterance;
  float frame;
  uint32_t median_len;
} DcThreshold;

// A detected event in seconds from the start of the clip.
typedef struct DcEvent {
  uint32_t class_id;
  double onset;
  double offset;
} DcEvent;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the most recent failure on this thread. Valid until the next
// failing call on the same thread.
const char *dc_last_error(void);

// Loads a weights file written by `densecam train`.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
enum DcStatus dc_model_load(const char *path, struct DcModel **out);

// Loads a model from an in-memory weights file.
//
// # Safety
// `bytes` must point to `len` readable bytes and `out` must be valid.
enum DcStatus dc_model_load_bytes(const uint8_t *bytes, size_t len, struct DcModel **out);

// # Safety
// `model` must come from `dc_model_load*` and not be freed twice. Null is
// ignored.
void dc_model_free(struct DcModel *model);

// Number of classes, or 0 if `model` is null.
//
// # Safety
// `model` must be null or a live handle.
size_t dc_model_num_classes(const struct DcModel *model);

// Class name owned by the model, or null for a bad index.
//
// # Safety
// `model` must be null or a live handle.
const char *dc_model_class_name(const struct DcModel *model, size_t class_id);

// Shortest accepted input in feature frames.
//
// # Safety
// `model` must be null or a live handle.
size_t dc_model_min_frames(const struct DcModel *model);

// Extracts features from mono PCM in `[-1, 1]` and runs the model.
//
// # Safety
// `samples` must point to `n_samples` floats; `model` and `out` must be
// valid.
enum DcStatus dc_model_run(const struct DcModel *model,
                           const float *samples,
                           size_t n_samples,
                           uint32_t sample_rate,
                           struct DcClip **out);

// # Safety
// `clip` must come from `dc_model_run` and not be freed twice. Null is
// ignored.
void dc_clip_free(struct DcClip *clip);

// Number of output frames in each CAM sequence.
//
// # Safety
// `clip` must be null or a live handle.
size_t dc_clip_num_frames(const struct DcClip *clip);

// Seconds covered by one CAM frame.
//
// # Safety
// `clip` must be null or a live handle.
double dc_clip_time_resolution(const struct DcClip *clip);

// Copies the clip-level class probabilities into `out`.
//
// # Safety
// `out` must have room for `cap` floats.
enum DcStatus dc_clip_probs(const struct DcClip *clip, float *out, size_t cap);

// Copies the CAM sequence of `class_id` (score space, one value per
// output frame) into `out`.
//
// # Safety
// `out` must have room for `cap` floats.
enum DcStatus dc_clip_sequence(const struct DcClip *clip, size_t class_id, float *out, size_t cap);

// Decodes events with one threshold per class. Writes at most `cap` events
// sorted by onset and stores the total in `n_events`; if that exceeds `cap`
// the call returns `BufferTooSmall` and nothing is written.
//
// # Safety
// `thresholds` must hold `n_thresholds` entries and `out` room for `cap`
// events (`out` may be null when `cap` is 0).
enum DcStatus dc_clip_events(const struct DcClip *clip,
                             const struct DcThreshold *thresholds,
                             size_t n_thresholds,
                             struct DcEvent *out,
                             size_t cap,
                             size_t *n_events);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DENSECAM_H */
