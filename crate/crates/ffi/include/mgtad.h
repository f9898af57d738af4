#ifndef MGTAD_H
#define MGTAD_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum MgtadStatus {
  MGTAD_STATUS_OK = 0,
  MGTAD_STATUS_NULL_POINTER = 1,
  MGTAD_STATUS_INVALID_ARGUMENT = 2,
  MGTAD_STATUS_IO = 3,
  MGTAD_STATUS_INVALID_MODEL = 4,
  MGTAD_STATUS_SHAPE_MISMATCH = 5,
  MGTAD_STATUS_BUFFER_TOO_SMALL = 6,
  MGTAD_STATUS_INTERNAL = 7,
} MgtadStatus;

// Opaque loaded model.
typedef struct MgtadModel MgtadModel;

// Opaque streaming session. Finalized detections queue up inside the
// handle until drained.
typedef struct MgtadStream MgtadStream;

// Inference parameters; obtain defaults from [`mgtad_infer_config_default`].
typedef struct MgtadInferConfig {
  double score_threshold;
  double nms_sigma;
  double min_score;
  double report_threshold;
  uint32_t window;
  double fps;
  uint32_t feature_stride;
} MgtadInferConfig;

// A detection as seen from C. Times are in seconds.
typedef struct MgtadDetection {
  double start_s;
  double end_s;
  uint32_t label;
  double score;
} MgtadDetection;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *mgtad_version(void);

// Message of the last failed call on this thread, or null. Valid until the
// next call into the library on this thread.
const char *mgtad_last_error(void);

// Static description of a status code.
const char *mgtad_status_string(enum MgtadStatus status);

// Default inference parameters for features at `fps` frames per second and
// `feature_stride` frames per step.
struct MgtadInferConfig mgtad_infer_config_default(double fps, uint32_t feature_stride);

// Loads a model file.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a writable pointer.
enum MgtadStatus mgtad_model_load(const char *path, struct MgtadModel **out);

// Loads a model from an in-memory model file.
//
// # Safety
// `bytes` must point to `len` readable bytes and `out` be writable.
enum MgtadStatus mgtad_model_load_bytes(const uint8_t *bytes, size_t len, struct MgtadModel **out);

// Releases a model. Streams created from it stay valid. Null is ignored.
//
// # Safety
// `model` must come from a load function and not be freed twice.
void mgtad_model_free(struct MgtadModel *model);

// Feature channels the model expects, or 0 for a null handle.
//
// # Safety
// `model` must be null or a live handle.
size_t mgtad_model_input_channels(const struct MgtadModel *model);

// Number of categories, or 0 for a null handle.
//
// # Safety
// `model` must be null or a live handle.
size_t mgtad_model_num_classes(const struct MgtadModel *model);

// Offline detection over a channel-major `channels × steps` feature block.
//
// `*out_count` always receives the number of detections. When it exceeds
// `capacity` nothing is written and `MGTAD_STATUS_BUFFER_TOO_SMALL` is
// returned, so callers can retry with a larger buffer.
//
// # Safety
// Pointers must be valid for the stated sizes; `out_count` must be writable.
enum MgtadStatus mgtad_detect(const struct MgtadModel *model,
                              const double *features,
                              size_t channels,
                              size_t steps,
                              const struct MgtadInferConfig *config,
                              struct MgtadDetection *out,
                              size_t capacity,
                              size_t *out_count);

// Starts a streaming session on `model`.
//
// # Safety
// `model` and `config` must be valid; `out` must be writable.
enum MgtadStatus mgtad_stream_new(const struct MgtadModel *model,
                                  const struct MgtadInferConfig *config,
                                  struct MgtadStream **out);

// Appends `steps` feature steps (channel-major, `channels × steps`) and
// queues any detections that became final.
//
// # Safety
// `stream` must be live and `features` hold `channels * steps` doubles.
enum MgtadStatus mgtad_stream_push(struct MgtadStream *stream,
                                   const double *features,
                                   size_t channels,
                                   size_t steps);

// Ends the sequence and queues the remaining detections. Further pushes
// fail; draining keeps working.
//
// # Safety
// `stream` must be live.
enum MgtadStatus mgtad_stream_finish(struct MgtadStream *stream);

// Number of queued detections, or 0 for a null handle.
//
// # Safety
// `stream` must be null or live.
size_t mgtad_stream_pending(const struct MgtadStream *stream);

// Moves up to `capacity` queued detections into `out`, oldest first, and
// stores how many were written in `*out_count`.
//
// # Safety
// `out` must hold `capacity` detections; `out_count` must be writable.
enum MgtadStatus mgtad_stream_drain(struct MgtadStream *stream,
                                    struct MgtadDetection *out,
                                    size_t capacity,
                                    size_t *out_count);

// Releases a stream. Null is ignored.
//
// # Safety
// `stream` must come from [`mgtad_stream_new`] and not be freed twice.
void mgtad_stream_free(struct MgtadStream *stream);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MGTAD_H */
