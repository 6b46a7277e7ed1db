#ifndef SEGTRACK_H
#define SEGTRACK_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SegtrackStatus {
  SEGTRACK_STATUS_OK = 0,
  SEGTRACK_STATUS_NULL_POINTER = 1,
  SEGTRACK_STATUS_INVALID_ARGUMENT = 2,
  SEGTRACK_STATUS_MISSING_FILE = 3,
  SEGTRACK_STATUS_CHECKPOINT = 4,
  SEGTRACK_STATUS_UNINITIALIZED = 5,
  SEGTRACK_STATUS_DEGENERATE = 6,
  SEGTRACK_STATUS_INTERNAL = 7,
  SEGTRACK_STATUS_PANIC = 8,
} SegtrackStatus;

typedef struct SegtrackTracker SegtrackTracker;

/**
 * Trained weights shared by any number of trackers.
 */
typedef struct SegtrackWeights SegtrackWeights;

/**
 * Per-frame tracking result.
 */
typedef struct SegtrackResult {
  /**
   * Box corners `x0, y0, ..., x3, y3` in frame pixels, clamped to the frame.
   */
  double polygon[8];
  /**
   * Nonzero when the target was not found; the polygon is then the last
   * known box.
   */
  int32_t lost;
  /**
   * Foreground pixel count of the mask.
   */
  size_t mask_pixels;
} SegtrackResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *segtrack_version(void);

/**
 * Message of the last failed call on this thread; empty after a success.
 * Valid until the next call on the same thread.
 */
const char *segtrack_last_error(void);

/**
 * Load a checkpoint.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum SegtrackStatus segtrack_weights_load(const char *path, struct SegtrackWeights **out);

/**
 * # Safety
 * `weights` must come from [`segtrack_weights_load`] or be null.
 */
void segtrack_weights_free(struct SegtrackWeights *weights);

/**
 * Create a tracker. `ablation` names a variant (`full`, `no-l`, `min-max`,
 * ...) or is null for the full tracker.
 *
 * # Safety
 * `weights` must be a live handle, `ablation` null or NUL-terminated and
 * `out` a valid pointer.
 */
enum SegtrackStatus segtrack_tracker_new(const struct SegtrackWeights *weights,
                                         const char *ablation,
                                         struct SegtrackTracker **out);

/**
 * # Safety
 * `tracker` must come from [`segtrack_tracker_new`] or be null.
 */
void segtrack_tracker_free(struct SegtrackTracker *tracker);

/**
 * Start tracking from an axis-aligned box `(x, y, w, h)`.
 *
 * # Safety
 * `tracker` must be live, `rgb` must hold `stride * height` bytes, `result`
 * may be null, `mask_out` null or `width * height` bytes.
 */
enum SegtrackStatus segtrack_tracker_init_box(struct SegtrackTracker *tracker,
                                              const uint8_t *rgb,
                                              size_t width,
                                              size_t height,
                                              size_t stride,
                                              double x,
                                              double y,
                                              double w,
                                              double h,
                                              struct SegtrackResult *result,
                                              uint8_t *mask_out);

/**
 * Start tracking from a mask of `width * height` bytes, nonzero foreground.
 *
 * # Safety
 * As [`segtrack_tracker_init_box`]; `mask` must hold `width * height` bytes.
 */
enum SegtrackStatus segtrack_tracker_init_mask(struct SegtrackTracker *tracker,
                                               const uint8_t *rgb,
                                               size_t width,
                                               size_t height,
                                               size_t stride,
                                               const uint8_t *mask,
                                               struct SegtrackResult *result,
                                               uint8_t *mask_out);

/**
 * Track the target into the next frame, which must match the
 * initialization frame size.
 *
 * # Safety
 * As [`segtrack_tracker_init_box`].
 */
enum SegtrackStatus segtrack_tracker_track(struct SegtrackTracker *tracker,
                                           const uint8_t *rgb,
                                           size_t width,
                                           size_t height,
                                           size_t stride,
                                           struct SegtrackResult *result,
                                           uint8_t *mask_out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SEGTRACK_H */
