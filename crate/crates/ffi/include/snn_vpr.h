#ifndef SNN_VPR_H
#define SNN_VPR_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes.
 */
typedef enum SvprStatus {
  SVPR_STATUS_OK = 0,
  SVPR_STATUS_NULL_POINTER = 1,
  SVPR_STATUS_INVALID_ARGUMENT = 2,
  SVPR_STATUS_INGEST = 3,
  SVPR_STATUS_CONFIG = 4,
  SVPR_STATUS_IO = 5,
  SVPR_STATUS_CORRUPT = 6,
  SVPR_STATUS_UNSUPPORTED_VERSION = 7,
  SVPR_STATUS_STATE = 8,
  SVPR_STATUS_INTERNAL = 9,
  SVPR_STATUS_PANIC = 10,
} SvprStatus;

/**
 * Opaque ensemble handle.
 */
typedef struct SvprEnsemble SvprEnsemble;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *svpr_version(void);

/**
 * Message of the last failed call on this thread, or NULL. The pointer
 * stays valid until the next call into this library on the same thread.
 */
const char *svpr_last_error_message(void);

/**
 * Load an archive directory. On success `*out` receives a new handle.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum SvprStatus svpr_ensemble_load(const char *path, struct SvprEnsemble **out);

/**
 * Release a handle. NULL is ignored.
 *
 * # Safety
 * `ensemble` must come from [`svpr_ensemble_load`] and not be used again.
 */
void svpr_ensemble_free(struct SvprEnsemble *ensemble);

/**
 * # Safety
 * `ensemble` must be a live handle and `out` a valid pointer.
 */
enum SvprStatus svpr_ensemble_place_count(const struct SvprEnsemble *ensemble, size_t *out);

/**
 * # Safety
 * `ensemble` must be a live handle and `out` a valid pointer.
 */
enum SvprStatus svpr_ensemble_expert_count(const struct SvprEnsemble *ensemble, size_t *out);

/**
 * Number of neurons currently excluded from voting.
 *
 * # Safety
 * `ensemble` must be a live handle and `out` a valid pointer.
 */
enum SvprStatus svpr_ensemble_hyperactive_count(const struct SvprEnsemble *ensemble, size_t *out);

/**
 * Width and height images are resized to before encoding.
 *
 * # Safety
 * `ensemble` must be a live handle; `width` and `height` valid pointers.
 */
enum SvprStatus svpr_ensemble_input_size(const struct SvprEnsemble *ensemble,
                                         size_t *width,
                                         size_t *height);

/**
 * Match an image file. The best `capacity` places are written to `places`
 * (and their scores to `scores` unless it is NULL), best first; `*len`
 * receives the number written. `index` seeds the query spike train.
 *
 * # Safety
 * Output arrays must hold `capacity` elements; other pointers must be valid
 * or NULL where documented.
 */
enum SvprStatus svpr_match_file(const struct SvprEnsemble *ensemble,
                                const char *path,
                                size_t index,
                                size_t *places,
                                uint64_t *scores,
                                size_t capacity,
                                size_t *len,
                                bool *no_evidence);

/**
 * Match a row-major 8-bit grayscale image of any size; it is resized and
 * normalized like images loaded from disk.
 *
 * # Safety
 * `pixels` must hold `width * height` bytes; see [`svpr_match_file`] for
 * the outputs.
 */
enum SvprStatus svpr_match_gray8(const struct SvprEnsemble *ensemble,
                                 const uint8_t *pixels,
                                 size_t width,
                                 size_t height,
                                 size_t index,
                                 size_t *places,
                                 uint64_t *scores,
                                 size_t capacity,
                                 size_t *len,
                                 bool *no_evidence);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SNN_VPR_H */
