#ifndef REGFACTOR_H
#define REGFACTOR_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible function.
 */
typedef enum {
  RF_STATUS_OK = 0,
  RF_STATUS_NULL_POINTER = 1,
  RF_STATUS_CONFIG = 2,
  RF_STATUS_SHAPE = 3,
  RF_STATUS_RANGE = 4,
  RF_STATUS_FORMAT = 5,
  RF_STATUS_IO = 6,
  RF_STATUS_NUMERIC = 7,
  RF_STATUS_CONTRACT = 8,
  RF_STATUS_PANIC = 9,
} RfStatus;

/**
 * Per-sequence frame history used by the temporal encoder.
 */
typedef struct RfCache RfCache;

/**
 * A loaded or freshly initialised registration model.
 */
typedef struct RfModel RfModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *rf_version(void);

/**
 * Message of the last failure on this thread, or null if none. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *rf_last_error_message(void);

/**
 * Creates a model with the desk-scale architecture at `image_size` and
 * weights drawn from `seed`.
 *
 * # Safety
 * `out` must be a valid pointer to writable storage for one pointer.
 */
RfStatus rf_model_new(uintptr_t image_size, uint64_t seed, RfModel **out);

/**
 * Loads the model weights from a training checkpoint.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` as in [`rf_model_new`].
 */
RfStatus rf_model_load(const char *path, RfModel **out);

/**
 * # Safety
 * `model` must come from `rf_model_new`/`rf_model_load` and not be used again.
 */
void rf_model_free(RfModel *model);

/**
 * Number of trainable scalars, or 0 for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
uintptr_t rf_model_param_count(const RfModel *model);

/**
 * Side length of the square images the model accepts, or 0 for null.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
uintptr_t rf_model_image_size(const RfModel *model);

/**
 * Creates an empty frame cache sized for `model`.
 *
 * # Safety
 * `model` must be a live handle; `out` writable.
 */
RfStatus rf_cache_new(const RfModel *model, RfCache **out);

/**
 * Forgets all history so the cache can start a new sequence.
 *
 * # Safety
 * `cache` must be null or a live handle.
 */
RfStatus rf_cache_reset(RfCache *cache);

/**
 * Number of frames currently held, or 0 for null.
 *
 * # Safety
 * `cache` must be null or a live handle.
 */
uintptr_t rf_cache_len(const RfCache *cache);

/**
 * # Safety
 * `cache` must come from `rf_cache_new` and not be used again.
 */
void rf_cache_free(RfCache *cache);

/**
 * Registers frame `t` of sequence `seq_id`. `moving`, `fixed` and `out` are
 * row-major `height × width` grayscale images with values in [0, 1]; both
 * sides must equal the model's image size. Frames of one sequence must be
 * passed in order through the same cache. On failure `out` is untouched.
 *
 * # Safety
 * Image pointers must reference `width * height` doubles; handles must be live.
 */
RfStatus rf_register(const RfModel *model,
                     RfCache *cache,
                     uint64_t seq_id,
                     uintptr_t t,
                     const double *moving,
                     const double *fixed,
                     uintptr_t width,
                     uintptr_t height,
                     double *out);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus

#endif /* REGFACTOR_H */
