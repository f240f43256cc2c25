#ifndef LUNGSEG_H
#define LUNGSEG_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum LsStatus {
  LS_STATUS_OK = 0,
  LS_STATUS_NULL_POINTER = 1,
  LS_STATUS_INVALID_ARGUMENT = 2,
  LS_STATUS_IO = 3,
  LS_STATUS_FORMAT = 4,
  LS_STATUS_SIZE_MISMATCH = 5,
  LS_STATUS_DIMENSION_MISMATCH = 6,
  LS_STATUS_SEGMENTATION = 7,
  LS_STATUS_MODEL = 8,
  LS_STATUS_PANIC = 9,
} LsStatus;

/**
 * Grayscale image with intensities in [0, 1].
 */
typedef struct LsImage LsImage;

/**
 * Binary lung mask.
 */
typedef struct LsMask LsMask;

/**
 * Trained segmentation network.
 */
typedef struct LsModel LsModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *ls_version(void);

/**
 * Message for the last failed call on this thread, or null. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *ls_last_error(void);

/**
 * Copies `width * height` row-major intensities into a new image.
 *
 * # Safety
 * `data` must point to `width * height` floats; `out` must be writable.
 */
enum LsStatus ls_image_new(size_t width, size_t height, const float *data, struct LsImage **out);

/**
 * Reads a PNG/PGM, or a 2048x2048 JSRT raw (`.raw`/`.img`, inverted).
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum LsStatus ls_image_read(const char *path, struct LsImage **out);

/**
 * Reads a headerless big-endian 12-bit raw of the given dimensions.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum LsStatus ls_image_read_raw(const char *path,
                                size_t width,
                                size_t height,
                                bool invert,
                                struct LsImage **out);

/**
 * # Safety
 * `image` must be a live handle or null; the out pointers must be writable.
 */
enum LsStatus ls_image_dims(const struct LsImage *image, size_t *width, size_t *height);

/**
 * # Safety
 * `image` must come from this library and not be freed twice.
 */
void ls_image_free(struct LsImage *image);

/**
 * Otsu threshold and connected components with default settings.
 *
 * # Safety
 * `image` must be a live handle; `out` must be writable.
 */
enum LsStatus ls_segment_cca(const struct LsImage *image, struct LsMask **out);

/**
 * Marker-based watershed with default settings.
 *
 * # Safety
 * `image` must be a live handle; `out` must be writable.
 */
enum LsStatus ls_segment_watershed(const struct LsImage *image, struct LsMask **out);

/**
 * Loads a checkpoint trained at `input_size` x `input_size`.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum LsStatus ls_model_load(const char *path, size_t input_size, struct LsModel **out);

/**
 * Lung mask at the image's own size; pixels with probability above
 * `threshold` are lung.
 *
 * # Safety
 * `model` and `image` must be live handles; `out` must be writable.
 */
enum LsStatus ls_model_predict(const struct LsModel *model,
                               const struct LsImage *image,
                               double threshold,
                               struct LsMask **out);

/**
 * # Safety
 * `model` must come from this library and not be freed twice.
 */
void ls_model_free(struct LsModel *model);

/**
 * # Safety
 * `mask` must be a live handle; the out pointers must be writable.
 */
enum LsStatus ls_mask_dims(const struct LsMask *mask, size_t *width, size_t *height);

/**
 * Writes the mask row-major as 0/1 bytes into `buf`, which must hold exactly
 * `width * height` bytes.
 *
 * # Safety
 * `mask` must be a live handle; `buf` must point to `len` writable bytes.
 */
enum LsStatus ls_mask_copy(const struct LsMask *mask, uint8_t *buf, size_t len);

/**
 * Saves the mask as an 8-bit PNG (0 or 255).
 *
 * # Safety
 * `mask` must be a live handle; `path` must be a NUL-terminated string.
 */
enum LsStatus ls_mask_write_png(const struct LsMask *mask, const char *path);

/**
 * # Safety
 * `mask` must come from this library and not be freed twice.
 */
void ls_mask_free(struct LsMask *mask);

/**
 * Dice coefficient of two equally sized masks; 1 when both are empty.
 *
 * # Safety
 * `pred` and `truth` must be live handles; `out` must be writable.
 */
enum LsStatus ls_dice(const struct LsMask *pred, const struct LsMask *truth, double *out);

/**
 * Intersection over union of two equally sized masks; 1 when both are empty.
 *
 * # Safety
 * `pred` and `truth` must be live handles; `out` must be writable.
 */
enum LsStatus ls_iou(const struct LsMask *pred, const struct LsMask *truth, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LUNGSEG_H */
