#ifndef POLSAR_DESPECKLE_H
#define POLSAR_DESPECKLE_H

/* Generated by cbindgen from the polsar-despeckle-ffi crate; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status code of a fallible call. Anything but `Ok` leaves a description
 * in `psd_last_error_message`.
 */
typedef enum PsdStatus {
  PSD_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  PSD_STATUS_NULL_ARGUMENT = 1,
  /**
   * An argument failed validation (encoding, bounds, geometry, config).
   */
  PSD_STATUS_INVALID_ARGUMENT = 2,
  /**
   * The operating system reported an I/O failure.
   */
  PSD_STATUS_IO_ERROR = 3,
  /**
   * A file or raster decoded but its content is unusable.
   */
  PSD_STATUS_DATA_ERROR = 4,
  /**
   * A panic was caught at the boundary; state is unchanged but the
   * library's invariants should be considered suspect.
   */
  PSD_STATUS_INTERNAL_ERROR = 5,
} PsdStatus;

/**
 * Opaque handle to a dual-pol covariance raster.
 */
typedef struct PsdC2Raster PsdC2Raster;

/**
 * Opaque handle to a trained despeckling model.
 */
typedef struct PsdModel PsdModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the most recent failure on the calling thread, or an empty
 * string. The pointer stays valid until the next failing call on the same
 * thread. Do not free it.
 */
const char *psd_last_error_message(void);

/**
 * Library version as a static string. Do not free it.
 */
const char *psd_version(void);

/**
 * Reads a PSR1 C2 raster from disk. Returns null on failure.
 *
 * # Safety
 * `path` must be a valid NUL-terminated C string.
 */
struct PsdC2Raster *psd_c2_read(const char *path);

/**
 * Writes a C2 raster to disk as PSR1.
 *
 * # Safety
 * `raster` must be a live handle from this library; `path` must be a
 * valid NUL-terminated C string.
 */
enum PsdStatus psd_c2_write(const struct PsdC2Raster *raster, const char *path);

/**
 * Row count of a raster handle; 0 if the handle is null.
 *
 * # Safety
 * `raster` must be null or a live handle from this library.
 */
uintptr_t psd_c2_height(const struct PsdC2Raster *raster);

/**
 * Column count of a raster handle; 0 if the handle is null.
 *
 * # Safety
 * `raster` must be null or a live handle from this library.
 */
uintptr_t psd_c2_width(const struct PsdC2Raster *raster);

/**
 * Copies one raster plane into a caller buffer of `len == height*width`
 * doubles. Planes: 0 = c11, 1 = c22, 2 = Re(c12), 3 = Im(c12).
 *
 * # Safety
 * `raster` must be a live handle; `out` must point to at least `len`
 * writable doubles.
 */
enum PsdStatus psd_c2_copy_plane(const struct PsdC2Raster *raster,
                                 uint32_t plane,
                                 double *out,
                                 uintptr_t len);

/**
 * Releases a raster handle. Null is ignored.
 *
 * # Safety
 * `raster` must be null or a live handle from this library, not yet freed.
 */
void psd_c2_free(struct PsdC2Raster *raster);

/**
 * Loads a PSM1 model checkpoint. Returns null on failure.
 *
 * # Safety
 * `path` must be a valid NUL-terminated C string.
 */
struct PsdModel *psd_model_load(const char *path);

/**
 * Receptive field of a model in pixels — the minimum sensible tile size;
 * 0 if the handle is null.
 *
 * # Safety
 * `model` must be null or a live handle from this library.
 */
uintptr_t psd_model_receptive_field(const struct PsdModel *model);

/**
 * Releases a model handle. Null is ignored.
 *
 * # Safety
 * `model` must be null or a live handle from this library, not yet freed.
 */
void psd_model_free(struct PsdModel *model);

/**
 * Despeckles a raster with a trained model, returning a new raster handle
 * (null on failure). `tile` or `overlap` of 0 selects the defaults
 * (256 / 16). `project_psd` projects each output pixel back onto the
 * positive-semidefinite cone.
 *
 * # Safety
 * `raster` and `model` must be live handles from this library.
 */
struct PsdC2Raster *psd_despeckle(const struct PsdC2Raster *raster,
                                  const struct PsdModel *model,
                                  uintptr_t tile,
                                  uintptr_t overlap,
                                  bool project_psd);

/**
 * Polarimetric equivalent number of looks over the rectangle of
 * `height` x `width` pixels at (`row0`, `col0`), written through
 * `out_enl`. A perfectly constant region yields +infinity.
 *
 * # Safety
 * `raster` must be a live handle; `out_enl` must point to a writable
 * double.
 */
enum PsdStatus psd_enl(const struct PsdC2Raster *raster,
                       uintptr_t row0,
                       uintptr_t col0,
                       uintptr_t height,
                       uintptr_t width,
                       double *out_enl);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus

#endif /* POLSAR_DESPECKLE_H */
