#ifndef SINOCT_H
#define SINOCT_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes mirroring the process exit codes of the CLI.
 */
typedef enum SinoctStatus {
  SinoctStatus_Ok = 0,
  /**
   * Invalid argument, shape, or contract violation.
   */
  SinoctStatus_Invalid = 2,
  /**
   * File could not be read or parsed.
   */
  SinoctStatus_Io = 3,
  /**
   * Numeric failure (non-finite values).
   */
  SinoctStatus_Numeric = 4,
} SinoctStatus;

/**
 * Opaque trained-model handle.
 */
typedef struct SinoctModel SinoctModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the message of the most recent error on this thread into `buf`
 * (NUL-terminated, truncated to `len`). Returns the full message length.
 *
 * # Safety
 * `buf` must point to `len` writable bytes, or be null (query mode).
 */
uintptr_t sinoct_last_error_message(char *buf, uintptr_t len);

/**
 * Forward-projects a `side * side` image into `n_angles * side` sinogram
 * rows over a half turn starting at 0 degrees.
 *
 * # Safety
 * `image` must point to `side * side` readable f32; `out_sino` to
 * `n_angles * side` writable f32.
 */
enum SinoctStatus sinoct_radon(const float *image,
                               uintptr_t side,
                               uintptr_t n_angles,
                               float *out_sino);

/**
 * Reconstructs an image by filtered back-projection. `filter` is 0 for
 * Ram-Lak, 1 for Hann, 2 for no filtering.
 *
 * # Safety
 * `sino` must point to `n_angles * n_bins` readable f32; `out_image` to
 * `n_bins * n_bins` writable f32.
 */
enum SinoctStatus sinoct_fbp(const float *sino,
                             uintptr_t n_angles,
                             uintptr_t n_bins,
                             int filter,
                             float *out_image);

/**
 * Mean SSIM between two `side * side` images with the given dynamic range.
 *
 * # Safety
 * `a`, `b` must point to `side * side` readable f32; `out` to one f64.
 */
enum SinoctStatus sinoct_ssim(const float *a,
                              const float *b,
                              uintptr_t side,
                              double dynamic_range,
                              double *out);

/**
 * PSNR in dB between two `side * side` images (capped at 99 dB).
 *
 * # Safety
 * `a`, `b` must point to `side * side` readable f32; `out` to one f64.
 */
enum SinoctStatus sinoct_psnr(const float *a,
                              const float *b,
                              uintptr_t side,
                              double dynamic_range,
                              double *out);

/**
 * Loads a checkpoint directory (as written by `sinoct train`) and stores a
 * handle in `out`. Free with `sinoct_model_free`.
 *
 * # Safety
 * `dir` must be a NUL-terminated UTF-8 path; `out` a writable pointer slot.
 */
enum SinoctStatus sinoct_model_load(const char *dir, struct SinoctModel **out);

/**
 * # Safety
 * `model` must come from `sinoct_model_load` and not be used afterwards.
 */
void sinoct_model_free(struct SinoctModel *model);

/**
 * Number of view angles the model was trained for.
 *
 * # Safety
 * `model` must be a live handle.
 */
uintptr_t sinoct_model_n_angles(const struct SinoctModel *model);

/**
 * Detector bin count (= image side) of the model.
 *
 * # Safety
 * `model` must be a live handle.
 */
uintptr_t sinoct_model_n_bins(const struct SinoctModel *model);

/**
 * Inpaints a masked sinogram with a sinogram-head model (msm, svtx, dntx).
 * `sino` holds the full `n_angles * n_bins` grid with masked rows zeroed;
 * `kept` lists the visible row indices. Writes the completed sinogram.
 *
 * # Safety
 * Buffer sizes must match the model's `n_angles * n_bins`; `kept` must
 * point to `n_kept` readable usize.
 */
enum SinoctStatus sinoct_model_infer_sino(const struct SinoctModel *model,
                                          const float *sino,
                                          const uintptr_t *kept,
                                          uintptr_t n_kept,
                                          float *out_sino);

/**
 * Reconstructs an image directly with an image-head (ctx) model. Writes a
 * `side * side` image where side = `sinoct_model_n_bins`.
 *
 * # Safety
 * Same buffer contracts as `sinoct_model_infer_sino`; `out_image` must
 * hold `side * side` writable f32.
 */
enum SinoctStatus sinoct_model_infer_image(const struct SinoctModel *model,
                                           const float *sino,
                                           const uintptr_t *kept,
                                           uintptr_t n_kept,
                                           float *out_image);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SINOCT_H */
