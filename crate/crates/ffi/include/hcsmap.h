/* hcsmap C API. Opaque handles; every fallible call returns HcsmapStatus and leaves a message for hcsmap_last_error_message(). */

#pragma once

/* Generated with cbindgen:0.29.4 */

/* Generated by cbindgen from hcsmap-ffi; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes returned by every fallible API call.
 */
typedef enum HcsmapStatus {
  HCSMAP_STATUS_OK = 0,
  HCSMAP_STATUS_NULL_POINTER = 1,
  HCSMAP_STATUS_INVALID_UTF8 = 2,
  HCSMAP_STATUS_IO = 3,
  HCSMAP_STATUS_INVALID_ARGUMENT = 4,
  HCSMAP_STATUS_INTERNAL = 5,
} HcsmapStatus;

/**
 * Opaque five-member carbon-ensemble handle.
 */
typedef struct HcsmapEnsemble HcsmapEnsemble;

/**
 * Opaque multi-band raster handle.
 */
typedef struct HcsmapGrid HcsmapGrid;

/**
 * Opaque canopy-model handle.
 */
typedef struct HcsmapModel HcsmapModel;

/**
 * Message describing the most recent failure on this thread. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *hcsmap_last_error_message(void);

/**
 * Crate version as a static NUL-terminated string.
 */
const char *hcsmap_version(void);

/**
 * Read a GRD1 grid from disk.
 *
 * # Safety
 * `path` must be NUL-terminated; `out` must point to writable storage.
 */
enum HcsmapStatus hcsmap_grid_read(const char *path, struct HcsmapGrid **out);

/**
 * Write a grid as GRD1 (atomically).
 *
 * # Safety
 * `grid` must be a live handle from this library; `path` NUL-terminated.
 */
enum HcsmapStatus hcsmap_grid_write(const struct HcsmapGrid *grid, const char *path);

/**
 * # Safety
 * `grid` must come from this library and not have been freed already.
 */
void hcsmap_grid_free(struct HcsmapGrid *grid);

/**
 * Grid width in pixels (0 when the handle is null).
 *
 * # Safety
 * `grid` must be a live handle or null.
 */
size_t hcsmap_grid_width(const struct HcsmapGrid *grid);

/**
 * # Safety
 * `grid` must be a live handle or null.
 */
size_t hcsmap_grid_height(const struct HcsmapGrid *grid);

/**
 * # Safety
 * `grid` must be a live handle or null.
 */
size_t hcsmap_grid_bands(const struct HcsmapGrid *grid);

/**
 * # Safety
 * `grid` must be a live handle or null.
 */
double hcsmap_grid_pixel_size(const struct HcsmapGrid *grid);

/**
 * Read one pixel. `out_is_nodata` is 1 when the pixel is masked (the value
 * is still written).
 *
 * # Safety
 * All pointers must be valid; `grid` must be a live handle.
 */
enum HcsmapStatus hcsmap_grid_value(const struct HcsmapGrid *grid,
                                    size_t band,
                                    size_t col,
                                    size_t row,
                                    float *out_value,
                                    uint8_t *out_is_nodata);

/**
 * Load an NNP1 checkpoint.
 *
 * # Safety
 * `path` must be NUL-terminated; `out` must point to writable storage.
 */
enum HcsmapStatus hcsmap_model_read(const char *path, struct HcsmapModel **out);

/**
 * # Safety
 * `model` must come from this library and not have been freed already.
 */
void hcsmap_model_free(struct HcsmapModel *model);

/**
 * # Safety
 * `model` must be a live handle or null.
 */
size_t hcsmap_model_receptive_field(const struct HcsmapModel *model);

/**
 * Dense canopy-height inference over a 12-band image grid. Pass `tile` or
 * `overlap` as 0 for the defaults.
 *
 * # Safety
 * `model` and `image` must be live handles; `out` writable.
 */
enum HcsmapStatus hcsmap_predict_dense(const struct HcsmapModel *model,
                                       const struct HcsmapGrid *image,
                                       size_t tile,
                                       size_t overlap,
                                       struct HcsmapGrid **out);

/**
 * Load a five-member ensemble directory (member_0.nnp1 .. member_4.nnp1).
 *
 * # Safety
 * `dir` must be NUL-terminated; `out` writable.
 */
enum HcsmapStatus hcsmap_ensemble_read(const char *dir, struct HcsmapEnsemble **out);

/**
 * # Safety
 * `ensemble` must come from this library and not have been freed already.
 */
void hcsmap_ensemble_free(struct HcsmapEnsemble *ensemble);

/**
 * Ensemble carbon prediction over a 1-band height grid: writes the mean
 * map and the deep-ensemble variance map.
 *
 * # Safety
 * `ensemble` and `height` must be live handles; out-pointers writable.
 */
enum HcsmapStatus hcsmap_predict_carbon(const struct HcsmapEnsemble *ensemble,
                                        const struct HcsmapGrid *height,
                                        struct HcsmapGrid **out_mean,
                                        struct HcsmapGrid **out_variance);

/**
 * Class code for one carbon density (default thresholds); see the legend
 * in the library docs: 0=OL 1=S 2=YRF 3=LDF 4=MDF 5=HDF.
 *
 * # Safety
 * `out_class` must be writable.
 */
enum HcsmapStatus hcsmap_classify_density(double density, uint8_t *out_class);

/**
 * Classify a carbon-density grid into a class-code grid (default
 * thresholds, no overlays).
 *
 * # Safety
 * `carbon` must be a live handle; `out` writable.
 */
enum HcsmapStatus hcsmap_classify_grid(const struct HcsmapGrid *carbon, struct HcsmapGrid **out);

/**
 * Binary collapse of a class code: 0 = OLS, 1 = HCS, 2 = Other.
 *
 * # Safety
 * `out_binary` must be writable.
 */
enum HcsmapStatus hcsmap_binary_collapse(uint8_t class_code, uint8_t *out_binary);

/**
 * RMSE / MAE / ME / valid-pixel count between two co-registered 1-band
 * grids (nodata in either grid excluded).
 *
 * # Safety
 * Grid handles must be live; out-pointers writable.
 */
enum HcsmapStatus hcsmap_regression_metrics(const struct HcsmapGrid *pred,
                                            const struct HcsmapGrid *reference,
                                            double *out_rmse,
                                            double *out_mae,
                                            double *out_me,
                                            size_t *out_count);
