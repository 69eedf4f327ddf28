#ifndef GPRHOG_H
#define GPRHOG_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum GprStatus {
  GPR_STATUS_OK = 0,
  GPR_STATUS_NULL_POINTER = 1,
  GPR_STATUS_INVALID_ARGUMENT = 2,
  GPR_STATUS_IO = 3,
  GPR_STATUS_FORMAT = 4,
  GPR_STATUS_COMPUTE = 5,
  GPR_STATUS_BUFFER_TOO_SMALL = 6,
  GPR_STATUS_PANIC = 7,
} GprStatus;

/**
 * Trained randomized-tree classifier.
 */
typedef struct GprForest GprForest;

/**
 * Loaded or generated GPR volume.
 */
typedef struct GprVolume GprVolume;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent failure on this thread, or null. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *gpr_last_error_message(void);

/**
 * Length of `gpr_hog_feature` output under the default geometry (108).
 */
size_t gpr_hog_feature_len(void);

/**
 * Length of `gpr_alarm_feature` output under the default geometry (216).
 */
size_t gpr_alarm_feature_len(void);

/**
 * Reads a `GPRV` file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum GprStatus gpr_volume_load(const char *path, struct GprVolume **out);

/**
 * Writes a volume as a `GPRV` file (amplitudes stored as `f32`).
 *
 * # Safety
 * `volume` must be a live handle; `path` a NUL-terminated string.
 */
enum GprStatus gpr_volume_save(const struct GprVolume *volume, const char *path);

/**
 * Builds a volume from `n_down·n_cross·n_time` samples laid out
 * `[down][cross][time]` (time fastest).
 *
 * # Safety
 * `data` must point to that many readable doubles; `out` must be writable.
 */
enum GprStatus gpr_volume_from_data(const double *data,
                                    size_t n_down,
                                    size_t n_cross,
                                    size_t n_time,
                                    double dt_ns,
                                    double dx_down_m,
                                    double dx_cross_m,
                                    struct GprVolume **out);

/**
 * # Safety
 * `volume` must be a live handle; the out pointers must be writable.
 */
enum GprStatus gpr_volume_dims(const struct GprVolume *volume,
                               size_t *n_down,
                               size_t *n_cross,
                               size_t *n_time);

/**
 * Copies the samples (`[down][cross][time]`, time fastest) into `out`.
 *
 * # Safety
 * `volume` must be a live handle; `out` must hold `out_len` doubles.
 */
enum GprStatus gpr_volume_copy_data(const struct GprVolume *volume, double *out, size_t out_len);

/**
 * Releases a volume handle. Null is ignored.
 *
 * # Safety
 * `volume` must be null or a handle not yet freed.
 */
void gpr_volume_free(struct GprVolume *volume);

/**
 * Synthetic lane `lane_id` under the default generator settings and `seed`.
 *
 * # Safety
 * `out` must be writable.
 */
enum GprStatus gpr_synth_lane(uint64_t seed, uint32_t lane_id, struct GprVolume **out);

/**
 * Ground alignment, crop and depth normalization with default settings.
 * The input handle is left untouched.
 *
 * # Safety
 * `volume` must be a live handle; `out` must be writable.
 */
enum GprStatus gpr_preprocess(const struct GprVolume *volume, struct GprVolume **out);

/**
 * HOG descriptor of a row-major `rows × cols` patch (rows = time) under the
 * default 18×20 geometry.
 *
 * # Safety
 * `patch` must hold `rows·cols` doubles; `out` must hold `out_len` doubles.
 */
enum GprStatus gpr_hog_feature(const double *patch,
                               size_t rows,
                               size_t cols,
                               bool normalize,
                               double *out,
                               size_t out_len);

/**
 * `[cross-track ‖ down-track]` descriptor of the alarm at grid position
 * `(down, cross)` and time index `t`, averaged over `avg_halfcount`
 * parallel B-scans on each side.
 *
 * # Safety
 * `volume` must be a live handle; `out` must hold `out_len` doubles.
 */
enum GprStatus gpr_alarm_feature(const struct GprVolume *volume,
                                 size_t down,
                                 size_t cross,
                                 size_t t,
                                 bool normalize,
                                 size_t avg_halfcount,
                                 double *out,
                                 size_t out_len);

/**
 * Trains on `n_rows` row-major feature vectors of length `dim`; labels are
 * nonzero for threats.
 *
 * # Safety
 * `features` must hold `n_rows·dim` doubles, `labels` `n_rows` bytes;
 * `out` must be writable.
 */
enum GprStatus gpr_forest_train(const double *features,
                                const uint8_t *labels,
                                size_t n_rows,
                                size_t dim,
                                size_t n_trees,
                                size_t n_split_candidates,
                                size_t min_leaf,
                                uint64_t seed,
                                struct GprForest **out);

/**
 * Threat confidence in `[0, 1]` for one feature vector.
 *
 * # Safety
 * `forest` must be a live handle; `feature` must hold `dim` doubles;
 * `confidence` must be writable.
 */
enum GprStatus gpr_forest_predict(const struct GprForest *forest,
                                  const double *feature,
                                  size_t dim,
                                  double *confidence);

/**
 * # Safety
 * `forest` must be a live handle; `path` a NUL-terminated string.
 */
enum GprStatus gpr_forest_save(const struct GprForest *forest, const char *path);

/**
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum GprStatus gpr_forest_load(const char *path, struct GprForest **out);

/**
 * Releases a forest handle. Null is ignored.
 *
 * # Safety
 * `forest` must be null or a handle not yet freed.
 */
void gpr_forest_free(struct GprForest *forest);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GPRHOG_H */
