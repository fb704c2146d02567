#ifndef RFS_ENERGY_H
#define RFS_ENERGY_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum {
  RFS_STATUS_OK = 0,
  RFS_STATUS_NULL_POINTER = 1,
  RFS_STATUS_INVALID_ARGUMENT = 2,
  RFS_STATUS_IO = 3,
  RFS_STATUS_FORMAT = 4,
  RFS_STATUS_DATA = 5,
  RFS_STATUS_VALIDATION = 6,
  RFS_STATUS_ESTIMATION = 7,
  RFS_STATUS_MODEL = 8,
  RFS_STATUS_SCORING = 9,
  RFS_STATUS_EVALUATION = 10,
  RFS_STATUS_PANIC = 11,
} RfsStatus;

/**
 * Score selector for [`rfs_score`].
 */
typedef enum {
  RFS_METHOD_ENERGY = 0,
  RFS_METHOD_AS = 1,
  RFS_METHOD_LOGLIK = 2,
} RfsMethod;

/**
 * Opaque fitted model.
 */
typedef struct RfsModel RfsModel;

/**
 * Opaque descriptor set.
 */
typedef struct RfsSet RfsSet;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null if none. Valid
 * until the next failing call on the same thread.
 */
const char *rfs_last_error_message(void);

/**
 * Reads a PPF file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
RfsStatus rfs_set_read(const char *path, RfsSet **out);

/**
 * Builds a set from `n` row-major descriptors of dimension `dim`. `data` may
 * be null when `n` is 0.
 *
 * # Safety
 * `data` must point to `n * dim` floats; `out` must be writable.
 */
RfsStatus rfs_set_from_descriptors(size_t dim, const float *data, size_t n, RfsSet **out);

/**
 * # Safety
 * `set` must be a live handle; `out` must be writable.
 */
RfsStatus rfs_set_len(const RfsSet *set, size_t *out);

/**
 * # Safety
 * `set` must be a live handle; `out` must be writable.
 */
RfsStatus rfs_set_dim(const RfsSet *set, size_t *out);

/**
 * # Safety
 * `set` must be a live handle; `path` must be a NUL-terminated string.
 */
RfsStatus rfs_set_write(const RfsSet *set, const char *path);

/**
 * Releases a set. Null is ignored.
 *
 * # Safety
 * `set` must be null or a handle not yet freed.
 */
void rfs_set_free(RfsSet *set);

/**
 * Fits a model from `n_sets` training sets using `jobs` worker threads.
 *
 * # Safety
 * `sets` must point to `n_sets` live handles; `out` must be writable.
 */
RfsStatus rfs_model_fit(const RfsSet *const *sets, size_t n_sets, size_t jobs, RfsModel **out);

/**
 * Loads a model JSON file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
RfsStatus rfs_model_load(const char *path, RfsModel **out);

/**
 * # Safety
 * `model` must be a live handle; `path` must be a NUL-terminated string.
 */
RfsStatus rfs_model_save(const RfsModel *model, const char *path);

/**
 * # Safety
 * `model` must be a live handle; `out` must be writable.
 */
RfsStatus rfs_model_dim(const RfsModel *model, size_t *out);

/**
 * Poisson intensity ρ.
 *
 * # Safety
 * `model` must be a live handle; `out` must be writable.
 */
RfsStatus rfs_model_rho(const RfsModel *model, double *out);

/**
 * Shrinkage intensity α.
 *
 * # Safety
 * `model` must be a live handle; `out` must be writable.
 */
RfsStatus rfs_model_alpha(const RfsModel *model, double *out);

/**
 * Releases a model. Null is ignored.
 *
 * # Safety
 * `model` must be null or a handle not yet freed.
 */
void rfs_model_free(RfsModel *model);

/**
 * Squared Mahalanobis distance of one `dim`-vector.
 *
 * # Safety
 * `x` must point to `dim` floats; `out` must be writable.
 */
RfsStatus rfs_mahalanobis_sq(const RfsModel *model, const float *x, size_t dim, double *out);

/**
 * Raw score of a set. `method` is an [`RfsMethod`] value; `top_k_percent`
 * applies to the energy, `as_squared` to AS. The log-likelihood is returned
 * unnegated.
 *
 * # Safety
 * Handles must be live; `out` must be writable.
 */
RfsStatus rfs_score(const RfsModel *model,
                    const RfsSet *set,
                    uint32_t method,
                    double top_k_percent,
                    bool as_squared,
                    double *out);

/**
 * Mann-Whitney AUC of `n` scores; `labels[i]` is 0 (normal) or 1
 * (anomalous), higher scores mean more anomalous.
 *
 * # Safety
 * `scores` and `labels` must point to `n` elements; `out` must be writable.
 */
RfsStatus rfs_auc(const double *scores, const uint8_t *labels, size_t n, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RFS_ENERGY_H */
