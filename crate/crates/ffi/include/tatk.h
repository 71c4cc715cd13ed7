#ifndef TATK_H
#define TATK_H

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

/**
 * Result code of every fallible call.
 */
typedef enum TatkStatus {
  TATK_STATUS_OK = 0,
  TATK_STATUS_NULL_POINTER = 1,
  TATK_STATUS_INVALID_ARGUMENT = 2,
  TATK_STATUS_SHAPE_MISMATCH = 3,
  TATK_STATUS_NON_FINITE = 4,
  TATK_STATUS_IO = 5,
  TATK_STATUS_FORMAT = 6,
  TATK_STATUS_UNDEFINED = 7,
  TATK_STATUS_DIVERGED = 8,
  TATK_STATUS_BUFFER_TOO_SMALL = 9,
  TATK_STATUS_PANIC = 10,
} TatkStatus;

/**
 * Opaque model handle.
 */
typedef struct TatkModel TatkModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *tatk_last_error(void);

/**
 * Loads a model written by `tatk train`. Free it with [`tatk_model_free`].
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum TatkStatus tatk_model_load(const char *path, struct TatkModel **out);

/**
 * Releases a handle from [`tatk_model_load`]; null is ignored.
 *
 * # Safety
 * `model` must come from [`tatk_model_load`] and not be used afterwards.
 */
void tatk_model_free(struct TatkModel *model);

/**
 * Number of input features, or 0 for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t tatk_model_n_features(const struct TatkModel *model);

/**
 * Number of outputs, or 0 for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t tatk_model_n_outputs(const struct TatkModel *model);

/**
 * Raw outputs `[batch, n_outputs]` for inputs `[batch, seq_len, n_features]`.
 *
 * # Safety
 * `x` must hold `batch * seq_len * n_features` values and `out` `out_len`.
 */
enum TatkStatus tatk_model_predict(const struct TatkModel *model,
                                   const double *x,
                                   size_t batch,
                                   size_t seq_len,
                                   size_t n_features,
                                   double *out,
                                   size_t out_len);

/**
 * Integrated gradients `[seq_len, n_features]` of one series. A null
 * `baseline` means zeros; a negative `target` explains the prediction.
 *
 * # Safety
 * `x` and a non-null `baseline` must hold `seq_len * n_features` values,
 * `out` must hold `out_len`.
 */
enum TatkStatus tatk_integrated_gradients(const struct TatkModel *model,
                                          const double *x,
                                          const double *baseline,
                                          size_t seq_len,
                                          size_t n_features,
                                          size_t steps,
                                          int64_t target,
                                          double *out,
                                          size_t out_len);

/**
 * Temporal integrated gradients `[seq_len, n_features]`: row `t` explains the
 * prediction on the first `t + 1` steps. The explained output of each step
 * goes to `targets_out` when it is non-null (`seq_len` entries).
 *
 * # Safety
 * As [`tatk_integrated_gradients`]; `targets_out` must be null or hold `seq_len`.
 */
enum TatkStatus tatk_temporal_integrated_gradients(const struct TatkModel *model,
                                                   const double *x,
                                                   const double *baseline,
                                                   size_t seq_len,
                                                   size_t n_features,
                                                   size_t steps,
                                                   bool normalize,
                                                   int64_t target,
                                                   double *out,
                                                   size_t out_len,
                                                   size_t *targets_out);

/**
 * Runs any attribution method described by a JSON object such as
 * `{"method": "kernel_shap", "n_samples": 200}` on one series.
 *
 * `background` holds `n_background` series of the same shape and may be
 * null when `n_background` is 0. The result has `seq_len * n_features`
 * values, or `seq_len * seq_len * n_features` for temporal output; the
 * count is stored in `written` even when the buffer is too small.
 *
 * # Safety
 * Pointers must be valid for the stated lengths; `method_json` NUL-terminated.
 */
enum TatkStatus tatk_attribute(const struct TatkModel *model,
                               const char *method_json,
                               const double *x,
                               size_t seq_len,
                               size_t n_features,
                               const double *background,
                               size_t n_background,
                               int64_t target,
                               uint64_t seed,
                               double *out,
                               size_t out_len,
                               size_t *written);

/**
 * Conditional intensity of type `k` at time `t` of a `dims`-variate Hawkes
 * process with exponential kernels. `alpha` and `beta` are `dims x dims`
 * row-major, entry `[k][n]` being the effect of type `n` on type `k`.
 *
 * # Safety
 * `mu` holds `dims` values, `alpha` and `beta` `dims * dims`, `times` and
 * `kinds` `n_events`, `out` one.
 */
enum TatkStatus tatk_hawkes_intensity(const double *mu,
                                      const double *alpha,
                                      const double *beta,
                                      size_t dims,
                                      const double *times,
                                      const size_t *kinds,
                                      size_t n_events,
                                      double t,
                                      size_t k,
                                      double *out);

/**
 * Local outlier factor of the query `x` (`dim` values) against `n_points`
 * reference points, with `k` neighbours. `clamped` may be null.
 *
 * # Safety
 * `x` holds `dim` values, `points` `n_points * dim`, `out` one.
 */
enum TatkStatus tatk_lof_score(const double *x,
                               const double *points,
                               size_t n_points,
                               size_t dim,
                               size_t k,
                               double *out,
                               bool *clamped);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TATK_H */
