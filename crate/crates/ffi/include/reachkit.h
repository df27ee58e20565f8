#ifndef REACHKIT_H
#define REACHKIT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible function.
 */
typedef enum RkStatus {
  RK_STATUS_OK = 0,
  RK_STATUS_NULL_POINTER = 1,
  RK_STATUS_INVALID_UTF8 = 2,
  RK_STATUS_SCHEMA = 3,
  RK_STATUS_DIMENSION = 4,
  RK_STATUS_INVALID_ARGUMENT = 5,
  RK_STATUS_NUMERICAL = 6,
  RK_STATUS_PANIC = 7,
} RkStatus;

typedef enum RkMethod {
  RK_METHOD_DIRECT_SEARCH = 0,
  RK_METHOD_SMOOTH_LOCAL = 1,
} RkMethod;

/**
 * Opaque reach-avoid query with the solver and quadrature settings of its
 * problem file.
 */
typedef struct RkQuery RkQuery;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *rk_version(void);

/**
 * Message of the last failed call on this thread; empty after a success.
 * Valid until the next call on the same thread.
 */
const char *rk_last_error(void);

/**
 * Parses a problem file and stores a new handle in `*out`. The first `x0`
 * of the file is used.
 *
 * # Safety
 * `json` must be a NUL-terminated string and `out` a valid pointer.
 */
enum RkStatus rk_query_from_json(const char *json, struct RkQuery **out);

/**
 * Releases a handle. Null is ignored.
 *
 * # Safety
 * `q` must come from [`rk_query_from_json`] and not be used afterwards.
 */
void rk_query_free(struct RkQuery *q);

/**
 * State dimension, input dimension and horizon. Any output pointer may be null.
 *
 * # Safety
 * `q` must be a live handle; non-null outputs must be valid.
 */
enum RkStatus rk_query_dims(const struct RkQuery *q,
                            size_t *state_dim,
                            size_t *input_dim,
                            size_t *horizon);

/**
 * Replaces the initial state.
 *
 * # Safety
 * `q` must be a live handle and `x0` point to `len` doubles.
 */
enum RkStatus rk_query_set_x0(struct RkQuery *q, const double *x0, size_t len);

/**
 * Quadrature value of the reach-avoid probability for the stacked input
 * sequence `u` (length `m * N`). `eps <= 0` keeps the problem's accuracy.
 *
 * # Safety
 * `q` must be a live handle, `u` point to `u_len` doubles, outputs valid.
 */
enum RkStatus rk_reach_probability(const struct RkQuery *q,
                                   const double *u,
                                   size_t u_len,
                                   double eps,
                                   uint64_t seed,
                                   double *p_out,
                                   double *err_out);

/**
 * Monte-Carlo estimate and 95% half-width at `u`.
 *
 * # Safety
 * As for [`rk_reach_probability`].
 */
enum RkStatus rk_mc_probability(const struct RkQuery *q,
                                const double *u,
                                size_t u_len,
                                uint64_t n_samples,
                                uint64_t seed,
                                double *p_out,
                                double *half_width_out);

/**
 * Maximizes the probability over input sequences. `u_out` receives the
 * optimizer and must hold `m * N` doubles.
 *
 * # Safety
 * `q` must be a live handle, `u_out` point to `u_len` writable doubles,
 * other outputs valid.
 */
enum RkStatus rk_solve(const struct RkQuery *q,
                       enum RkMethod method,
                       double eps,
                       uint64_t seed,
                       double *u_out,
                       size_t u_len,
                       double *p_out,
                       double *err_out);

/**
 * `P(lower <= X <= upper)` for `X ~ N(mean, cov)` with `cov` row-major
 * `dim x dim`. Infinite bounds are allowed.
 *
 * # Safety
 * `mean`, `lower`, `upper` must point to `dim` doubles, `cov` to `dim*dim`.
 */
enum RkStatus rk_mvn_box_probability(size_t dim,
                                     const double *mean,
                                     const double *cov,
                                     const double *lower,
                                     const double *upper,
                                     double eps,
                                     uint64_t seed,
                                     double *p_out,
                                     double *err_out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* REACHKIT_H */
