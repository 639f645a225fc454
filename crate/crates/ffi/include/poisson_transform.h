#ifndef POISSON_TRANSFORM_H
#define POISSON_TRANSFORM_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define PT_MODEL_TOY_CHAIN 0

#define PT_MODEL_TOY_IID 1

#define PT_METHOD_ML 0

#define PT_METHOD_POISSON 1

#define PT_METHOD_NCD_IID 2

#define PT_METHOD_NCD_PARAM 3

#define PT_METHOD_NCD_SEMI 4

#define PT_METHOD_NCD_IGNORE 5

/**
 * Status code returned by every fallible function.
 */
typedef enum PtStatus {
  PT_STATUS_OK = 0,
  PT_STATUS_NULL_POINTER = 1,
  PT_STATUS_INVALID_ARGUMENT = 2,
  PT_STATUS_OUTSIDE_DOMAIN = 3,
  PT_STATUS_NUMERICAL = 4,
  PT_STATUS_UNSUPPORTED = 5,
  PT_STATUS_PANIC = 6,
} PtStatus;

/**
 * Result of [`pt_fit`].
 */
typedef struct PtFit PtFit;

/**
 * Observed chain: an initial point and `len` observations.
 */
typedef struct PtSampleSet PtSampleSet;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies `len` observations into a new sample set.
 *
 * # Safety
 * `points` must point to `len` readable doubles (may be null when `len` is 0);
 * `out` must be a valid pointer.
 */
enum PtStatus pt_sample_set_new(double initial,
                                const double *points,
                                size_t len,
                                struct PtSampleSet **out);

/**
 * Simulates `n` steps of the toy model from `y0` with the given seed.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum PtStatus pt_sample_chain(uint32_t model,
                              double theta1,
                              double theta2,
                              size_t n,
                              double y0,
                              uint64_t seed,
                              struct PtSampleSet **out);

/**
 * Number of observations (0 for a null handle).
 *
 * # Safety
 * `set` must be null or a live handle.
 */
size_t pt_sample_set_len(const struct PtSampleSet *set);

/**
 * Observation `index` (0-based, excluding the initial point).
 *
 * # Safety
 * `set` must be null or a live handle; `out` must be valid.
 */
enum PtStatus pt_sample_set_get(const struct PtSampleSet *set, size_t index, double *out);

/**
 * The initial point `y0`.
 *
 * # Safety
 * `set` must be null or a live handle; `out` must be valid.
 */
enum PtStatus pt_sample_set_initial(const struct PtSampleSet *set, double *out);

/**
 * # Safety
 * `set` must be null or a handle not yet freed.
 */
void pt_sample_set_free(struct PtSampleSet *set);

/**
 * Exact log-likelihood of the sample under the toy model.
 *
 * # Safety
 * `set` must be a live handle; `out` must be valid.
 */
enum PtStatus pt_exact_loglik(uint32_t model,
                              double theta1,
                              double theta2,
                              const struct PtSampleSet *set,
                              double *out);

/**
 * Fits `set` with one of the `PT_METHOD_*` estimators.
 *
 * `k` is the reference-to-data ratio of the logistic variants (ignored
 * otherwise). A negative `lambda` selects the penalty by 5-fold
 * cross-validation for `PT_METHOD_NCD_SEMI` and uses the default for
 * `PT_METHOD_POISSON` on the chain model. `seed` drives reference draws.
 *
 * # Safety
 * `set` must be a live handle; `out` must be valid.
 */
enum PtStatus pt_fit(uint32_t model,
                     uint32_t method,
                     const struct PtSampleSet *set,
                     size_t k,
                     double lambda,
                     uint64_t seed,
                     struct PtFit **out);

/**
 * Writes the two parameter estimates to `out[0..2]`.
 *
 * # Safety
 * `fit` must be a live handle; `out` must hold two doubles.
 */
enum PtStatus pt_fit_theta(const struct PtFit *fit, double *out);

/**
 * Standard errors to `out[0..2]`; `Unsupported` when the method gives none.
 *
 * # Safety
 * `fit` must be a live handle; `out` must hold two doubles.
 */
enum PtStatus pt_fit_standard_errors(const struct PtFit *fit, double *out);

/**
 * 1 if the fitter converged, 0 otherwise (or for a null handle).
 *
 * # Safety
 * `fit` must be null or a live handle.
 */
int32_t pt_fit_converged(const struct PtFit *fit);

/**
 * Maximised objective value.
 *
 * # Safety
 * `fit` must be a live handle; `out` must be valid.
 */
enum PtStatus pt_fit_objective(const struct PtFit *fit, double *out);

/**
 * # Safety
 * `fit` must be null or a handle not yet freed.
 */
void pt_fit_free(struct PtFit *fit);

/**
 * Message of the last failed call on this thread (empty after a success).
 * The pointer stays valid until the next call on the same thread.
 */
const char *pt_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *pt_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* POISSON_TRANSFORM_H */
