/* C interface for the seriesband library. Generated by cbindgen; do not edit. */

#ifndef SERIESBAND_H
#define SERIESBAND_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call.
 */
typedef enum SbStatus {
  SB_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  SB_STATUS_NULL_ARGUMENT = 1,
  /**
   * Invalid input or configuration.
   */
  SB_STATUS_INVALID_INPUT = 2,
  /**
   * Numerical failure inside the estimation.
   */
  SB_STATUS_NUMERICAL_FAILURE = 3,
  /**
   * A panic was caught at the boundary; state may be inconsistent.
   */
  SB_STATUS_PANIC = 4,
} SbStatus;

/**
 * Cross-validated fit over the default candidate set, ready to answer
 * pointwise and uniform interval queries.
 */
typedef struct SbAnalysis SbAnalysis;

/**
 * Owned regression sample.
 */
typedef struct SbDataset SbDataset;

/**
 * Pointwise answer: estimate, standard error, critical values, and both
 * interval kinds at one evaluation point.
 */
typedef struct SbCiResult {
  double g_hat;
  double se;
  /**
   * Search-robust critical value at this point.
   */
  double c_hat;
  /**
   * Monte Carlo standard error of c_hat.
   */
  double mc_se;
  double standard_lower;
  double standard_upper;
  double robust_lower;
  double robust_upper;
  /**
   * Cross-validated candidate size the intervals are centered on.
   */
  size_t k_cv;
} SbCiResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the most recent error message for this thread into `buf`
 * (truncated, always NUL-terminated when `cap > 0`) and returns the full
 * message length in bytes, excluding the NUL.
 */
size_t sb_last_error(char *buf, size_t cap);

/**
 * Static library version string.
 */
const char *sb_version(void);

/**
 * Builds a dataset from parallel arrays of length `n`. The arrays are
 * copied; the caller keeps ownership of its buffers.
 */
enum SbStatus sb_dataset_new(const double *x, const double *y, size_t n, struct SbDataset **out);

/**
 * Frees a dataset handle. Null is a no-op.
 */
void sb_dataset_free(struct SbDataset *dataset);

/**
 * Cross-validates quadratic-spline fits over the default candidate range
 * for the sample size and prepares interval queries at level `1 - alpha`
 * with `draws` critical-value simulations. The dataset is copied and may
 * be freed immediately afterwards.
 */
enum SbStatus sb_analysis_new(const struct SbDataset *dataset,
                              double alpha,
                              uint64_t draws,
                              uint64_t seed,
                              struct SbAnalysis **out);

/**
 * Frees an analysis handle. Null is a no-op.
 */
void sb_analysis_free(struct SbAnalysis *analysis);

/**
 * Pointwise intervals at `x`. The robust interval replaces the normal
 * quantile with a critical value simulated from the estimated
 * cross-candidate correlation, so it stays valid when the reported fit was
 * chosen by searching over the candidate set. Deterministic in
 * (analysis seed, x).
 */
enum SbStatus sb_ci_at(const struct SbAnalysis *analysis, double x, struct SbCiResult *out);

/**
 * Uniform confidence band on `grid_size` evenly spaced points of
 * [lo, hi], using a weighted bootstrap over the whole candidate set with
 * `bootstrap_draws` replications. Writes into four caller-owned arrays of
 * length `grid_size`; any of them may be null to skip that output.
 */
enum SbStatus sb_band(const struct SbAnalysis *analysis,
                      double lo,
                      double hi,
                      size_t grid_size,
                      uint64_t bootstrap_draws,
                      double *x_out,
                      double *center_out,
                      double *lower_out,
                      double *upper_out);

/**
 * Number of candidate sizes the analysis searched over.
 */
size_t sb_analysis_candidate_count(const struct SbAnalysis *analysis);

/**
 * Critical value for reporting any of `p` nested homoskedastic fits whose
 * standard errors are given. Writes c_hat and its Monte Carlo standard
 * error (either output may be null).
 */
enum SbStatus sb_critical_value_from_ses(const double *ses,
                                         size_t p,
                                         double alpha,
                                         uint64_t draws,
                                         uint64_t seed,
                                         double *c_out,
                                         double *mc_se_out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SERIESBAND_H */
