/* C interface to the mb determinant library.  Regenerated by the build. */

#ifndef MB_H
#define MB_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status code returned by every fallible entry point.
 */
typedef enum MbStatus {
  /**
   * Success.
   */
  MB_OK = 0,
  /**
   * Rejected input: malformed JSON, parameters outside the admissible
   * windows, mismatched handles.
   */
  MB_ERR_VALIDATION = 1,
  /**
   * The computation itself failed (point outside the support, precision
   * exhausted, rank-deficient system, internal panic).
   */
  MB_ERR_NUMERICAL = 2,
  /**
   * A required pointer argument was null.
   */
  MB_ERR_NULLPTR = 3,
  /**
   * A string argument was not valid UTF-8.
   */
  MB_ERR_UTF8 = 4,
} MbStatus;

/**
 * Solved equilibrium problem for one spec.  Create with
 * [`mb_equilibrium_solve`], release with [`mb_equilibrium_free`].
 */
typedef struct MbEquilibrium MbEquilibrium;

/**
 * Parsed ensemble description.  Create with [`mb_spec_parse_json`], release
 * with [`mb_spec_free`].
 */
typedef struct MbSpec MbSpec;

/**
 * Scalar summary of a solved equilibrium problem.
 */
typedef struct MbEquilibriumData {
  double a;
  double b;
  double theta;
  /**
   * Leading coefficient of the boundary map.
   */
  double c0;
  /**
   * Subleading coefficient of the boundary map.
   */
  double c1;
  /**
   * Lagrange multiplier of the equilibrium problem.
   */
  double ell;
} MbEquilibriumData;

/**
 * Closed-form expansion constants of `log D_n`: the linear term `c1` and
 * the complex log/constant terms, plus the largest `|Re beta|` among the
 * singular factors.
 */
typedef struct MbConstants {
  double c1;
  double c2_re;
  double c2_im;
  double c3_re;
  double c3_im;
  double h0_re;
  double h0_im;
  double beta_max;
} MbConstants;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message describing the most recent failure on this thread, as a
 * NUL-terminated UTF-8 string.  Empty until a call fails.
 *
 * The pointer stays valid until the next failing call on the same thread;
 * do not free it.
 */
const char *mb_last_error_message(void);

/**
 * Library version as a static NUL-terminated string; do not free.
 */
const char *mb_version(void);

/**
 * Parse a JSON ensemble description into a new handle.
 *
 * The JSON object needs `a`, `b`, `theta`; `W` (smooth-part coefficients),
 * `alpha_left`, `alpha_right` and `singularities` are optional.  Complex
 * numbers are `[re, im]` pairs.  Parameters are checked against the wide
 * admissibility window (`-1/2 < Re beta <= 1/2`); the equilibrium-side
 * routines re-check the narrow one.
 *
 * # Safety
 * `json` must point to a NUL-terminated string and `out` to writable
 * storage for one pointer.  On success `*out` owns the handle and must be
 * released with [`mb_spec_free`].
 */
enum MbStatus mb_spec_parse_json(const char *json, struct MbSpec **out);

/**
 * Release a handle from [`mb_spec_parse_json`].  Null is ignored.
 *
 * # Safety
 * `spec` must be null or an unreleased handle from this library.
 */
void mb_spec_free(struct MbSpec *spec);

/**
 * Solve the equilibrium problem for the spec's interval and `theta`.
 *
 * Fails with `MB_ERR_VALIDATION` when the spec sits outside the narrow
 * window required here (`|Re beta| < 1/4` for every singular factor).
 *
 * # Safety
 * `spec` must be a live handle and `out` writable storage for one pointer.
 * On success `*out` owns the handle and must be released with
 * [`mb_equilibrium_free`].
 */
enum MbStatus mb_equilibrium_solve(const struct MbSpec *spec, struct MbEquilibrium **out);

/**
 * Release a handle from [`mb_equilibrium_solve`].  Null is ignored.
 *
 * # Safety
 * `eq` must be null or an unreleased handle from this library.
 */
void mb_equilibrium_free(struct MbEquilibrium *eq);

/**
 * Equilibrium density at `x`; zero outside the open interval, an error on
 * non-finite `x`.
 *
 * # Safety
 * `eq` must be a live handle and `out` writable storage for one double.
 */
enum MbStatus mb_equilibrium_density(const struct MbEquilibrium *eq, double x, double *out);

/**
 * Mass of `[a, t]` under the equilibrium measure, clamped to `[0, 1]`
 * outside the support.
 *
 * # Safety
 * `eq` must be a live handle and `out` writable storage for one double.
 */
enum MbStatus mb_equilibrium_cdf(const struct MbEquilibrium *eq, double t, double *out);

/**
 * Logarithmic-potential pair `int log|t - x| + (1/theta) log|t^theta -
 * x^theta| dmu(x)` at `t > 0`.
 *
 * # Safety
 * `eq` must be a live handle and `out` writable storage for one double.
 */
enum MbStatus mb_equilibrium_log_potential(const struct MbEquilibrium *eq, double t, double *out);

/**
 * Copy the scalar summary of a solved equilibrium problem into `out`.
 *
 * # Safety
 * `eq` must be a live handle and `out` writable storage for one
 * [`MbEquilibriumData`].
 */
enum MbStatus mb_equilibrium_data(const struct MbEquilibrium *eq, struct MbEquilibriumData *out);

/**
 * Closed-form expansion constants of `log D_n` for `spec`, using the
 * already-solved equilibrium data in `eq`.
 *
 * Fails with `MB_ERR_VALIDATION` when `eq` was solved for a different
 * interval or `theta` than `spec` describes.
 *
 * # Safety
 * `spec` and `eq` must be live handles and `out` writable storage for one
 * [`MbConstants`].
 */
enum MbStatus mb_constants(const struct MbSpec *spec,
                           const struct MbEquilibrium *eq,
                           struct MbConstants *out);

/**
 * Exact log-determinant `log D_n` in extended precision: absolute value
 * into `out_log_abs`, phase in `(-pi, pi]` into `out_phase`.
 *
 * `precision_bits` of zero uses the default working precision (256 bits,
 * grown with `n`); otherwise it must lie in `[64, 1048576]`.
 *
 * # Safety
 * `spec` must be a live handle; `out_log_abs` and `out_phase` must be
 * writable storage for one double each.
 */
enum MbStatus mb_log_det(const struct MbSpec *spec,
                         size_t n,
                         size_t precision_bits,
                         double *out_log_abs,
                         double *out_phase);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MB_H */
