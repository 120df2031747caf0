#ifndef TWOSCALE_H
#define TWOSCALE_H

/* Generated by cbindgen from twoscale-ffi; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes of every fallible call.
 */
typedef enum TsStatus {
  TS_STATUS_OK = 0,
  TS_STATUS_INVALID_ARGUMENT = 1,
  TS_STATUS_NUMERICAL_ERROR = 2,
  TS_STATUS_PANIC = 3,
} TsStatus;

/**
 * Opaque coarse-graining handle for a fixed `(n, m)` scheme.
 */
typedef struct TsCoarseGrain TsCoarseGrain;

/**
 * Opaque coarse-grained potential table.
 */
typedef struct TsPsiKTable TsPsiKTable;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Version string of the library; static storage, do not free.
 */
const char *ts_version(void);

/**
 * Message of the most recent error on this thread; valid until the next
 * failing call on the same thread. Do not free.
 */
const char *ts_last_error_message(void);

/**
 * `out = A x` (scaled discrete Laplacian), periodic length-`n` vectors.
 *
 * # Safety
 * `x` and `out` must point to `n` readable/writable doubles.
 */
enum TsStatus ts_apply_a(uintptr_t n, const double *x, double *out);

/**
 * `out = J x` (scaled discrete derivative).
 *
 * # Safety
 * `x` and `out` must point to `n` readable/writable doubles.
 */
enum TsStatus ts_apply_j(uintptr_t n, const double *x, double *out);

/**
 * `out = A^{-1} x` on the mean-zero subspace; `x` must be mean-zero.
 *
 * # Safety
 * `x` and `out` must point to `n` readable/writable doubles.
 */
enum TsStatus ts_solve_a_inv(uintptr_t n, const double *x, double *out);

/**
 * Penalized quadratic form `(1/n) <A^{-1} x, x>` of a mean-zero vector.
 *
 * # Safety
 * `x` must point to `n` doubles, `out` to one writable double.
 */
enum TsStatus ts_quad_form_a_inv(uintptr_t n, const double *x, double *out);

/**
 * Squared `H^{-1}` norm of a mean-zero step function on mesh `1/len`.
 *
 * # Safety
 * `w` must point to `len` doubles, `out` to one writable double.
 */
enum TsStatus ts_h_minus1_sq(uintptr_t len, const double *w, double *out);

/**
 * Creates a coarse-graining scheme with `n = k * m` sites and `m` blocks.
 * Returns null on failure (see [`ts_last_error_message`]).
 */
struct TsCoarseGrain *ts_coarse_grain_new(uintptr_t n, uintptr_t m);

/**
 * Releases a coarse-graining handle. Null is ignored.
 *
 * # Safety
 * `handle` must be null or a pointer from [`ts_coarse_grain_new`], not yet
 * freed.
 */
void ts_coarse_grain_free(struct TsCoarseGrain *handle);

/**
 * Block averages: `y[m] = P x[n]`.
 *
 * # Safety
 * `handle` must be a live handle; `x` and `y` must point to `n` and `m`
 * doubles respectively.
 */
enum TsStatus ts_project(const struct TsCoarseGrain *handle, const double *x, double *y);

/**
 * Block-constant lift: `x[n] = N P^t y[m]`.
 *
 * # Safety
 * `handle` must be a live handle; `y` and `x` must point to `m` and `n`
 * doubles respectively.
 */
enum TsStatus ts_lift(const struct TsCoarseGrain *handle, const double *y, double *x);

/**
 * Builds the `psi_K` table for the potential `x^2/2 + a cos(b x)` and
 * block size `k` on the working interval `[-m_max, m_max]` with mesh
 * `1/subdiv`. Returns null on failure.
 */
struct TsPsiKTable *ts_psi_k_build(double a, double b, uintptr_t k, double m_max, uint32_t subdiv);

/**
 * Releases a table handle. Null is ignored.
 *
 * # Safety
 * `handle` must be null or a pointer from [`ts_psi_k_build`], not yet
 * freed.
 */
void ts_psi_k_free(struct TsPsiKTable *handle);

/**
 * Evaluates `psi_K, psi_K', psi_K''` at `m`; any output pointer may be null
 * to skip that value.
 *
 * # Safety
 * `handle` must be a live handle; non-null outputs must be writable.
 */
enum TsStatus ts_psi_k_eval(const struct TsPsiKTable *handle,
                            double m,
                            double *psi,
                            double *dpsi,
                            double *ddpsi);

/**
 * Evaluates the Cramer transform `phi, phi', phi''` of the potential
 * `x^2/2 + a cos(b x)` at `m` (direct solve, no table).
 *
 * # Safety
 * Non-null outputs must be writable doubles.
 */
enum TsStatus ts_cramer_eval(double a,
                             double b,
                             double m,
                             double *phi,
                             double *dphi,
                             double *ddphi);

/**
 * Solves the limiting PDE `d zeta/dt = (phi'(zeta))'' + (phi'(zeta))'`
 * from `zeta0[mesh]` to `t_end`, writing the final profile into
 * `out[mesh]`. Profile values must stay within `[-m_max, m_max]`.
 *
 * # Safety
 * `zeta0` and `out` must point to `mesh` readable/writable doubles.
 */
enum TsStatus ts_solve_pde(double a,
                           double b,
                           uintptr_t mesh,
                           const double *zeta0,
                           double t_end,
                           double m_max,
                           double *out);

/**
 * Integrates the macroscopic block ODE from `eta0[m]` to `t_end`, writing
 * the final profile into `out[m]`. The scheme and table fix the geometry.
 *
 * # Safety
 * Both handles must be live; `eta0` and `out` must point to `m` doubles.
 */
enum TsStatus ts_integrate_macro(const struct TsCoarseGrain *cg,
                                 const struct TsPsiKTable *table,
                                 const double *eta0,
                                 double t_end,
                                 double *out);

/**
 * Runs the operator and coarse-graining identity checks for a scheme;
 * writes 1 into `out_pass` when every identity holds.
 *
 * # Safety
 * `out_pass` must be a writable i32.
 */
enum TsStatus ts_verify(uintptr_t n, uintptr_t m, double a, double b, int32_t *out_pass);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TWOSCALE_H */
