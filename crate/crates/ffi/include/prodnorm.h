#ifndef PRODNORM_H
#define PRODNORM_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes.
 */
typedef enum PnStatus {
  PN_STATUS_OK = 0,
  PN_STATUS_NULL_POINTER = 1,
  PN_STATUS_INVALID_PARAMETER = 2,
  PN_STATUS_NOT_CONVERGED = 3,
  PN_STATUS_SINGULAR_POINT = 4,
  PN_STATUS_CASE_MISMATCH = 5,
  PN_STATUS_OVERFLOW = 6,
  PN_STATUS_INVALID_ARGUMENT = 7,
  PN_STATUS_BUFFER_TOO_SMALL = 8,
  PN_STATUS_PANIC = 9,
} PnStatus;

/**
 * The seven Stein operators.
 */
typedef enum PnOperatorKind {
  PN_OPERATOR_KIND_A1 = 1,
  PN_OPERATOR_KIND_A2 = 2,
  PN_OPERATOR_KIND_A3 = 3,
  PN_OPERATOR_KIND_A4 = 4,
  PN_OPERATOR_KIND_A5 = 5,
  PN_OPERATOR_KIND_A6 = 6,
  PN_OPERATOR_KIND_A7 = 7,
} PnOperatorKind;

/**
 * Opaque handle to a Stein operator coefficient table.
 */
typedef struct PnOperator PnOperator;

/**
 * Opaque handle to validated parameters of the mean of `n` products.
 */
typedef struct PnParams PnParams;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Create a parameter handle. On success `*out` owns a new handle that must
 * be released with [`pn_params_free`].
 *
 * # Safety
 * `out` must be valid for writes.
 */
enum PnStatus pn_params_new(double mu_x,
                            double mu_y,
                            double sigma_x,
                            double sigma_y,
                            double rho,
                            uint64_t n,
                            struct PnParams **out);

/**
 * Release a parameter handle. Null is ignored.
 *
 * # Safety
 * `p` must be null or a handle from [`pn_params_new`] not yet freed.
 */
void pn_params_free(struct PnParams *p);

/**
 * Density at `x`: of `Z = XY` when `n = 1`, of the mean of `n` copies when
 * both means are zero. Writes the value and its natural log.
 *
 * # Safety
 * `p` must be a live handle; `value` and `log_value` valid for writes.
 */
enum PnStatus pn_pdf(const struct PnParams *p, double x, double *value, double *log_value);

/**
 * Distribution function of `Z = XY` (requires `n = 1`).
 *
 * # Safety
 * `p` must be a live handle; `out` valid for writes.
 */
enum PnStatus pn_cdf(const struct PnParams *p, double x, double *out);

/**
 * Raw moments `E[Zbar_n^k]`, `k = 0..=kmax`, into `out[0..=kmax]`.
 *
 * # Safety
 * `p` must be a live handle; `out` valid for `len` writes.
 */
enum PnStatus pn_raw_moments(const struct PnParams *p, size_t kmax, double *out, size_t len);

/**
 * Central moments, `k = 0..=kmax`, into `out[0..=kmax]`.
 *
 * # Safety
 * `p` must be a live handle; `out` valid for `len` writes.
 */
enum PnStatus pn_central_moments(const struct PnParams *p, size_t kmax, double *out, size_t len);

/**
 * Characteristic function of the mean of `n` copies at `t`.
 *
 * # Safety
 * `p` must be a live handle; `re` and `im` valid for writes.
 */
enum PnStatus pn_cf(const struct PnParams *p, double t, double *re, double *im);

/**
 * Build a Stein operator for the given parameters. Fails with
 * `PN_STATUS_CASE_MISMATCH` when the parameters are outside its case.
 *
 * # Safety
 * `p` must be a live handle; `out` valid for writes.
 */
enum PnStatus pn_operator_new(const struct PnParams *p,
                              enum PnOperatorKind kind,
                              struct PnOperator **out);

/**
 * Release an operator handle. Null is ignored.
 *
 * # Safety
 * `op` must be null or a handle from [`pn_operator_new`] not yet freed.
 */
void pn_operator_free(struct PnOperator *op);

/**
 * Differential order of the operator, or 0 for a null handle.
 *
 * # Safety
 * `op` must be null or a live handle.
 */
size_t pn_operator_order(const struct PnOperator *op);

/**
 * Coefficients `a_{0,0}, a_{1,0}, a_{0,1}, a_{1,1}, ...`; `out` must hold
 * `2 * (order + 1)` values.
 *
 * # Safety
 * `op` must be a live handle; `out` valid for `len` writes.
 */
enum PnStatus pn_operator_coefficients(const struct PnOperator *op, double *out, size_t len);

/**
 * `A f(x)` given `derivs = [f(x), f'(x), ..., f''''(x)]` (five values).
 *
 * # Safety
 * `op` must be a live handle; `derivs` valid for five reads; `out` valid
 * for writes.
 */
enum PnStatus pn_operator_apply(const struct PnOperator *op,
                                const double *derivs,
                                double x,
                                double *out);

/**
 * `K_nu(x)` for integer or half-integer `nu`; `e^x K_nu(x)` when `scaled`
 * is nonzero.
 *
 * # Safety
 * `out` must be valid for writes.
 */
enum PnStatus pn_bessel_k(double nu, double x, int scaled, double *out);

/**
 * Copy the calling thread's last error message into `buf` (NUL-terminated,
 * truncated to `len - 1` bytes). Returns the full message length in bytes,
 * excluding the terminator.
 *
 * # Safety
 * `buf` must be null or valid for `len` writes.
 */
size_t pn_last_error_message(char *buf, size_t len);

/**
 * Library version as a static NUL-terminated string.
 */
const char *pn_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PRODNORM_H */
