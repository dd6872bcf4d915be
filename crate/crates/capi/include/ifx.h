#ifndef IFX_H
#define IFX_H

/* Generated by cbindgen from ifx-capi; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result discipline for every fallible entry point.
typedef enum IfxStatus {
  IFX_STATUS_OK = 0,
  IFX_STATUS_NULL_ARGUMENT = 1,
  IFX_STATUS_INVALID_UTF8 = 2,
  IFX_STATUS_IO = 3,
  IFX_STATUS_PARSE = 4,
  IFX_STATUS_DOMAIN = 5,
  IFX_STATUS_BUFFER_TOO_SMALL = 6,
} IfxStatus;

// Opaque handle: the derived interference matrix.
typedef struct IfxInterference IfxInterference;

// Opaque handle: an N x N held-out loss matrix with masked-cell support.
typedef struct IfxLossMatrix IfxLossMatrix;

// Quartile statistics of one sample, IQR outlier rule bounds included.
typedef struct IfxIqrBounds {
  double q1;
  double q3;
  double iqr;
  double lower;
  double upper;
  size_t n_outliers;
} IfxIqrBounds;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *ifx_version(void);

// Thread-local message describing the most recent failure in this thread.
// Valid until the next failing call on the same thread.
const char *ifx_last_error(void);

// Read a loss matrix from its CSV form (labels in the first row/column,
// empty cells masked). On success writes a handle to `out`.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
enum IfxStatus ifx_loss_matrix_read_csv(const char *path, struct IfxLossMatrix **out);

// Release a loss matrix handle. Passing NULL is a no-op.
//
// # Safety
// `matrix` must be a pointer from `ifx_loss_matrix_read_csv`, not yet freed.
void ifx_loss_matrix_free(struct IfxLossMatrix *matrix);

// Number of languages (matrix side length).
//
// # Safety
// `matrix` must be a live handle.
size_t ifx_loss_matrix_len(const struct IfxLossMatrix *matrix);

// Derive the interference matrix `I(A,B) = (L(A,A) - L(A,B)) / L(A,A)` from
// a loss matrix. Fails with `DOMAIN` if a diagonal entry is missing or zero.
//
// # Safety
// `loss` must be a live handle and `out` a valid pointer.
enum IfxStatus ifx_interference_compute(const struct IfxLossMatrix *loss,
                                        struct IfxInterference **out);

// Release an interference matrix handle. Passing NULL is a no-op.
//
// # Safety
// `matrix` must be a pointer from `ifx_interference_compute`, not yet freed.
void ifx_interference_free(struct IfxInterference *matrix);

// Number of languages (matrix side length).
//
// # Safety
// `matrix` must be a live handle.
size_t ifx_interference_len(const struct IfxInterference *matrix);

// Fetch one interference cell. Masked or out-of-range cells return `DOMAIN`
// and leave `out_value` untouched.
//
// # Safety
// `matrix` must be a live handle and `out_value` a valid pointer.
enum IfxStatus ifx_interference_get(const struct IfxInterference *matrix,
                                    size_t row,
                                    size_t col,
                                    double *out_value);

// Copy the language code at `index` into `buf` as a NUL-terminated string.
//
// # Safety
// `buf` must point to at least `buf_len` writable bytes.
enum IfxStatus ifx_interference_label(const struct IfxInterference *matrix,
                                      size_t index,
                                      char *buf,
                                      size_t buf_len);

// Row averages of present off-diagonal entries, in label order. `buf_len`
// must be at least the matrix side length.
//
// # Safety
// `out_buf` must point to at least `buf_len` writable doubles.
enum IfxStatus ifx_interference_robustness(const struct IfxInterference *matrix,
                                           double *out_buf,
                                           size_t buf_len);

// Column averages of present off-diagonal entries, in label order.
//
// # Safety
// `out_buf` must point to at least `buf_len` writable doubles.
enum IfxStatus ifx_interference_friendliness(const struct IfxInterference *matrix,
                                             double *out_buf,
                                             size_t buf_len);

// Write the interference matrix in the pipeline's CSV form.
//
// # Safety
// `matrix` must be a live handle and `path` a NUL-terminated string.
enum IfxStatus ifx_interference_write_csv(const struct IfxInterference *matrix, const char *path);

// Type-7 quartiles and the 1.5 IQR outlier bounds of `values[0..n]`.
// Requires n >= 4 finite values.
//
// # Safety
// `values` must point to `n` readable doubles; `out` must be valid.
enum IfxStatus ifx_iqr_bounds(const double *values, size_t n, struct IfxIqrBounds *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* IFX_H */
