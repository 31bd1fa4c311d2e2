#ifndef STOCHINV_H
#define STOCHINV_H

/* Generated by cbindgen from src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every fallible entry point.
enum SiStatus
#if defined(__cplusplus) || __STDC_VERSION__ >= 202311L
  : int32_t
#endif // defined(__cplusplus) || __STDC_VERSION__ >= 202311L
 {
  SI_STATUS_OK = 0,
  SI_STATUS_NULL_POINTER = 1,
  SI_STATUS_INVALID_UTF8 = 2,
  SI_STATUS_INVALID_SPEC = 3,
  SI_STATUS_EVALUATION = 4,
  SI_STATUS_DIMENSION = 5,
  SI_STATUS_PANIC = 6,
};
#ifndef __cplusplus
#if __STDC_VERSION__ >= 202311L
typedef enum SiStatus SiStatus;
#else
typedef int32_t SiStatus;
#endif // __STDC_VERSION__ >= 202311L
#endif // __cplusplus

// Opaque model handle.
typedef struct SiModel SiModel;

// Outcome of the pointwise test for one normal ray.
typedef struct SiPointVerdict {
  double kernel_residual;
  double corrected_drift_margin;
  double kernel_tolerance;
  double drift_tolerance;
  bool pass;
  bool rank_warning;
  bool routes_agree;
} SiPointVerdict;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Parses a JSON model spec. On success `*out` owns a handle to release with
// `si_model_free`.
//
// # Safety
// `json` must be a nul-terminated string and `out` a valid pointer.
SiStatus si_model_from_json(const char *json, struct SiModel **out);

// Releases a handle; null is ignored.
//
// # Safety
// `model` must come from `si_model_from_json` and not be used afterwards.
void si_model_free(struct SiModel *model);

// State dimension, or 0 for a null handle.
//
// # Safety
// `model` must be null or a live handle.
size_t si_model_dim(const struct SiModel *model);

// Writes `1/2 sum_j DC^j (C C^+)^j` at `x` into `out` (length `len`).
//
// # Safety
// `x` and `out` must point to `len` doubles.
SiStatus si_drift_correction(const struct SiModel *model, const double *x, size_t len, double *out);

// Pointwise test at `x` for the normal ray `u`, both of length `len`.
//
// # Safety
// `x` and `u` must point to `len` doubles and `out` to a verdict.
SiStatus si_check_point(const struct SiModel *model,
                        const double *x,
                        const double *u,
                        size_t len,
                        struct SiPointVerdict *out);

// Samples the domain boundary in the window `[lo, hi]^d` and writes the
// JSON report to `*out_json`, to be released with `si_string_free`.
// `*pass` receives the overall verdict.
//
// # Safety
// `out_json` and `pass` must be valid pointers.
SiStatus si_check_domain(const struct SiModel *model,
                         size_t n_samples,
                         double lo,
                         double hi,
                         bool *pass,
                         char **out_json);

// Moore-Penrose pseudoinverse of the symmetric `d x d` matrix `a`
// (column-major) into `out`.
//
// # Safety
// `a` and `out` must point to `d * d` doubles.
SiStatus si_sym_pinv(const double *a, size_t d, double rank_tol, double *out);

// Releases a string returned by this library; null is ignored.
//
// # Safety
// `s` must come from this library and not be used afterwards.
void si_string_free(char *s);

// Message of the last failure on this thread, or null. Valid until the
// next call into the library on the same thread.
const char *si_last_error_message(void);

// Library version as a static string.
const char *si_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* STOCHINV_H */
