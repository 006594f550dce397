#ifndef KMONO_H
#define KMONO_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Status codes returned by every fallible function.
typedef enum KmStatus {
  KM_STATUS_OK = 0,
  KM_STATUS_INVALID_ARGUMENT = 1,
  KM_STATUS_NULL_POINTER = 2,
  // The density vanishes at an observation.
  KM_STATUS_SUPPORT_DEFICIENT = 3,
  // The solver stopped before its certificate met the tolerance. The fit
  // handle is still produced and must be freed.
  KM_STATUS_NOT_CONVERGED = 4,
  KM_STATUS_NUMERICAL = 5,
  KM_STATUS_IO = 6,
  // A bug inside the library; the message carries the panic text.
  KM_STATUS_INTERNAL = 7,
} KmStatus;

// Opaque fit handle.
typedef struct KmFit KmFit;

// Opaque sample handle.
typedef struct KmSample KmSample;

// Solver controls. Obtain defaults from [`km_fit_options_default`].
typedef struct KmFitOptions {
  double tol;
  size_t max_outer_iter;
  size_t max_inner_iter;
  double prune_weight;
  size_t grid_density;
  // Search ceiling as a multiple of the sample maximum; zero or negative
  // selects `2k`.
  double search_upper_factor;
} KmFitOptions;

// Fit diagnostics. Fields that only apply to the least squares estimator
// are NaN for maximum likelihood fits.
typedef struct KmDiagnostics {
  double objective;
  double max_gradient;
  double atom_residual;
  double mass;
  size_t iterations;
  bool converged;
  double min_fenchel_gap;
  double stationarity_residual;
  double scale;
} KmDiagnostics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message describing the most recent failure on this thread, or an empty
// string. The pointer stays valid until the next call on the thread.
const char *km_last_error_message(void);

// Copies `len` observations into a new sample.
//
// # Safety
// `values` must point to `len` readable doubles and `out` must be writable.
enum KmStatus km_sample_new(const double *values, size_t len, struct KmSample **out);

// # Safety
// `sample` must come from [`km_sample_new`] and not be used afterwards.
void km_sample_free(struct KmSample *sample);

// Number of observations, or zero for a null handle.
//
// # Safety
// `sample` must be null or a live handle.
size_t km_sample_len(const struct KmSample *sample);

struct KmFitOptions km_fit_options_default(void);

// Maximum likelihood fit. `options` may be null for the defaults.
//
// # Safety
// `sample` must be a live handle, `options` null or readable, `out`
// writable.
enum KmStatus km_fit_mle(const struct KmSample *sample,
                         uint32_t k,
                         const struct KmFitOptions *options,
                         struct KmFit **out);

// Least squares fit. `options` may be null for the defaults.
//
// # Safety
// As [`km_fit_mle`].
enum KmStatus km_fit_lse(const struct KmSample *sample,
                         uint32_t k,
                         const struct KmFitOptions *options,
                         struct KmFit **out);

// Loads a fit from fit-file JSON text.
//
// # Safety
// `json` must be a NUL-terminated string and `out` writable.
enum KmStatus km_fit_from_json(const char *json, struct KmFit **out);

// # Safety
// `fit` must come from this library and not be used afterwards.
void km_fit_free(struct KmFit *fit);

// Number of support points, or zero for a null handle.
//
// # Safety
// `fit` must be null or a live handle.
size_t km_fit_num_atoms(const struct KmFit *fit);

// Order `k` of the fit, or zero for a null handle.
//
// # Safety
// `fit` must be null or a live handle.
uint32_t km_fit_order(const struct KmFit *fit);

// Copies the support points and weights into caller buffers of length
// `capacity`, which must be at least [`km_fit_num_atoms`].
//
// # Safety
// `support` and `weights` must each point to `capacity` writable doubles.
enum KmStatus km_fit_atoms(const struct KmFit *fit,
                           double *support,
                           double *weights,
                           size_t capacity);

// Fitted density at `x >= 0`.
//
// # Safety
// `fit` must be a live handle and `out` writable.
enum KmStatus km_fit_eval(const struct KmFit *fit, double x, double *out);

// Fitted mixing distribution `F̂(t)` recovered through the inversion
// formula (the left limit at an atom).
//
// # Safety
// `fit` must be a live handle and `out` writable.
enum KmStatus km_fit_mixing_cdf(const struct KmFit *fit, double t, double *out);

// # Safety
// `fit` must be a live handle and `out` writable.
enum KmStatus km_fit_diagnostics(const struct KmFit *fit, struct KmDiagnostics *out);

// Serializes the fit as fit-file JSON. Release the string with
// [`km_string_free`].
//
// # Safety
// `fit` must be a live handle and `out` writable.
enum KmStatus km_fit_to_json(const struct KmFit *fit, char **out);

// # Safety
// `s` must come from [`km_fit_to_json`] and not be used afterwards.
void km_string_free(char *s);

// Kernel `k (a - x)_+^{k-1} / a^k`.
//
// # Safety
// `out` must be writable.
enum KmStatus km_eval_kernel(uint32_t k, double a, double x, double *out);

// Envelope `(1/x)(1 - 1/k)^{k-1}` of k-monotone densities.
//
// # Safety
// `out` must be writable.
enum KmStatus km_density_bound(uint32_t k, double x, double *out);

// Mixing distribution at `t` from `G(t)` and `g(t), ..., g^{(k-1)}(t)`
// (`num_derivatives` must equal `k`).
//
// # Safety
// `derivatives` must point to `num_derivatives` readable doubles and `out`
// must be writable.
enum KmStatus km_invert_to_mixing(uint32_t k,
                                  double t,
                                  double cdf,
                                  const double *derivatives,
                                  size_t num_derivatives,
                                  double *out);

// Constant `d_{k,j}` of the minimax lower bound.
//
// # Safety
// `out` must be writable.
enum KmStatus km_d_kj(uint32_t k, uint32_t j, double *out);

// Lower bound for estimating `g^{(j)}(x_0)` from `g_0(x_0)` and
// `g_0^{(k)}(x_0)`.
//
// # Safety
// `out` must be writable.
enum KmStatus km_minimax_bound(uint32_t k, uint32_t j, double g0, double gk, double *out);

// Lower bound for estimating the mixing distribution at `x_0`.
//
// # Safety
// `out` must be writable.
enum KmStatus km_mixing_bound(uint32_t k, double x0, double g0, double gk, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* KMONO_H */
