#ifndef COLORCENTER_H
#define COLORCENTER_H

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

typedef enum CcStatus {
  CC_STATUS_OK = 0,
  CC_STATUS_NULL_POINTER = 1,
  CC_STATUS_INVALID_STRING = 2,
  CC_STATUS_IO = 3,
  CC_STATUS_PARSE = 4,
  CC_STATUS_VALIDATION = 5,
  CC_STATUS_DOMAIN = 6,
  CC_STATUS_INSUFFICIENT_DATA = 7,
  CC_STATUS_NO_DATA = 8,
  CC_STATUS_LINE_NOT_FOUND = 9,
  CC_STATUS_MODEL_INCONSISTENCY = 10,
  CC_STATUS_SUPERRADIANT = 11,
  CC_STATUS_CONFIGURATION = 12,
  CC_STATUS_AGGREGATION = 13,
  CC_STATUS_FIT_FAILED = 14,
  CC_STATUS_OUT_OF_RANGE = 15,
  CC_STATUS_PANIC = 16,
} CcStatus;

typedef enum CcDecayKind {
  CC_DECAY_KIND_AUTO = 0,
  CC_DECAY_KIND_SINGLE = 1,
  CC_DECAY_KIND_DOUBLE = 2,
} CcDecayKind;

// A decay fit result.
typedef struct CcDecayFit CcDecayFit;

// A decay trace.
typedef struct CcTrace CcTrace;

typedef struct CcBudget {
  double s_th;
  double dw_th;
  double dw_exp;
  double tau_rad_ns;
  double tau_tot_ns;
  // NaN for a purely radiative decay.
  double tau_nr_ns;
  double eta_rad;
  double eta_tot;
} CcBudget;

typedef struct CcCavityParams {
  double wavelength_nm;
  double finesse;
  // NaN when `waist_um` is given.
  double roc_mm;
  double l_vac_um;
  double l_sic_um;
  double n_sic;
  // NaN to derive the waist from `roc_mm`.
  double waist_um;
  double eta_tot;
  double extraction;
} CcCavityParams;

typedef struct CcCooperativity {
  double waist_um;
  double sigma_e_m2;
  double sigma_c_m2;
  double fill_factor;
  double cooperativity;
  double eta_cav;
  double eta_out;
} CcCooperativity;

// Trace metadata; NaN marks a field as absent.
typedef struct CcTraceMeta {
  double pulse_time_ns;
  double band_center_nm;
  double band_width_nm;
  double temperature_k;
} CcTraceMeta;

typedef struct CcDecaySummary {
  // `Single` or `Double`.
  enum CcDecayKind kind;
  size_t n_components;
  double background;
  double background_sigma3;
  double reduced_chi2;
  double aic;
  // NaN unless both models were fitted.
  double delta_aic;
  double window_start_ns;
  double window_end_ns;
  bool converged;
} CcDecaySummary;

typedef struct CcExpComponent {
  double amplitude;
  double amplitude_sigma3;
  double tau_ns;
  double tau_sigma3;
} CcExpComponent;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null. Valid until the
// next call into the library on the same thread.
const char *cc_last_error(void);

// Library version as a static NUL-terminated string.
const char *cc_version(void);

// Photon energy in eV of light at `wavelength_nm`.
//
// # Safety
// `out` must be null or point to writable memory.
enum CcStatus cc_wavelength_to_energy_ev(double wavelength_nm, double *out);

// Lifetime in ns at `temperature_k` under thermally activated
// non-radiative decay.
//
// # Safety
// `out` must be null or point to writable memory.
enum CcStatus cc_thermal_lifetime(double tau_ns,
                                  double tau_p_ns,
                                  double e_p_mev,
                                  double temperature_k,
                                  double *out);

// Debye-Waller factor `exp(-S)` for a Huang-Rhys factor `S`.
//
// # Safety
// `out` must be null or point to writable memory.
enum CcStatus cc_debye_waller(double huang_rhys, double *out);

// Radiative and total efficiency from lifetimes, Debye-Waller and
// Huang-Rhys factors.
//
// # Safety
// `out` must be null or point to writable memory.
enum CcStatus cc_budget(double tau_rad_ns,
                        double tau_tot_ns,
                        double dw_exp,
                        double s_th,
                        struct CcBudget *out);

// Fills `out` with the reference microcavity parameters.
//
// # Safety
// `out` must be null or point to writable memory.
enum CcStatus cc_cavity_reference(struct CcCavityParams *out);

// Cooperativity and cavity efficiencies.
//
// # Safety
// `params` must be null or point to a valid struct; `out` must be null or
// point to writable memory.
enum CcStatus cc_cavity(const struct CcCavityParams *params, struct CcCooperativity *out);

// Phonon-sideband intensity per meV at `n` phonon energies.
//
// # Safety
// `delta_mev` and `out` must point to `n` readable / writable doubles.
enum CcStatus cc_psb_eval(double i0,
                          double sigma_mev,
                          double delta0_mev,
                          uint32_t j_max,
                          const double *delta_mev,
                          size_t n,
                          double *out);

// Loads a two-column (time_ns, counts) trace. Metadata comes from the
// `<path>.meta.toml` sidecar when present; non-NaN fields of `meta`
// override it. `meta` may be null.
//
// # Safety
// `path` must be null or a NUL-terminated string; `meta` must be null or
// point to a valid struct; `out` must be null or point to writable memory.
enum CcStatus cc_trace_load(const char *path, const struct CcTraceMeta *meta, struct CcTrace **out);

// Builds a trace from `n` time/count pairs. Every field of `meta` is
// required.
//
// # Safety
// `times_ns` and `counts` must point to `n` doubles; `meta` must be null or
// point to a valid struct; `out` must be null or point to writable memory.
enum CcStatus cc_trace_from_arrays(const double *times_ns,
                                   const double *counts,
                                   size_t n,
                                   const struct CcTraceMeta *meta,
                                   struct CcTrace **out);

// Number of bins, or 0 for a null handle.
//
// # Safety
// `trace` must be null or a live handle.
size_t cc_trace_len(const struct CcTrace *trace);

// # Safety
// `trace` must be null or a handle not yet freed.
void cc_trace_free(struct CcTrace *trace);

// Fits a single or double exponential to `trace`.
//
// # Safety
// `trace` must be null or a live handle; `out` must be null or point to
// writable memory.
enum CcStatus cc_fit_decay(const struct CcTrace *trace,
                           enum CcDecayKind kind,
                           struct CcDecayFit **out);

// # Safety
// `fit` must be null or a live handle; `out` must be null or point to
// writable memory.
enum CcStatus cc_decay_fit_summary(const struct CcDecayFit *fit, struct CcDecaySummary *out);

// Component `index`; for double fits index 0 is the slower one.
//
// # Safety
// `fit` must be null or a live handle; `out` must be null or point to
// writable memory.
enum CcStatus cc_decay_fit_component(const struct CcDecayFit *fit,
                                     size_t index,
                                     struct CcExpComponent *out);

// # Safety
// `fit` must be null or a handle not yet freed.
void cc_decay_fit_free(struct CcDecayFit *fit);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* COLORCENTER_H */
