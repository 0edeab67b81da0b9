//! C ABI for the colorcenter toolkit.
//!
//! Every function returns a [`CcStatus`]; on failure the message is kept per
//! thread and read with [`cc_last_error`]. Handles are opaque and released
//! with their `_free` function. Optional numeric inputs and outputs use NaN
//! for "absent".

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use colorcenter::decay::{fit_decay, thermal_lifetime, DecayFitOptions, DecayFitResult, DecayKind, KindSelection};
use colorcenter::model::{load_trace, wavelength_to_energy, DecayTrace, Metadata};
use colorcenter::photophysics::{budget, cooperativity, CavityParams};
use colorcenter::spectrum::{psb_eval, PsbModel};
use colorcenter::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CcStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidString = 2,
    Io = 3,
    Parse = 4,
    Validation = 5,
    Domain = 6,
    InsufficientData = 7,
    NoData = 8,
    LineNotFound = 9,
    ModelInconsistency = 10,
    Superradiant = 11,
    Configuration = 12,
    Aggregation = 13,
    FitFailed = 14,
    OutOfRange = 15,
    Panic = 16,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(CcStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Io { .. } => CcStatus::Io,
            Error::Parse { .. } => CcStatus::Parse,
            Error::Validation(_) => CcStatus::Validation,
            Error::Domain(_) => CcStatus::Domain,
            Error::InsufficientData(_) => CcStatus::InsufficientData,
            Error::NoData(_) => CcStatus::NoData,
            Error::LineNotFound(_) => CcStatus::LineNotFound,
            Error::ModelInconsistency(_) => CcStatus::ModelInconsistency,
            Error::Superradiant { .. } => CcStatus::Superradiant,
            Error::Configuration(_) => CcStatus::Configuration,
            Error::Aggregation(_) => CcStatus::Aggregation,
            Error::Fit(_) => CcStatus::FitFailed,
        };
        Failure(status, e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(CcStatus::NullPointer, format!("`{what}` is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> CcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            CcStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            CcStatus::Panic
        }
    }
}

unsafe fn out_ref<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn path_arg<'a>(p: *const c_char) -> Result<&'a Path, Failure> {
    if p.is_null() {
        return Err(null("path"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(Path::new)
        .map_err(|_| Failure(CcStatus::InvalidString, "path is not valid UTF-8".into()))
}

unsafe fn slice_arg<'a>(p: *const f64, n: usize, what: &str) -> Result<&'a [f64], Failure> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

fn opt(v: f64) -> Option<f64> {
    (!v.is_nan()).then_some(v)
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next call into the library on the same thread.
#[no_mangle]
pub extern "C" fn cc_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn cc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Photon energy in eV of light at `wavelength_nm`.
///
/// # Safety
/// `out` must be null or point to writable memory.
#[no_mangle]
pub unsafe extern "C" fn cc_wavelength_to_energy_ev(wavelength_nm: f64, out: *mut f64) -> CcStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        *out = wavelength_to_energy(wavelength_nm)?.as_ev();
        Ok(())
    })
}

/// Lifetime in ns at `temperature_k` under thermally activated
/// non-radiative decay.
///
/// # Safety
/// `out` must be null or point to writable memory.
#[no_mangle]
pub unsafe extern "C" fn cc_thermal_lifetime(
    tau_ns: f64,
    tau_p_ns: f64,
    e_p_mev: f64,
    temperature_k: f64,
    out: *mut f64,
) -> CcStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        for (v, name) in [
            (tau_ns, "tau_ns"),
            (tau_p_ns, "tau_p_ns"),
            (temperature_k, "temperature_k"),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Failure(CcStatus::Validation, format!("{name} = {v} must be > 0")));
            }
        }
        if !(e_p_mev >= 0.0) {
            return Err(Failure(
                CcStatus::Validation,
                format!("e_p_mev = {e_p_mev} must be >= 0"),
            ));
        }
        *out = thermal_lifetime(tau_ns, tau_p_ns, e_p_mev, temperature_k);
        Ok(())
    })
}

/// Debye-Waller factor `exp(-S)` for a Huang-Rhys factor `S`.
///
/// # Safety
/// `out` must be null or point to writable memory.
#[no_mangle]
pub unsafe extern "C" fn cc_debye_waller(huang_rhys: f64, out: *mut f64) -> CcStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        if !(huang_rhys >= 0.0) || !huang_rhys.is_finite() {
            return Err(Failure(
                CcStatus::Validation,
                format!("Huang-Rhys factor {huang_rhys} must be >= 0"),
            ));
        }
        *out = (-huang_rhys).exp();
        Ok(())
    })
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct CcBudget {
    pub s_th: f64,
    pub dw_th: f64,
    pub dw_exp: f64,
    pub tau_rad_ns: f64,
    pub tau_tot_ns: f64,
    /// NaN for a purely radiative decay.
    pub tau_nr_ns: f64,
    pub eta_rad: f64,
    pub eta_tot: f64,
}

/// Radiative and total efficiency from lifetimes, Debye-Waller and
/// Huang-Rhys factors.
///
/// # Safety
/// `out` must be null or point to writable memory.
#[no_mangle]
pub unsafe extern "C" fn cc_budget(
    tau_rad_ns: f64,
    tau_tot_ns: f64,
    dw_exp: f64,
    s_th: f64,
    out: *mut CcBudget,
) -> CcStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let b = budget(tau_rad_ns, tau_tot_ns, dw_exp, s_th)?;
        *out = CcBudget {
            s_th: b.s_th,
            dw_th: b.dw_th,
            dw_exp: b.dw_exp,
            tau_rad_ns: b.tau_rad_ns,
            tau_tot_ns: b.tau_tot_ns,
            tau_nr_ns: b.tau_nr_ns.unwrap_or(f64::NAN),
            eta_rad: b.eta_rad,
            eta_tot: b.eta_tot,
        };
        Ok(())
    })
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct CcCavityParams {
    pub wavelength_nm: f64,
    pub finesse: f64,
    /// NaN when `waist_um` is given.
    pub roc_mm: f64,
    pub l_vac_um: f64,
    pub l_sic_um: f64,
    pub n_sic: f64,
    /// NaN to derive the waist from `roc_mm`.
    pub waist_um: f64,
    pub eta_tot: f64,
    pub extraction: f64,
}

impl From<CcCavityParams> for CavityParams {
    fn from(p: CcCavityParams) -> Self {
        CavityParams {
            wavelength_nm: p.wavelength_nm,
            finesse: p.finesse,
            roc_mm: opt(p.roc_mm),
            l_vac_um: p.l_vac_um,
            l_sic_um: p.l_sic_um,
            n_sic: p.n_sic,
            waist_um: opt(p.waist_um),
            eta_tot: p.eta_tot,
            extraction: p.extraction,
        }
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct CcCooperativity {
    pub waist_um: f64,
    pub sigma_e_m2: f64,
    pub sigma_c_m2: f64,
    pub fill_factor: f64,
    pub cooperativity: f64,
    pub eta_cav: f64,
    pub eta_out: f64,
}

/// Fills `out` with the reference microcavity parameters.
///
/// # Safety
/// `out` must be null or point to writable memory.
#[no_mangle]
pub unsafe extern "C" fn cc_cavity_reference(out: *mut CcCavityParams) -> CcStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let p = CavityParams::reference();
        *out = CcCavityParams {
            wavelength_nm: p.wavelength_nm,
            finesse: p.finesse,
            roc_mm: p.roc_mm.unwrap_or(f64::NAN),
            l_vac_um: p.l_vac_um,
            l_sic_um: p.l_sic_um,
            n_sic: p.n_sic,
            waist_um: p.waist_um.unwrap_or(f64::NAN),
            eta_tot: p.eta_tot,
            extraction: p.extraction,
        };
        Ok(())
    })
}

/// Cooperativity and cavity efficiencies.
///
/// # Safety
/// `params` must be null or point to a valid struct; `out` must be null or
/// point to writable memory.
#[no_mangle]
pub unsafe extern "C" fn cc_cavity(params: *const CcCavityParams, out: *mut CcCooperativity) -> CcStatus {
    guard(|| {
        let params = params.as_ref().ok_or_else(|| null("params"))?;
        let out = out_ref(out, "out")?;
        let c = cooperativity(&CavityParams::from(*params))?;
        *out = CcCooperativity {
            waist_um: c.waist_um,
            sigma_e_m2: c.sigma_e_m2,
            sigma_c_m2: c.sigma_c_m2,
            fill_factor: c.fill_factor,
            cooperativity: c.cooperativity,
            eta_cav: c.eta_cav,
            eta_out: c.eta_out,
        };
        Ok(())
    })
}

/// Phonon-sideband intensity per meV at `n` phonon energies.
///
/// # Safety
/// `delta_mev` and `out` must point to `n` readable / writable doubles.
#[no_mangle]
pub unsafe extern "C" fn cc_psb_eval(
    i0: f64,
    sigma_mev: f64,
    delta0_mev: f64,
    j_max: u32,
    delta_mev: *const f64,
    n: usize,
    out: *mut f64,
) -> CcStatus {
    guard(|| {
        let model = PsbModel::new(i0, sigma_mev, delta0_mev, j_max)?;
        let xs = slice_arg(delta_mev, n, "delta_mev")?;
        if n > 0 && out.is_null() {
            return Err(null("out"));
        }
        for (i, v) in psb_eval(&model, xs).into_iter().enumerate() {
            *out.add(i) = v;
        }
        Ok(())
    })
}

/// A decay trace.
pub struct CcTrace {
    inner: DecayTrace,
}

/// A decay fit result.
pub struct CcDecayFit {
    inner: DecayFitResult,
}

/// Trace metadata; NaN marks a field as absent.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct CcTraceMeta {
    pub pulse_time_ns: f64,
    pub band_center_nm: f64,
    pub band_width_nm: f64,
    pub temperature_k: f64,
}

impl From<CcTraceMeta> for Metadata {
    fn from(m: CcTraceMeta) -> Self {
        Metadata {
            pulse_time_ns: opt(m.pulse_time_ns),
            band_center_nm: opt(m.band_center_nm),
            band_width_nm: opt(m.band_width_nm),
            temperature_k: opt(m.temperature_k),
            ..Metadata::default()
        }
    }
}

/// Loads a two-column (time_ns, counts) trace. Metadata comes from the
/// `<path>.meta.toml` sidecar when present; non-NaN fields of `meta`
/// override it. `meta` may be null.
///
/// # Safety
/// `path` must be null or a NUL-terminated string; `meta` must be null or
/// point to a valid struct; `out` must be null or point to writable memory.
#[no_mangle]
pub unsafe extern "C" fn cc_trace_load(
    path: *const c_char,
    meta: *const CcTraceMeta,
    out: *mut *mut CcTrace,
) -> CcStatus {
    guard(|| {
        let path = path_arg(path)?;
        let out = out_ref(out, "out")?;
        let sidecar = Metadata::sidecar_path(path);
        let base = if sidecar.exists() {
            Metadata::load(&sidecar)?
        } else {
            Metadata::default()
        };
        let overrides = meta.as_ref().map_or_else(Metadata::default, |m| Metadata::from(*m));
        let trace = load_trace(path, &base.merged(&overrides))?;
        *out = Box::into_raw(Box::new(CcTrace { inner: trace }));
        Ok(())
    })
}

/// Builds a trace from `n` time/count pairs. Every field of `meta` is
/// required.
///
/// # Safety
/// `times_ns` and `counts` must point to `n` doubles; `meta` must be null or
/// point to a valid struct; `out` must be null or point to writable memory.
#[no_mangle]
pub unsafe extern "C" fn cc_trace_from_arrays(
    times_ns: *const f64,
    counts: *const f64,
    n: usize,
    meta: *const CcTraceMeta,
    out: *mut *mut CcTrace,
) -> CcStatus {
    guard(|| {
        let t = slice_arg(times_ns, n, "times_ns")?;
        let c = slice_arg(counts, n, "counts")?;
        let meta = meta.as_ref().ok_or_else(|| null("meta"))?;
        let out = out_ref(out, "out")?;
        let pairs: Vec<(f64, f64)> = t.iter().copied().zip(c.iter().copied()).collect();
        let trace = DecayTrace::from_pairs(&pairs, &Metadata::from(*meta))?;
        *out = Box::into_raw(Box::new(CcTrace { inner: trace }));
        Ok(())
    })
}

/// Number of bins, or 0 for a null handle.
///
/// # Safety
/// `trace` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cc_trace_len(trace: *const CcTrace) -> usize {
    trace.as_ref().map_or(0, |t| t.inner.len())
}

/// # Safety
/// `trace` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn cc_trace_free(trace: *mut CcTrace) {
    if !trace.is_null() {
        drop(Box::from_raw(trace));
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CcDecayKind {
    Auto = 0,
    Single = 1,
    Double = 2,
}

/// Fits a single or double exponential to `trace`.
///
/// # Safety
/// `trace` must be null or a live handle; `out` must be null or point to
/// writable memory.
#[no_mangle]
pub unsafe extern "C" fn cc_fit_decay(trace: *const CcTrace, kind: CcDecayKind, out: *mut *mut CcDecayFit) -> CcStatus {
    guard(|| {
        let trace = trace.as_ref().ok_or_else(|| null("trace"))?;
        let out = out_ref(out, "out")?;
        let opts = DecayFitOptions {
            kind: match kind {
                CcDecayKind::Auto => KindSelection::Auto,
                CcDecayKind::Single => KindSelection::Single,
                CcDecayKind::Double => KindSelection::Double,
            },
            ..DecayFitOptions::default()
        };
        let fit = fit_decay(&trace.inner, &opts)?;
        *out = Box::into_raw(Box::new(CcDecayFit { inner: fit }));
        Ok(())
    })
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct CcDecaySummary {
    /// `Single` or `Double`.
    pub kind: CcDecayKind,
    pub n_components: usize,
    pub background: f64,
    pub background_sigma3: f64,
    pub reduced_chi2: f64,
    pub aic: f64,
    /// NaN unless both models were fitted.
    pub delta_aic: f64,
    pub window_start_ns: f64,
    pub window_end_ns: f64,
    pub converged: bool,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct CcExpComponent {
    pub amplitude: f64,
    pub amplitude_sigma3: f64,
    pub tau_ns: f64,
    pub tau_sigma3: f64,
}

/// # Safety
/// `fit` must be null or a live handle; `out` must be null or point to
/// writable memory.
#[no_mangle]
pub unsafe extern "C" fn cc_decay_fit_summary(fit: *const CcDecayFit, out: *mut CcDecaySummary) -> CcStatus {
    guard(|| {
        let f = &fit.as_ref().ok_or_else(|| null("fit"))?.inner;
        let out = out_ref(out, "out")?;
        *out = CcDecaySummary {
            kind: match f.model_kind {
                DecayKind::Single => CcDecayKind::Single,
                DecayKind::Double => CcDecayKind::Double,
            },
            n_components: f.components.len(),
            background: f.background.mean,
            background_sigma3: 3.0 * f.background.std_error,
            reduced_chi2: f.reduced_chi2,
            aic: f.aic,
            delta_aic: f.delta_aic.unwrap_or(f64::NAN),
            window_start_ns: f.window_ns.0,
            window_end_ns: f.window_ns.1,
            converged: f.converged,
        };
        Ok(())
    })
}

/// Component `index`; for double fits index 0 is the slower one.
///
/// # Safety
/// `fit` must be null or a live handle; `out` must be null or point to
/// writable memory.
#[no_mangle]
pub unsafe extern "C" fn cc_decay_fit_component(
    fit: *const CcDecayFit,
    index: usize,
    out: *mut CcExpComponent,
) -> CcStatus {
    guard(|| {
        let f = &fit.as_ref().ok_or_else(|| null("fit"))?.inner;
        let out = out_ref(out, "out")?;
        let c = f.components.get(index).ok_or_else(|| {
            Failure(
                CcStatus::OutOfRange,
                format!("component {index} of {}", f.components.len()),
            )
        })?;
        *out = CcExpComponent {
            amplitude: c.amplitude,
            amplitude_sigma3: c.amplitude_sigma3,
            tau_ns: c.tau_ns,
            tau_sigma3: c.tau_sigma3,
        };
        Ok(())
    })
}

/// # Safety
/// `fit` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn cc_decay_fit_free(fit: *mut CcDecayFit) {
    if !fit.is_null() {
        drop(Box::from_raw(fit));
    }
}
