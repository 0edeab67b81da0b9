use std::ffi::{CStr, CString};
use std::fs;
use std::ptr;

use colorcenter::synth::{gen_decay_trace, DecaySampling, DecayTruth, NoiseSpec};
use colorcenter_ffi::*;

fn last_error() -> String {
    let p = cc_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn budget_values_and_errors() {
    let mut b = CcBudget::default();
    assert_eq!(unsafe { cc_budget(704.0, 163.0, 0.39, 0.66, &mut b) }, CcStatus::Ok);
    assert!(cc_last_error().is_null());
    let tau_nr = 1.0 / (1.0 / 163.0 - 1.0 / 704.0);
    assert!((b.tau_nr_ns - tau_nr).abs() < 1e-9);
    assert!((b.eta_rad - 163.0 / 704.0).abs() < 1e-12);
    assert!((b.eta_tot - 0.39 * 163.0 / 704.0).abs() < 1e-12);
    assert!((b.dw_th - (-0.66f64).exp()).abs() < 1e-12);

    assert_eq!(unsafe { cc_budget(704.0, 704.0, 0.39, 0.66, &mut b) }, CcStatus::Ok);
    assert!(b.tau_nr_ns.is_nan());

    assert_eq!(
        unsafe { cc_budget(100.0, 163.0, 0.39, 0.66, &mut b) },
        CcStatus::Superradiant
    );
    assert!(last_error().contains("superradiant"));
    assert_eq!(
        unsafe { cc_budget(704.0, 163.0, 0.39, 0.66, ptr::null_mut()) },
        CcStatus::NullPointer
    );
}

#[test]
fn scalar_calculators() {
    let mut e = 0.0;
    assert_eq!(unsafe { cc_wavelength_to_energy_ev(1000.0, &mut e) }, CcStatus::Ok);
    assert!((e - 1.239_841_98).abs() < 1e-6);
    assert_eq!(unsafe { cc_wavelength_to_energy_ev(-5.0, &mut e) }, CcStatus::Domain);

    let mut tau = 0.0;
    assert_eq!(
        unsafe { cc_thermal_lifetime(163.0, 83.0, 28.0, 4.0, &mut tau) },
        CcStatus::Ok
    );
    assert!((tau - 163.0).abs() < 1e-6);
    assert_eq!(
        unsafe { cc_thermal_lifetime(163.0, 83.0, 28.0, 300.0, &mut tau) },
        CcStatus::Ok
    );
    let k: f64 = 28.0 / (0.086_173_3 * 300.0);
    let expect = 1.0 / (1.0 / 163.0 + (-k).exp() / 83.0);
    assert!((tau - expect).abs() < 1e-3 * expect, "{tau} vs {expect}");
    assert_eq!(
        unsafe { cc_thermal_lifetime(163.0, 83.0, 28.0, 0.0, &mut tau) },
        CcStatus::Validation
    );

    let mut dw = 0.0;
    assert_eq!(unsafe { cc_debye_waller(0.66, &mut dw) }, CcStatus::Ok);
    assert!((dw - 0.5169).abs() < 1e-4);
    assert_eq!(unsafe { cc_debye_waller(-1.0, &mut dw) }, CcStatus::Validation);
}

#[test]
fn cavity_reference() {
    let mut p = CcCavityParams::default();
    let mut c = CcCooperativity::default();
    unsafe {
        assert_eq!(cc_cavity_reference(&mut p), CcStatus::Ok);
        assert_eq!(cc_cavity(&p, &mut c), CcStatus::Ok);
    }
    assert!((c.eta_cav - 2.0 * c.cooperativity / (2.0 * c.cooperativity + 1.0)).abs() < 1e-12);
    assert!((c.eta_cav - 0.82).abs() < 0.05, "{c:?}");
    p.finesse = -1.0;
    assert_eq!(unsafe { cc_cavity(&p, &mut c) }, CcStatus::Validation);
    assert_eq!(unsafe { cc_cavity(ptr::null(), &mut c) }, CcStatus::NullPointer);
}

#[test]
fn psb_eval_matches_core() {
    let xs: Vec<f64> = (0..200).map(|i| i as f64 * 0.5).collect();
    let mut out = vec![0.0; xs.len()];
    let status = unsafe { cc_psb_eval(10.0, 3.0, 4.0, 25, xs.as_ptr(), xs.len(), out.as_mut_ptr()) };
    assert_eq!(status, CcStatus::Ok);
    let model = colorcenter::spectrum::PsbModel::new(10.0, 3.0, 4.0, 25).unwrap();
    assert_eq!(out, colorcenter::spectrum::psb_eval(&model, &xs));
    let status = unsafe { cc_psb_eval(10.0, -3.0, 4.0, 25, xs.as_ptr(), xs.len(), out.as_mut_ptr()) };
    assert_ne!(status, CcStatus::Ok);
    let status = unsafe { cc_psb_eval(10.0, 3.0, 4.0, 25, xs.as_ptr(), xs.len(), ptr::null_mut()) };
    assert_eq!(status, CcStatus::NullPointer);
}

fn synthetic_trace() -> (Vec<f64>, Vec<f64>) {
    let truth = DecayTruth::single(3000.0, 164.2, 20.0, 100.0);
    let t = gen_decay_trace(&truth, &DecaySampling::new(0.0, 1.0, 1500), NoiseSpec::Poisson, 7).unwrap();
    t.points().iter().map(|p| (p.time_ns, p.counts)).unzip()
}

const META: CcTraceMeta = CcTraceMeta {
    pulse_time_ns: 100.0,
    band_center_nm: 1280.0,
    band_width_nm: 40.0,
    temperature_k: 4.0,
};

#[test]
fn trace_handle_lifecycle() {
    let (times, counts) = synthetic_trace();
    let mut trace: *mut CcTrace = ptr::null_mut();
    let status = unsafe { cc_trace_from_arrays(times.as_ptr(), counts.as_ptr(), times.len(), &META, &mut trace) };
    assert_eq!(status, CcStatus::Ok);
    assert_eq!(unsafe { cc_trace_len(trace) }, 1500);

    let mut fit: *mut CcDecayFit = ptr::null_mut();
    assert_eq!(
        unsafe { cc_fit_decay(trace, CcDecayKind::Single, &mut fit) },
        CcStatus::Ok
    );
    let mut summary = std::mem::MaybeUninit::<CcDecaySummary>::uninit();
    assert_eq!(unsafe { cc_decay_fit_summary(fit, summary.as_mut_ptr()) }, CcStatus::Ok);
    let summary = unsafe { summary.assume_init() };
    assert_eq!(summary.kind, CcDecayKind::Single);
    assert_eq!(summary.n_components, 1);
    assert!(summary.delta_aic.is_nan());
    let mut c = CcExpComponent::default();
    assert_eq!(unsafe { cc_decay_fit_component(fit, 0, &mut c) }, CcStatus::Ok);
    assert!((c.tau_ns - 164.2).abs() < c.tau_sigma3, "{c:?}");
    assert_eq!(unsafe { cc_decay_fit_component(fit, 1, &mut c) }, CcStatus::OutOfRange);
    assert!(last_error().contains("component 1"));

    unsafe {
        cc_decay_fit_free(fit);
        cc_trace_free(trace);
        cc_trace_free(ptr::null_mut());
        cc_decay_fit_free(ptr::null_mut());
    }
    assert_eq!(unsafe { cc_trace_len(ptr::null()) }, 0);
    let partial = CcTraceMeta {
        temperature_k: f64::NAN,
        ..META
    };
    let mut trace: *mut CcTrace = ptr::null_mut();
    let status = unsafe { cc_trace_from_arrays(times.as_ptr(), counts.as_ptr(), times.len(), &partial, &mut trace) };
    assert_eq!(status, CcStatus::Validation);
    assert!(last_error().contains("temperature_K"));
    let mut fit: *mut CcDecayFit = ptr::null_mut();
    assert_eq!(
        unsafe { cc_fit_decay(ptr::null(), CcDecayKind::Auto, &mut fit) },
        CcStatus::NullPointer
    );
}

#[test]
fn trace_load_from_file() {
    let (times, counts) = synthetic_trace();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("trace.dat");
    let text: String = times.iter().zip(&counts).map(|(t, c)| format!("{t} {c}\n")).collect();
    fs::write(&path, text).unwrap();
    let cpath = CString::new(path.to_str().unwrap()).unwrap();

    let mut trace: *mut CcTrace = ptr::null_mut();
    assert_eq!(
        unsafe { cc_trace_load(cpath.as_ptr(), &META, &mut trace) },
        CcStatus::Ok
    );
    assert_eq!(unsafe { cc_trace_len(trace) }, 1500);
    unsafe { cc_trace_free(trace) };

    let missing = CString::new(dir.path().join("absent.dat").to_str().unwrap()).unwrap();
    let mut trace: *mut CcTrace = ptr::null_mut();
    assert_eq!(
        unsafe { cc_trace_load(missing.as_ptr(), ptr::null(), &mut trace) },
        CcStatus::Io
    );
    assert!(last_error().contains("absent.dat"));
    assert!(trace.is_null());
    assert_eq!(
        unsafe { cc_trace_load(ptr::null(), &META, &mut trace) },
        CcStatus::NullPointer
    );
}

#[test]
fn version_string() {
    let v = unsafe { CStr::from_ptr(cc_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}
