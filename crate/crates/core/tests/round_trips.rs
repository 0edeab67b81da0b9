use colorcenter::decay::{fit_decay, fit_thermal, DecayFitOptions, DecayKind, KindSelection};
use colorcenter::nls::FitOptions;
use colorcenter::spectrum::{
    find_zpls, fit_psb, fit_ratio_model, partition_dw, polarization_fit, power_law_check, ratio_model,
    PartitionOptions, PsbFitOptions, RatioPoint, ZplLabel, ZplOptions, ZplWindow,
};
use colorcenter::synth::{
    gen_decay_trace, gen_polarization_series, gen_power_series, gen_spectrum, gen_thermal_points,
    reference_composite_truth, ComponentAreas, DecaySampling, DecayTruth, LineTruth, NoiseSpec, PolarizationTruth,
    PowerTruth, SpectrumTruth, ThermalTruth, WavelengthGrid,
};

fn rel(a: f64, b: f64) -> f64 {
    ((a - b) / b).abs()
}

#[test]
fn noiseless_single_decay() {
    let truth = DecayTruth::single(1e4, 164.2, 20.0, 100.0);
    let trace = gen_decay_trace(&truth, &DecaySampling::new(0.0, 1.0, 1500), NoiseSpec::None, 0).unwrap();
    let fit = fit_decay(&trace, &DecayFitOptions::default()).unwrap();
    assert_eq!(fit.model_kind, DecayKind::Single);
    assert!(rel(fit.background.mean, 20.0) < 1e-12);
    assert!(rel(fit.components[0].tau_ns, 164.2) < 1e-6, "{fit:?}");
    assert!(rel(fit.components[0].amplitude, 1e4) < 1e-6);
}

#[test]
fn noiseless_double_decay() {
    let truth = DecayTruth::double(1e4, 158.5, 1e4, 43.3, 20.0, 100.0);
    let trace = gen_decay_trace(&truth, &DecaySampling::new(0.0, 1.0, 1500), NoiseSpec::None, 0).unwrap();
    let opts = DecayFitOptions {
        kind: KindSelection::Double,
        ..Default::default()
    };
    let fit = fit_decay(&trace, &opts).unwrap();
    assert_eq!(fit.model_kind, DecayKind::Double);
    assert!(rel(fit.components[0].tau_ns, 158.5) < 1e-6, "{fit:?}");
    assert!(rel(fit.components[1].tau_ns, 43.3) < 1e-6);
    assert!(rel(fit.components[0].amplitude, 1e4) < 1e-6);
    assert!(rel(fit.components[1].amplitude, 1e4) < 1e-6);
}

#[test]
fn noiseless_thermal() {
    let truth = ThermalTruth {
        tau_ns: 163.0,
        tau_p_ns: 83.0,
        e_p_mev: 28.0,
        sigma_fraction: 0.02,
    };
    let temps = [4.0, 50.0, 100.0, 150.0, 200.0, 250.0, 300.0, 350.0];
    let pts = gen_thermal_points(&truth, &temps, NoiseSpec::None, 0).unwrap();
    let m = fit_thermal(&pts, &FitOptions::default()).unwrap();
    assert!(rel(m.tau_ns, 163.0) < 1e-6, "{m:?}");
    assert!(rel(m.tau_p_ns, 83.0) < 1e-6);
    assert!(rel(m.e_p_mev, 28.0) < 1e-6);
}

#[test]
fn noiseless_power_law() {
    let truth = PowerTruth {
        prefactor: 250.0,
        exponent: 1.0,
    };
    let pts = gen_power_series(&truth, &[0.5, 1.0, 2.0, 5.0, 10.0], NoiseSpec::None, 0).unwrap();
    let fit = power_law_check(&pts).unwrap();
    assert!(rel(fit.exponent, 1.0) < 1e-6);
    assert!(rel(fit.prefactor, 250.0) < 1e-6);
}

#[test]
fn noiseless_polarization() {
    let truth = PolarizationTruth {
        a: 10.0,
        b: 90.0,
        theta0_deg: 30.0,
    };
    let angles: Vec<f64> = (0..18).map(|i| 10.0 * i as f64).collect();
    let pts = gen_polarization_series(&truth, &angles, NoiseSpec::None, 0).unwrap();
    let fit = polarization_fit(&pts).unwrap();
    assert!(rel(fit.a, 10.0) < 1e-6, "{fit:?}");
    assert!(rel(fit.b, 90.0) < 1e-6);
    assert!(rel(fit.theta0_deg.unwrap(), 30.0) < 1e-6);
}

#[test]
fn noiseless_ratio_model() {
    let pts: Vec<RatioPoint> = [4.0, 10.0, 20.0, 35.0, 50.0, 70.0, 90.0]
        .iter()
        .map(|&t| RatioPoint {
            temperature_k: t,
            ratio: ratio_model(7.0 / 3.0, 25.0, t),
        })
        .collect();
    let fit = fit_ratio_model(&pts).unwrap();
    assert!(rel(fit.r0, 7.0 / 3.0) < 1e-6, "{fit:?}");
    assert!(rel(fit.t0_k, 25.0) < 1e-6);
}

#[test]
fn noiseless_zero_phonon_lines() {
    let truth = SpectrumTruth {
        lines: vec![
            LineTruth {
                label: Some(ZplLabel::Alpha3),
                center_nm: 1278.8,
                fwhm_nm: 0.3,
                area: 70.0,
            },
            LineTruth {
                label: Some(ZplLabel::Alpha2),
                center_nm: 1280.74,
                fwhm_nm: 0.3,
                area: 30.0,
            },
            LineTruth {
                label: Some(ZplLabel::Beta),
                center_nm: 1334.0,
                fwhm_nm: 0.4,
                area: 20.0,
            },
        ],
        sidebands: vec![],
        hr: vec![],
        background: 5.0,
        temperature_k: 4.0,
    };
    let grid = WavelengthGrid {
        start_nm: 1270.0,
        end_nm: 1340.0,
        step_nm: 0.02,
    };
    let s = gen_spectrum(&truth, &grid, NoiseSpec::None, 0).unwrap();
    let set = find_zpls(&s, &ZplWindow::vanadium(), &ZplOptions::default()).unwrap();
    for l in &truth.lines {
        let got = set.get(l.label.unwrap()).unwrap();
        assert!(rel(got.center_nm, l.center_nm) < 1e-6, "{got:?}");
        assert!(rel(got.area, l.area) < 1e-6, "{got:?}");
        assert!(rel(got.width.fwhm_nm(), l.fwhm_nm) < 1e-6);
    }
}

#[test]
fn reference_composite_sideband_and_partition() {
    let (truth, grid) = reference_composite_truth(1.0e5);
    let constructed = ComponentAreas::of(&truth, &grid).unwrap().constructed_dw();
    let s = gen_spectrum(&truth, &grid, NoiseSpec::None, 0).unwrap();
    let zpls = find_zpls(&s, &ZplWindow::vanadium(), &ZplOptions::default()).unwrap();
    let psb = fit_psb(&s, &zpls, &PsbFitOptions::default()).unwrap();
    let model = truth.sidebands[0].model;
    assert!(rel(psb.model.i0, model.i0) < 1e-6, "{:?}", psb.model);
    assert!(rel(psb.model.sigma_mev, model.sigma_mev) < 1e-6);
    assert!(rel(psb.model.delta0_mev, model.delta0_mev) < 1e-6);

    let p = partition_dw(&s, &zpls, &PartitionOptions::default(), Some(&psb)).unwrap();
    assert!(p.ordering_holds(), "{p:?}");
    assert!((p.dw_mean - constructed.mean).abs() < 0.01, "{p:?} vs {constructed:?}");
    assert!((p.dw_alpha_refined.unwrap() - constructed.alpha).abs() < 0.01);
    assert!((p.dw_beta_refined.unwrap() - constructed.beta).abs() < 0.01);
}
