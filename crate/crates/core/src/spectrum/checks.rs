use serde::{Deserialize, Serialize};

use super::zpl::{find_zpls, ZplLabel, ZplOptions, ZplWindow};
use crate::error::{validation, Error, Result};
use crate::model::Spectrum;
use crate::nls::{self, Bound, DataPoint, FitError, FitOptions, FitProblem, Model};

/// Low-temperature share of the dominant α₃ line in the doublet.
pub const DOMINANT_SHARE_REFERENCE: f64 = 0.70;
pub const DOMINANT_SHARE_TOLERANCE: f64 = 0.05;

/// Doublet ratio thermometry needs this many temperatures below 100 K.
const MIN_LOW_T_POINTS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerLawFit {
    pub exponent: f64,
    pub exponent_sigma3: f64,
    /// Intensity at 1 mW.
    pub prefactor: f64,
}

/// `y = p₀ + p₁·x`, used in log-log space for power laws.
#[derive(Debug, Clone, Copy)]
pub struct LineModel;

impl Model for LineModel {
    fn n_params(&self) -> usize {
        2
    }

    fn eval(&self, p: &[f64], x: f64) -> f64 {
        p[0] + p[1] * x
    }

    fn partials(&self, _p: &[f64], x: f64, out: &mut [f64]) -> bool {
        out[0] = 1.0;
        out[1] = x;
        true
    }

    fn param_names(&self) -> Vec<String> {
        vec!["log_prefactor".into(), "exponent".into()]
    }
}

/// Fits `I = c·Pᵏ` as a straight line in log-log space.
pub fn power_law_check(points: &[(f64, f64)]) -> Result<PowerLawFit> {
    for &(p, i) in points {
        if !(p > 0.0) {
            return Err(Error::Domain(format!("excitation power {p} mW must be > 0")));
        }
        if !(i > 0.0) {
            return Err(Error::Domain(format!(
                "intensity {i} at {p} mW must be > 0 for a log-log fit"
            )));
        }
    }
    let mut powers: Vec<f64> = points.iter().map(|p| p.0).collect();
    powers.sort_by(f64::total_cmp);
    powers.dedup();
    if powers.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "{} distinct powers, need at least 3",
            powers.len()
        )));
    }
    let data: Vec<DataPoint> = points
        .iter()
        .map(|&(p, i)| DataPoint::new(p.ln(), i.ln(), 1.0))
        .collect();
    let problem = FitProblem::new(&LineModel, data, vec![0.0, 1.0])?;
    let fit = nls::minimize(&problem, &FitOptions::default())?;
    Ok(PowerLawFit {
        exponent: fit.parameters[1],
        exponent_sigma3: fit.sigma3[1],
        prefactor: fit.parameters[0].exp(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolarizationFit {
    /// Unpolarized part `a` of `a + b·cos²(θ − θ₀)`.
    pub a: f64,
    pub b: f64,
    /// Absent when the data carry no polarization.
    pub theta0_deg: Option<f64>,
    pub theta0_sigma3_deg: Option<f64>,
    pub i_min: f64,
    pub i_max: f64,
    pub visibility: f64,
    pub visibility_sigma3: f64,
    pub warnings: Vec<String>,
}

fn wrap_angle_deg(theta: f64) -> f64 {
    let t = theta.rem_euclid(180.0);
    if t >= 90.0 {
        t - 180.0
    } else {
        t
    }
}

/// `I(θ) = a + b·cos²(θ − θ₀)` with θ in degrees, parameters `[a, b, θ₀]`.
#[derive(Debug, Clone, Copy)]
pub struct PolarizationModel;

impl Model for PolarizationModel {
    fn n_params(&self) -> usize {
        3
    }

    fn eval(&self, p: &[f64], t: f64) -> f64 {
        p[0] + p[1] * (t - p[2]).to_radians().cos().powi(2)
    }

    fn partials(&self, p: &[f64], t: f64, out: &mut [f64]) -> bool {
        let x = (t - p[2]).to_radians();
        out[0] = 1.0;
        out[1] = x.cos().powi(2);
        // d/dθ₀ cos²(x) = sin(2x)·π/180
        out[2] = p[1] * (2.0 * x).sin() * std::f64::consts::PI / 180.0;
        true
    }

    fn param_names(&self) -> Vec<String> {
        vec!["a".into(), "b".into(), "theta0".into()]
    }
}

/// Fits `I(θ) = a + b·cos²(θ − θ₀)`; visibility is `b / (2a + b)`.
pub fn polarization_fit(points: &[(f64, f64)]) -> Result<PolarizationFit> {
    for &(t, i) in points {
        if !t.is_finite() || !i.is_finite() {
            return Err(validation("polarization samples must be finite"));
        }
    }
    let mut angles: Vec<f64> = points.iter().map(|p| p.0).collect();
    angles.sort_by(f64::total_cmp);
    angles.dedup();
    if angles.len() < 4 {
        return Err(Error::InsufficientData(format!(
            "{} distinct angles, need at least 4",
            angles.len()
        )));
    }
    if angles[angles.len() - 1] - angles[0] < 90.0 {
        return Err(Error::InsufficientData(
            "polarization angles must span at least 90°".into(),
        ));
    }

    // Linear form c₀ + c₁cos2θ + c₂sin2θ gives the starting point.
    let mut ata = nalgebra::Matrix3::<f64>::zeros();
    let mut aty = nalgebra::Vector3::<f64>::zeros();
    for &(t, i) in points {
        let r = 2.0 * t.to_radians();
        let row = nalgebra::Vector3::new(1.0, r.cos(), r.sin());
        ata += row * row.transpose();
        aty += row * i;
    }
    let c = ata
        .cholesky()
        .ok_or_else(|| Error::InsufficientData("angles do not determine a cos² fit".into()))?
        .solve(&aty);
    let b_lin = 2.0 * c[1].hypot(c[2]);
    let theta_lin = 0.5 * c[2].atan2(c[1]).to_degrees();
    let a_lin = c[0] - 0.5 * b_lin;

    let scale = points.iter().map(|p| p.1.abs()).fold(0.0, f64::max);
    if !(b_lin > 1e-9 * scale) {
        return Ok(PolarizationFit {
            a: c[0],
            b: 0.0,
            theta0_deg: None,
            theta0_sigma3_deg: None,
            i_min: c[0],
            i_max: c[0],
            visibility: 0.0,
            visibility_sigma3: 0.0,
            warnings: vec!["no polarization dependence; θ₀ is undefined".into()],
        });
    }

    let model = PolarizationModel;
    let data: Vec<DataPoint> = points.iter().map(|&(t, i)| DataPoint::new(t, i, 1.0)).collect();
    let problem = FitProblem::new(&model, data, vec![a_lin, b_lin, theta_lin])?;
    let fit = nls::minimize(&problem, &FitOptions::default())?;
    let (mut a, mut b, mut theta) = (fit.parameters[0], fit.parameters[1], fit.parameters[2]);
    if b < 0.0 {
        // a + b·cos²x = (a + b) + |b|·cos²(x − 90°)
        a += b;
        b = -b;
        theta += 90.0;
    }
    let cov = &fit.covariance;
    let denom = 2.0 * a + b;
    let visibility = b / denom;
    // ∂V/∂a = −2b/D², ∂V/∂b = 2a/D²
    let (ga, gb) = (-2.0 * b / (denom * denom), 2.0 * a / (denom * denom));
    let var_v = ga * ga * cov[0][0] + gb * gb * cov[1][1] + 2.0 * ga * gb * cov[0][1];
    let mut warnings = Vec::new();
    if !fit.converged {
        warnings.push("polarization fit did not converge".into());
    }
    Ok(PolarizationFit {
        a,
        b,
        theta0_deg: Some(wrap_angle_deg(theta)),
        theta0_sigma3_deg: Some(fit.sigma3[2]),
        i_min: a,
        i_max: a + b,
        visibility,
        visibility_sigma3: 3.0 * var_v.max(0.0).sqrt(),
        warnings,
    })
}

/// `r(T) = 1 + (r₀ − 1)·exp(−T/T₀)`.
pub fn ratio_model(r0: f64, t0_k: f64, temperature_k: f64) -> f64 {
    1.0 + (r0 - 1.0) * (-temperature_k / t0_k).exp()
}

/// [`ratio_model`] with parameters `[r0, T0]`.
#[derive(Debug, Clone, Copy)]
pub struct RatioModel;

impl Model for RatioModel {
    fn n_params(&self) -> usize {
        2
    }

    fn eval(&self, p: &[f64], t: f64) -> f64 {
        ratio_model(p[0], p[1], t)
    }

    fn partials(&self, p: &[f64], t: f64, out: &mut [f64]) -> bool {
        let e = (-t / p[1]).exp();
        out[0] = e;
        out[1] = (p[0] - 1.0) * e * t / (p[1] * p[1]);
        true
    }

    fn param_names(&self) -> Vec<String> {
        vec!["r0".into(), "T0".into()]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatioPoint {
    pub temperature_k: f64,
    /// Area of α₃ over area of α₂.
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DoubletThermometry {
    pub r0: f64,
    pub t0_k: f64,
    pub r0_sigma3: f64,
    pub t0_sigma3_k: f64,
    /// Dominant-line share `r/(1 + r)` of the fitted model at 4 K.
    pub share_4k: f64,
    pub share_4k_sigma3: f64,
    /// Whether the 4 K share lies within 0.70 ± 0.05.
    pub share_consistent: bool,
    pub points: Vec<RatioPoint>,
    pub reduced_chi2: f64,
    pub warnings: Vec<String>,
}

impl DoubletThermometry {
    pub fn ratio(&self, temperature_k: f64) -> f64 {
        ratio_model(self.r0, self.t0_k, temperature_k)
    }
}

fn ratio_guess(points: &[RatioPoint]) -> [f64; 2] {
    let coldest = points
        .iter()
        .min_by(|a, b| a.temperature_k.total_cmp(&b.temperature_k))
        .unwrap();
    let r0 = coldest.ratio;
    let pairs: Vec<(f64, f64)> = points
        .iter()
        .filter(|p| (p.ratio - 1.0) * (r0 - 1.0) > 0.0)
        .map(|p| (p.temperature_k, ((p.ratio - 1.0) / (r0 - 1.0)).ln()))
        .collect();
    let t0 = if pairs.len() >= 2 {
        let n = pairs.len() as f64;
        let sx: f64 = pairs.iter().map(|p| p.0).sum();
        let sy: f64 = pairs.iter().map(|p| p.1).sum();
        let sxx: f64 = pairs.iter().map(|p| p.0 * p.0).sum();
        let sxy: f64 = pairs.iter().map(|p| p.0 * p.1).sum();
        let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
        if slope < 0.0 && slope.is_finite() {
            -1.0 / slope
        } else {
            30.0
        }
    } else {
        30.0
    };
    [r0, t0]
}

/// Fits the exponential approach of the doublet ratio to unity.
pub fn fit_ratio_model(points: &[RatioPoint]) -> Result<DoubletThermometry> {
    for p in points {
        if !(p.temperature_k > 0.0) || !(p.ratio > 0.0) {
            return Err(validation(format!(
                "ratio point {p:?}: temperature and ratio must be > 0"
            )));
        }
    }
    let mut cold: Vec<f64> = points
        .iter()
        .filter(|p| p.temperature_k < 100.0)
        .map(|p| p.temperature_k)
        .collect();
    cold.sort_by(f64::total_cmp);
    cold.dedup();
    if cold.len() < MIN_LOW_T_POINTS {
        return Err(Error::InsufficientData(format!(
            "{} temperatures below 100 K with a resolved doublet, need {MIN_LOW_T_POINTS}",
            cold.len()
        )));
    }
    let data: Vec<DataPoint> = points
        .iter()
        .map(|p| DataPoint::new(p.temperature_k, p.ratio, 1.0))
        .collect();
    let problem = FitProblem::with_bounds(
        &RatioModel,
        data,
        ratio_guess(points).to_vec(),
        vec![Bound::positive(), Bound::at_least(1e-6)],
    )?;
    let fit = nls::minimize(&problem, &FitOptions::default())?;
    let (r0, t0) = (fit.parameters[0], fit.parameters[1]);
    if fit.sigma3[1] == 0.0 && (r0 - 1.0).abs() <= 1e-12 {
        return Err(Error::Fit(FitError::Degenerate {
            direction: "T0 (ratio is flat at unity)".into(),
        }));
    }

    let r4 = ratio_model(r0, t0, 4.0);
    let share = r4 / (1.0 + r4);
    let e = (-4.0 / t0).exp();
    let dr = [e, (r0 - 1.0) * e * 4.0 / (t0 * t0)];
    let ds = 1.0 / ((1.0 + r4) * (1.0 + r4));
    let cov = &fit.covariance;
    let var_r4 = dr[0] * dr[0] * cov[0][0] + dr[1] * dr[1] * cov[1][1] + 2.0 * dr[0] * dr[1] * cov[0][1];
    let share_consistent = (share - DOMINANT_SHARE_REFERENCE).abs() <= DOMINANT_SHARE_TOLERANCE;
    let mut warnings = Vec::new();
    if !share_consistent {
        warnings.push(format!(
            "4 K alpha3 share {share:.3} is outside {DOMINANT_SHARE_REFERENCE} ± {DOMINANT_SHARE_TOLERANCE}"
        ));
    }
    let mut sorted = points.to_vec();
    sorted.sort_by(|a, b| a.temperature_k.total_cmp(&b.temperature_k));
    Ok(DoubletThermometry {
        r0,
        t0_k: t0,
        r0_sigma3: fit.sigma3[0],
        t0_sigma3_k: fit.sigma3[1],
        share_4k: share,
        share_4k_sigma3: 3.0 * ds * var_r4.max(0.0).sqrt(),
        share_consistent,
        points: sorted,
        reduced_chi2: fit.reduced_chi2,
        warnings,
    })
}

/// Measures the α₃/α₂ area ratio in each spectrum and fits its
/// temperature dependence. Spectra whose doublet cannot be resolved are
/// skipped with a warning.
pub fn doublet_ratio_vs_t(
    spectra: &[Spectrum],
    windows: &[ZplWindow],
    opts: &ZplOptions,
) -> Result<DoubletThermometry> {
    let doublet: Vec<ZplWindow> = windows.iter().copied().filter(|w| w.label.is_alpha_zpl()).collect();
    if doublet.len() != 2 {
        return Err(validation("doublet thermometry needs alpha3 and alpha2 windows"));
    }
    let mut points = Vec::new();
    let mut skipped = Vec::new();
    for s in spectra {
        match find_zpls(s, &doublet, opts) {
            Ok(set) => {
                let a3 = set.get(ZplLabel::Alpha3).map(|l| l.area);
                let a2 = set.get(ZplLabel::Alpha2).map(|l| l.area);
                match (a3, a2) {
                    (Some(a3), Some(a2)) if a2 > 0.0 && a3 > 0.0 => points.push(RatioPoint {
                        temperature_k: s.temperature_k,
                        ratio: a3 / a2,
                    }),
                    _ => skipped.push(s.temperature_k),
                }
            }
            Err(Error::LineNotFound(_)) | Err(Error::Fit(_)) => skipped.push(s.temperature_k),
            Err(e) => return Err(e),
        }
    }
    if points.is_empty() {
        return Err(Error::InsufficientData(
            "the doublet is unresolved in every spectrum".into(),
        ));
    }
    let mut result = fit_ratio_model(&points)?;
    for t in skipped {
        result
            .warnings
            .push(format!("doublet unresolved at {t} K; spectrum skipped"));
    }
    Ok(result)
}
