//! Fluorescence-decay fitting and temperature-dependent lifetime models.
//!
//! Traces are background-subtracted with the mean of the pre-pulse bins and
//! fitted with one or two exponentials measured from the pulse instant.
//! Lifetimes versus temperature follow a thermally activated non-radiative
//! channel, `1/τ_tot = 1/τ + exp(−E_p / k_B T) / τ_p`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{validation, Error, Result};
use crate::model::DecayTrace;
use crate::nls::{self, Bound, DataPoint, FitError, FitOptions, FitProblem, FitResult, Model};

/// Boltzmann constant in meV/K.
pub const BOLTZMANN_MEV_PER_K: f64 = 0.0861733;

/// ΔAIC by which a double exponential must beat a single one.
pub const DEFAULT_AIC_THRESHOLD: f64 = 10.0;

/// Relative τ separation below which a double fit collapses to a single one.
const COLLAPSE_REL_TAU: f64 = 0.02;

/// Relative difference under which two lifetimes belong to one channel.
pub const CHANNEL_MATCH_REL: f64 = 0.30;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Background {
    /// Mean counts per bin.
    pub mean: f64,
    pub std_error: f64,
    /// Per-bin sample standard deviation.
    pub std_dev: f64,
    pub n_bins: usize,
}

/// Mean and standard error of the bins preceding the excitation pulse.
pub fn estimate_background(trace: &DecayTrace) -> Result<Background> {
    let pre: Vec<f64> = trace
        .points()
        .iter()
        .filter(|p| p.time_ns < trace.pulse_time_ns)
        .map(|p| p.counts)
        .collect();
    if pre.len() < crate::model::MIN_BASELINE_BINS {
        return Err(Error::InsufficientData(format!(
            "{} pre-pulse bins, need {}",
            pre.len(),
            crate::model::MIN_BASELINE_BINS
        )));
    }
    let n = pre.len() as f64;
    let mean = pre.iter().sum::<f64>() / n;
    let var = pre.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok(Background {
        mean,
        std_error: (var / n).sqrt(),
        std_dev: var.sqrt(),
        n_bins: pre.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecayKind {
    Single,
    Double,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KindSelection {
    Single,
    Double,
    Auto,
}

impl std::str::FromStr for KindSelection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single" => Ok(Self::Single),
            "double" => Ok(Self::Double),
            "auto" => Ok(Self::Auto),
            other => Err(validation(format!(
                "unknown decay kind `{other}` (expected auto, single or double)"
            ))),
        }
    }
}

/// Sum of exponentials `Σ Aₖ exp(−t/τₖ)`, parameters `[A₁, τ₁, A₂, τ₂, …]`.
#[derive(Debug, Clone, Copy)]
pub struct MultiExp {
    pub n_components: usize,
}

impl Model for MultiExp {
    fn n_params(&self) -> usize {
        2 * self.n_components
    }

    fn eval(&self, p: &[f64], t: f64) -> f64 {
        p.chunks_exact(2).map(|c| c[0] * (-t / c[1]).exp()).sum()
    }

    fn partials(&self, p: &[f64], t: f64, out: &mut [f64]) -> bool {
        for (c, o) in p.chunks_exact(2).zip(out.chunks_exact_mut(2)) {
            let e = (-t / c[1]).exp();
            o[0] = e;
            o[1] = c[0] * e * t / (c[1] * c[1]);
        }
        true
    }

    fn param_names(&self) -> Vec<String> {
        (1..=self.n_components)
            .flat_map(|k| [format!("A{k}"), format!("tau{k}")])
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpComponent {
    /// Counts per bin at the pulse instant.
    pub amplitude: f64,
    pub tau_ns: f64,
    pub amplitude_sigma3: f64,
    pub tau_sigma3: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayFitResult {
    pub background: Background,
    /// One or two components; for two, ordered by τ descending.
    pub components: Vec<ExpComponent>,
    pub model_kind: DecayKind,
    pub reduced_chi2: f64,
    pub chi2: f64,
    pub aic: f64,
    /// ΔAIC (single − double) when both models were fitted.
    pub delta_aic: Option<f64>,
    pub window_ns: (f64, f64),
    pub converged: bool,
    pub warnings: Vec<String>,
}

impl DecayFitResult {
    /// Expected background-free counts at absolute time `t`.
    pub fn eval(&self, t_ns: f64, pulse_time_ns: f64) -> f64 {
        let dt = t_ns - pulse_time_ns;
        if dt < 0.0 {
            return 0.0;
        }
        self.components
            .iter()
            .map(|c| c.amplitude * (-dt / c.tau_ns).exp())
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayFitOptions {
    pub kind: KindSelection,
    /// Absolute fit window; defaults to pulse + 2 bins through the last bin
    /// at least 3σ above background.
    pub window_ns: Option<(f64, f64)>,
    /// Pins the slow component's lifetime in double fits.
    pub fixed_slow_tau_ns: Option<f64>,
    /// Pins the fast component's amplitude in double fits.
    pub fixed_fast_amplitude: Option<f64>,
    pub aic_threshold: f64,
    /// After the first fit (weights 1/max(observed, 1)), refit with weights
    /// from the predicted counts until the parameters settle. Removes the low
    /// bias that observed-count weights give at tens of counts per bin.
    pub model_weights: bool,
    pub nls: FitOptions,
}

impl Default for DecayFitOptions {
    fn default() -> Self {
        Self {
            kind: KindSelection::Auto,
            window_ns: None,
            fixed_slow_tau_ns: None,
            fixed_fast_amplitude: None,
            aic_threshold: DEFAULT_AIC_THRESHOLD,
            model_weights: true,
            nls: FitOptions::default(),
        }
    }
}

fn default_window(trace: &DecayTrace, bg: &Background) -> Result<(f64, f64)> {
    let bin = trace.bin_width_ns();
    let start = trace.pulse_time_ns + 2.0 * bin;
    let threshold = bg.mean + 3.0 * bg.std_dev;
    let end = trace
        .points()
        .iter()
        .filter(|p| p.time_ns >= start && p.counts >= threshold)
        .map(|p| p.time_ns)
        .fold(f64::NAN, f64::max);
    if !end.is_finite() {
        return Err(Error::InsufficientData(
            "no bin after the pulse rises 3σ above background".into(),
        ));
    }
    Ok((start, end))
}

struct Prepared {
    data: Vec<DataPoint>,
    background: Background,
    window: (f64, f64),
    bin: f64,
    span: f64,
}

fn prepare(trace: &DecayTrace, window: Option<(f64, f64)>) -> Result<Prepared> {
    let background = estimate_background(trace)?;
    let window = match window {
        Some(w) => w,
        None => default_window(trace, &background)?,
    };
    if window.0 < trace.pulse_time_ns {
        return Err(validation(format!(
            "fit window starts at {} ns, before the pulse at {} ns",
            window.0, trace.pulse_time_ns
        )));
    }
    if !(window.1 > window.0) {
        return Err(validation(format!("empty fit window {window:?}")));
    }
    let data: Vec<DataPoint> = trace
        .points()
        .iter()
        .filter(|p| p.time_ns >= window.0 && p.time_ns <= window.1)
        .map(|p| {
            DataPoint::new(
                p.time_ns - trace.pulse_time_ns,
                p.counts - background.mean,
                nls::poisson_weight(p.counts),
            )
        })
        .collect();
    if data.len() < 6 {
        return Err(Error::InsufficientData(format!(
            "{} bins in fit window {window:?}",
            data.len()
        )));
    }
    Ok(Prepared {
        data,
        background,
        window,
        bin: trace.bin_width_ns(),
        span: window.1 - trace.pulse_time_ns,
    })
}

/// Refits at most this many times with predicted-count weights.
const MAX_REWEIGHT: usize = 8;

impl Prepared {
    fn solve(&self, model: &MultiExp, init: Vec<f64>, bounds: Vec<Bound>, opts: &DecayFitOptions) -> Result<FitResult> {
        let problem = FitProblem::with_bounds(model, self.data.clone(), init, bounds.clone())?;
        let mut fit = nls::minimize(&problem, &opts.nls)?;
        let mut data = self.data.clone();
        if opts.model_weights {
            let bg = self.background.mean;
            for _ in 0..MAX_REWEIGHT {
                data = self
                    .data
                    .iter()
                    .map(|d| {
                        let mu = bg + model.eval(&fit.parameters, d.x);
                        DataPoint::new(d.x, d.y, nls::poisson_weight(mu))
                    })
                    .collect();
                let problem = FitProblem::with_bounds(model, data.clone(), fit.parameters.clone(), bounds.clone())?;
                let next = nls::minimize(&problem, &opts.nls)?;
                let settled = next
                    .parameters
                    .iter()
                    .zip(&fit.parameters)
                    .all(|(a, b)| (a - b).abs() <= 1e-9 * b.abs().max(1e-12));
                fit = next;
                if settled {
                    break;
                }
            }
        }
        self.add_background_variance(model, &mut fit, &data, &bounds);
        Ok(fit)
    }

    /// Propagates the background-mean uncertainty into the parameter
    /// covariance through the linear response of the fit to a baseline shift.
    fn add_background_variance(&self, model: &MultiExp, fit: &mut FitResult, data: &[DataPoint], bounds: &[Bound]) {
        let free: Vec<usize> = (0..bounds.len()).filter(|&j| !bounds[j].is_fixed()).collect();
        let xs: Vec<f64> = data.iter().map(|d| d.x).collect();
        let Some(jac) = nls::analytic_jacobian(model, &fit.parameters, &xs) else {
            return;
        };
        let k = free.len();
        let mut jtwj = DMatrix::<f64>::zeros(k, k);
        let mut jtw1 = DVector::<f64>::zeros(k);
        for (i, d) in data.iter().enumerate() {
            for (a, &ja) in free.iter().enumerate() {
                jtw1[a] += d.weight * jac[(i, ja)];
                for (b, &jb) in free.iter().enumerate() {
                    jtwj[(a, b)] += d.weight * jac[(i, ja)] * jac[(i, jb)];
                }
            }
        }
        let Some(sens) = jtwj.lu().solve(&jtw1) else {
            return;
        };
        let var_bg = self.background.std_error.powi(2);
        for (a, &ja) in free.iter().enumerate() {
            for (b, &jb) in free.iter().enumerate() {
                fit.covariance[ja][jb] += sens[a] * sens[b] * var_bg;
            }
        }
        for (j, s3) in fit.sigma3.iter_mut().enumerate() {
            *s3 = 3.0 * fit.covariance[j][j].max(0.0).sqrt();
        }
    }

    fn tau_bound(&self) -> Bound {
        Bound::new(0.1 * self.bin, 1e3 * self.span)
    }

    /// Log-linear estimate of a single exponential from the first and last
    /// thirds of the window.
    fn single_guess(&self) -> (f64, f64) {
        let n = self.data.len();
        let third = (n / 3).max(1);
        let mean = |s: &[DataPoint]| {
            let y = s.iter().map(|d| d.y).sum::<f64>() / s.len() as f64;
            let x = s.iter().map(|d| d.x).sum::<f64>() / s.len() as f64;
            (x, y)
        };
        let (x0, y0) = mean(&self.data[..third]);
        let (x1, y1) = mean(&self.data[n - third..]);
        let b = self.tau_bound();
        let tau = if y0 > 0.0 && y1 > 0.0 && y0 > y1 {
            (x1 - x0) / (y0 / y1).ln()
        } else {
            self.span / 3.0
        };
        let tau = tau.clamp(b.lower * 10.0, b.upper / 10.0);
        let amp = (y0.max(1.0)) * (x0 / tau).exp();
        (amp.max(1e-6), tau)
    }

    fn fit_single(&self, opts: &DecayFitOptions) -> Result<FitResult> {
        let model = MultiExp { n_components: 1 };
        let (a, tau) = self.single_guess();
        self.solve(&model, vec![a, tau], vec![Bound::positive(), self.tau_bound()], opts)
    }

    fn fit_double(&self, single: &FitResult, opts: &DecayFitOptions) -> Result<FitResult> {
        let model = MultiExp { n_components: 2 };
        let tb = self.tau_bound();
        let (a, tau) = (single.parameters[0], single.parameters[1]);
        let slow = (3.0 * tau).min(tb.upper);
        let fast = (tau / 3.0).max(tb.lower);
        let mut init = vec![a / 2.0, slow, a / 2.0, fast];
        let mut bounds = vec![Bound::positive(), tb, Bound::positive(), tb];
        if let Some(t) = opts.fixed_slow_tau_ns {
            if !(t > 0.0) {
                return Err(validation("fixed slow lifetime must be > 0"));
            }
            init[1] = t;
            bounds[1] = Bound::fixed(t);
        }
        if let Some(amp) = opts.fixed_fast_amplitude {
            init[2] = amp;
            bounds[2] = Bound::fixed(amp);
        }
        self.solve(&model, init, bounds, opts)
    }
}

fn aic(fit: &FitResult) -> f64 {
    fit.chi2 + 2.0 * fit.n_free as f64
}

fn components(fit: &FitResult) -> Vec<ExpComponent> {
    let mut comps: Vec<ExpComponent> = fit
        .parameters
        .chunks_exact(2)
        .zip(fit.sigma3.chunks_exact(2))
        .map(|(p, s)| ExpComponent {
            amplitude: p[0],
            tau_ns: p[1],
            amplitude_sigma3: s[0],
            tau_sigma3: s[1],
        })
        .collect();
    comps.sort_by(|a, b| b.tau_ns.total_cmp(&a.tau_ns));
    comps
}

fn bound_warnings(fit: &FitResult, warnings: &mut Vec<String>) {
    for (name, at) in fit.names.iter().zip(&fit.at_bound) {
        if *at && name.starts_with("tau") {
            warnings.push(format!("{name} reached its bound (boundary solution)"));
        }
    }
    if !fit.converged {
        warnings.push("fit did not converge within the iteration limit".into());
    }
}

enum DoubleOutcome {
    Fit(FitResult),
    Collapsed(String),
}

fn try_double(prep: &Prepared, single: &FitResult, opts: &DecayFitOptions) -> Result<DoubleOutcome> {
    match prep.fit_double(single, opts) {
        Ok(fit) => {
            let (t1, t2) = (fit.parameters[1], fit.parameters[3]);
            let rel = (t1 - t2).abs() / t1.max(t2);
            if rel < COLLAPSE_REL_TAU {
                Ok(DoubleOutcome::Collapsed(format!(
                    "double fit collapsed to single: tau1 = {t1:.3} ns and tau2 = {t2:.3} ns are indistinguishable"
                )))
            } else {
                Ok(DoubleOutcome::Fit(fit))
            }
        }
        Err(Error::Fit(FitError::Degenerate { direction })) => Ok(DoubleOutcome::Collapsed(format!(
            "double fit collapsed to single: degenerate along {direction}"
        ))),
        Err(e) => Err(e),
    }
}

fn assemble(
    prep: &Prepared,
    fit: &FitResult,
    kind: DecayKind,
    delta_aic: Option<f64>,
    mut warnings: Vec<String>,
) -> DecayFitResult {
    bound_warnings(fit, &mut warnings);
    DecayFitResult {
        background: prep.background,
        components: components(fit),
        model_kind: kind,
        reduced_chi2: fit.reduced_chi2,
        chi2: fit.chi2,
        aic: aic(fit),
        delta_aic,
        window_ns: prep.window,
        converged: fit.converged,
        warnings,
    }
}

/// Fits one or two exponentials to a background-subtracted decay trace.
pub fn fit_decay(trace: &DecayTrace, opts: &DecayFitOptions) -> Result<DecayFitResult> {
    let prep = prepare(trace, opts.window_ns)?;
    let single = prep.fit_single(opts)?;
    match opts.kind {
        KindSelection::Single => Ok(assemble(&prep, &single, DecayKind::Single, None, vec![])),
        KindSelection::Double => match try_double(&prep, &single, opts)? {
            DoubleOutcome::Fit(d) => {
                let delta = aic(&single) - aic(&d);
                Ok(assemble(&prep, &d, DecayKind::Double, Some(delta), vec![]))
            }
            DoubleOutcome::Collapsed(w) => Ok(assemble(&prep, &single, DecayKind::Single, None, vec![w])),
        },
        KindSelection::Auto => match try_double(&prep, &single, opts)? {
            DoubleOutcome::Fit(d) => {
                let delta = aic(&single) - aic(&d);
                if delta > opts.aic_threshold {
                    Ok(assemble(&prep, &d, DecayKind::Double, Some(delta), vec![]))
                } else {
                    Ok(assemble(&prep, &single, DecayKind::Single, Some(delta), vec![]))
                }
            }
            DoubleOutcome::Collapsed(w) => Ok(assemble(&prep, &single, DecayKind::Single, None, vec![w])),
        },
    }
}

/// Total lifetime with a thermally activated non-radiative channel.
pub fn thermal_lifetime(tau_ns: f64, tau_p_ns: f64, e_p_mev: f64, temperature_k: f64) -> f64 {
    let rate = 1.0 / tau_ns + (-e_p_mev / (BOLTZMANN_MEV_PER_K * temperature_k)).exp() / tau_p_ns;
    1.0 / rate
}

/// Parameters `[τ, τ_p, E_p]`, abscissa temperature in K.
#[derive(Debug, Clone, Copy, Default)]
pub struct ThermalLifetimeModel;

impl Model for ThermalLifetimeModel {
    fn n_params(&self) -> usize {
        3
    }

    fn eval(&self, p: &[f64], t: f64) -> f64 {
        thermal_lifetime(p[0], p[1], p[2], t)
    }

    fn partials(&self, p: &[f64], t: f64, out: &mut [f64]) -> bool {
        let (tau, tau_p, e) = (p[0], p[1], p[2]);
        let boltz = (-e / (BOLTZMANN_MEV_PER_K * t)).exp();
        let rate = 1.0 / tau + boltz / tau_p;
        let inv_r2 = 1.0 / (rate * rate);
        // f = 1/rate, ∂f = −∂rate / rate²
        out[0] = inv_r2 / (tau * tau);
        out[1] = inv_r2 * boltz / (tau_p * tau_p);
        out[2] = inv_r2 * boltz / (tau_p * BOLTZMANN_MEV_PER_K * t);
        true
    }

    fn param_names(&self) -> Vec<String> {
        vec!["tau".into(), "tau_p".into(), "E_p".into()]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThermalPoint {
    pub temperature_k: f64,
    pub tau_ns: f64,
    pub sigma_ns: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThermalModel {
    pub tau_ns: f64,
    pub tau_p_ns: f64,
    pub e_p_mev: f64,
    /// 3σ half-widths of `[τ, τ_p, E_p]`.
    pub sigma3: [f64; 3],
    pub reduced_chi2: f64,
    pub converged: bool,
}

impl ThermalModel {
    pub fn lifetime(&self, temperature_k: f64) -> f64 {
        thermal_lifetime(self.tau_ns, self.tau_p_ns, self.e_p_mev, temperature_k)
    }
}

fn thermal_guess(points: &[ThermalPoint]) -> [f64; 3] {
    let mut sorted = points.to_vec();
    sorted.sort_by(|a, b| a.temperature_k.total_cmp(&b.temperature_k));
    let tau0 = sorted[0]
        .tau_ns
        .max(sorted.iter().map(|p| p.tau_ns).fold(0.0, f64::max) * 0.999);
    // ln(1/τ_tot − 1/τ) = −ln τ_p − E_p/(k_B T) for points that dropped.
    let pairs: Vec<(f64, f64)> = sorted
        .iter()
        .filter(|p| p.tau_ns < 0.97 * tau0)
        .map(|p| {
            (
                1.0 / (BOLTZMANN_MEV_PER_K * p.temperature_k),
                (1.0 / p.tau_ns - 1.0 / tau0).ln(),
            )
        })
        .collect();
    if pairs.len() >= 2 {
        let n = pairs.len() as f64;
        let sx: f64 = pairs.iter().map(|p| p.0).sum();
        let sy: f64 = pairs.iter().map(|p| p.1).sum();
        let sxx: f64 = pairs.iter().map(|p| p.0 * p.0).sum();
        let sxy: f64 = pairs.iter().map(|p| p.0 * p.1).sum();
        let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
        let intercept = (sy - slope * sx) / n;
        let e = -slope;
        let tau_p = (-intercept).exp();
        if e > 0.0 && e.is_finite() && tau_p.is_finite() && tau_p > 0.0 {
            return [tau0, tau_p, e];
        }
    }
    [tau0, tau0, 10.0]
}

/// Weighted fit of lifetimes versus temperature.
pub fn fit_thermal(points: &[ThermalPoint], options: &FitOptions) -> Result<ThermalModel> {
    for p in points {
        if !(p.temperature_k > 0.0) || !(p.tau_ns > 0.0) || !(p.sigma_ns > 0.0) {
            return Err(validation(format!(
                "thermal point {p:?}: temperature, lifetime and sigma must be > 0"
            )));
        }
    }
    let mut temps: Vec<f64> = points.iter().map(|p| p.temperature_k).collect();
    temps.sort_by(f64::total_cmp);
    temps.dedup();
    if temps.len() == 1 {
        return Err(Error::Fit(FitError::Degenerate {
            direction: "all points share one temperature; tau_p and E_p are inseparable".into(),
        }));
    }
    if points.len() < 4 || temps.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "{} points at {} distinct temperatures; need >= 4 points at >= 3 temperatures",
            points.len(),
            temps.len()
        )));
    }
    let data: Vec<DataPoint> = points
        .iter()
        .map(|p| DataPoint::new(p.temperature_k, p.tau_ns, 1.0 / (p.sigma_ns * p.sigma_ns)))
        .collect();
    let model = ThermalLifetimeModel;
    let bounds = vec![Bound::at_least(1e-9), Bound::at_least(1e-9), Bound::at_least(0.0)];
    let problem = FitProblem::with_bounds(&model, data, thermal_guess(points).to_vec(), bounds)?;
    let fit = nls::minimize(&problem, options)?;
    Ok(ThermalModel {
        tau_ns: fit.parameters[0],
        tau_p_ns: fit.parameters[1],
        e_p_mev: fit.parameters[2],
        sigma3: [fit.sigma3[0], fit.sigma3[1], fit.sigma3[2]],
        reduced_chi2: fit.reduced_chi2,
        converged: fit.converged,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LifetimeSample {
    pub tau_ns: f64,
    /// One standard deviation.
    pub sigma_ns: f64,
    pub band_center_nm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PooledLifetime {
    pub tau_ns: f64,
    pub sigma_ns: f64,
    pub n_samples: usize,
    pub band_centers_nm: Vec<f64>,
}

/// Inverse-variance mean of lifetime samples, grouped into decay channels
/// whose members lie within 30 % of the channel mean.
pub fn pool_samples(samples: &[LifetimeSample]) -> Result<Vec<PooledLifetime>> {
    if samples.is_empty() {
        return Err(Error::NoData("no lifetime samples to pool".into()));
    }
    for s in samples {
        if !(s.tau_ns > 0.0) || !(s.sigma_ns > 0.0) {
            return Err(validation(format!("lifetime sample {s:?}: tau and sigma must be > 0")));
        }
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.tau_ns.total_cmp(&b.tau_ns));
    let mut groups: Vec<Vec<LifetimeSample>> = Vec::new();
    for s in sorted {
        match groups.last_mut() {
            Some(g) => {
                let mean = g.iter().map(|x| x.tau_ns).sum::<f64>() / g.len() as f64;
                if (s.tau_ns - mean).abs() / mean.max(s.tau_ns) < CHANNEL_MATCH_REL {
                    g.push(s);
                } else {
                    groups.push(vec![s]);
                }
            }
            None => groups.push(vec![s]),
        }
    }
    Ok(groups
        .into_iter()
        .map(|g| {
            // Weights relative to the most precise sample keep a lone sample exact.
            let s_min = g.iter().map(|s| s.sigma_ns).fold(f64::INFINITY, f64::min);
            let w = |s: &LifetimeSample| (s_min / s.sigma_ns).powi(2);
            let wsum: f64 = g.iter().map(w).sum();
            let mean = g.iter().map(|s| w(s) * s.tau_ns).sum::<f64>() / wsum;
            PooledLifetime {
                tau_ns: mean,
                sigma_ns: s_min / wsum.sqrt(),
                n_samples: g.len(),
                band_centers_nm: g.iter().map(|s| s.band_center_nm).collect(),
            }
        })
        .collect())
}

/// Pools every fitted component across traces from different bands.
pub fn pool_lifetimes(results: &[(DecayFitResult, f64)]) -> Result<Vec<PooledLifetime>> {
    let samples: Vec<LifetimeSample> = results
        .iter()
        .flat_map(|(fit, band)| {
            fit.components.iter().map(move |c| LifetimeSample {
                tau_ns: c.tau_ns,
                sigma_ns: c.tau_sigma3 / 3.0,
                band_center_nm: *band,
            })
        })
        .collect();
    pool_samples(&samples)
}
