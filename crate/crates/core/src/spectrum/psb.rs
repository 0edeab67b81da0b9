use serde::{Deserialize, Serialize};

use super::zpl::{ZplLabel, ZplSet};
use super::{per_mev_to_per_nm, per_nm_to_per_mev, phonon_energy_mev, phonon_to_wavelength_nm};
use crate::error::{validation, Error, Result};
use crate::model::{trapezoid, Spectrum};
use crate::nls::{self, Bound, DataPoint, FitError, FitOptions, FitProblem, Model};

pub const DEFAULT_J_MAX: u32 = 10;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Emitter {
    #[default]
    Alpha,
    Beta,
}

/// Replication of each sideband Gaussian onto the lower-energy doublet
/// partner.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Doublet {
    pub splitting_mev: f64,
    /// Weaker over stronger line, in (0, 1].
    pub ratio: f64,
}

/// Gaussian phonon-sideband series
/// `I(δ) = I₀ Σⱼ exp(−((δ − Δ₀)/(√j σ))²) / (√(jπ) σ)`, `j = 1..j_max`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PsbModel {
    pub i0: f64,
    pub sigma_mev: f64,
    pub delta0_mev: f64,
    pub j_max: u32,
    #[serde(default)]
    pub doublet: Option<Doublet>,
    #[serde(default)]
    pub emitter: Emitter,
}

impl PsbModel {
    pub fn new(i0: f64, sigma_mev: f64, delta0_mev: f64, j_max: u32) -> Result<Self> {
        let m = Self {
            i0,
            sigma_mev,
            delta0_mev,
            j_max,
            doublet: None,
            emitter: Emitter::Alpha,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn with_doublet(mut self, doublet: Doublet) -> Result<Self> {
        self.doublet = Some(doublet);
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.i0 >= 0.0) || !self.i0.is_finite() {
            return Err(validation(format!("sideband I0 = {} must be >= 0", self.i0)));
        }
        if !(self.sigma_mev > 0.0) || !self.sigma_mev.is_finite() {
            return Err(validation(format!("sideband sigma = {} must be > 0", self.sigma_mev)));
        }
        if !self.delta0_mev.is_finite() {
            return Err(validation("sideband offset must be finite"));
        }
        if self.j_max < 1 {
            return Err(validation("sideband series needs j_max >= 1"));
        }
        if let Some(d) = self.doublet {
            if !(d.ratio > 0.0 && d.ratio <= 1.0) {
                return Err(validation(format!("doublet ratio {} must lie in (0, 1]", d.ratio)));
            }
            if !d.splitting_mev.is_finite() {
                return Err(validation("doublet splitting must be finite"));
            }
        }
        Ok(())
    }

    /// `(weight, centre)` of each replica.
    fn replicas(&self) -> [(f64, f64); 2] {
        match self.doublet {
            Some(d) => {
                let w = 1.0 / (1.0 + d.ratio);
                [(w, self.delta0_mev), (d.ratio * w, self.delta0_mev + d.splitting_mev)]
            }
            None => [(1.0, self.delta0_mev), (0.0, self.delta0_mev)],
        }
    }

    /// Sideband intensity per meV at phonon energy `δ`.
    pub fn eval(&self, delta_mev: f64) -> f64 {
        let mut v = 0.0;
        for (w, c) in self.replicas() {
            if w == 0.0 {
                continue;
            }
            v += w * series(self.sigma_mev, self.j_max, delta_mev - c);
        }
        self.i0 * v
    }

    /// Total area, `I₀·j_max`.
    pub fn area(&self) -> f64 {
        self.i0 * self.j_max as f64
    }

    /// Area between two phonon energies.
    pub fn area_between(&self, lo_mev: f64, hi_mev: f64) -> f64 {
        if !(hi_mev > lo_mev) {
            return 0.0;
        }
        let mut a = 0.0;
        for (w, c) in self.replicas() {
            if w == 0.0 {
                continue;
            }
            for j in 1..=self.j_max {
                let s = (j as f64).sqrt() * self.sigma_mev;
                a += w * 0.5 * (libm::erf((hi_mev - c) / s) - libm::erf((lo_mev - c) / s));
            }
        }
        self.i0 * a
    }

    /// Sideband as it appears in a spectrum: zero outside `[0, max_phonon]`.
    pub fn eval_clipped(&self, delta_mev: f64, max_phonon_mev: f64) -> f64 {
        if (0.0..=max_phonon_mev).contains(&delta_mev) {
            self.eval(delta_mev)
        } else {
            0.0
        }
    }
}

fn series(sigma: f64, j_max: u32, u: f64) -> f64 {
    let pi_sqrt = std::f64::consts::PI.sqrt();
    (1..=j_max)
        .map(|j| {
            let s = (j as f64).sqrt() * sigma;
            (-(u / s).powi(2)).exp() / (s * pi_sqrt)
        })
        .sum()
}

/// Evaluates a sideband model on a grid of phonon energies.
pub fn psb_eval(model: &PsbModel, delta_mev: &[f64]) -> Vec<f64> {
    delta_mev.iter().map(|&d| model.eval(d)).collect()
}

/// [`PsbModel`] with fixed series length and doublet as a fit model in
/// `[I₀, σ, Δ₀]`.
#[derive(Debug, Clone, Copy)]
pub struct PsbShapeModel {
    pub j_max: u32,
    pub doublet: Option<Doublet>,
}

impl PsbShapeModel {
    fn model(&self, p: &[f64]) -> PsbModel {
        PsbModel {
            i0: p[0],
            sigma_mev: p[1],
            delta0_mev: p[2],
            j_max: self.j_max,
            doublet: self.doublet,
            emitter: Emitter::Alpha,
        }
    }
}

impl Model for PsbShapeModel {
    fn n_params(&self) -> usize {
        3
    }

    fn eval(&self, p: &[f64], delta: f64) -> f64 {
        self.model(p).eval(delta)
    }

    fn partials(&self, p: &[f64], delta: f64, out: &mut [f64]) -> bool {
        let m = self.model(p);
        let pi_sqrt = std::f64::consts::PI.sqrt();
        let (mut d_i0, mut d_sigma, mut d_center) = (0.0, 0.0, 0.0);
        for (w, c) in m.replicas() {
            if w == 0.0 {
                continue;
            }
            let u = delta - c;
            for j in 1..=m.j_max {
                let jf = j as f64;
                let s = jf.sqrt() * m.sigma_mev;
                let g = (-(u / s).powi(2)).exp() / (s * pi_sqrt);
                d_i0 += w * g;
                // g ∝ σ⁻¹ exp(−u²/(jσ²))
                d_sigma += w * g * (-1.0 / m.sigma_mev + 2.0 * u * u / (jf * m.sigma_mev.powi(3)));
                d_center += w * g * 2.0 * u / (jf * m.sigma_mev * m.sigma_mev);
            }
        }
        out[0] = d_i0;
        out[1] = m.i0 * d_sigma;
        out[2] = m.i0 * d_center;
        true
    }

    fn param_names(&self) -> Vec<String> {
        vec!["I0".into(), "sigma".into(), "Delta0".into()]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsbFitOptions {
    pub j_max: u32,
    /// β emits no sideband closer than this to its zero-phonon line.
    pub beta_min_phonon_mev: f64,
    /// No sideband beyond this phonon energy.
    pub max_phonon_mev: f64,
    /// Upper end of the α-only fit region; defaults to the β line plus
    /// `beta_min_phonon_mev`.
    pub fit_max_mev: Option<f64>,
    /// Half-width, in line sigmas, of the excluded zero-phonon cores.
    pub exclusion_sigmas: f64,
    pub exclude_mev: Vec<(f64, f64)>,
    /// Residual ranges assigned to α rather than β.
    pub alpha_mask_mev: Vec<(f64, f64)>,
    pub replicate_doublet: bool,
    /// Overrides the doublet measured from the zero-phonon lines.
    pub doublet: Option<Doublet>,
    /// Starting `[I₀, σ, Δ₀]`.
    pub initial: Option<[f64; 3]>,
    pub nls: FitOptions,
}

impl Default for PsbFitOptions {
    fn default() -> Self {
        Self {
            j_max: DEFAULT_J_MAX,
            beta_min_phonon_mev: 20.0,
            max_phonon_mev: 200.0,
            fit_max_mev: None,
            exclusion_sigmas: 4.0,
            exclude_mev: Vec::new(),
            alpha_mask_mev: Vec::new(),
            replicate_doublet: true,
            doublet: None,
            initial: None,
            nls: FitOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsbFit {
    pub model: PsbModel,
    /// 3σ of `[I₀, σ, Δ₀]`; zero for frozen shape parameters.
    pub sigma3: [f64; 3],
    pub reduced_chi2: f64,
    pub converged: bool,
    /// The shape was held at its starting value after a degenerate fit.
    pub shape_frozen: bool,
    pub reference_nm: f64,
    pub fit_range_mev: (f64, f64),
    pub max_phonon_mev: f64,
    /// Spectrum minus α zero-phonon lines and α sideband, per nm.
    pub beta_residual: Vec<(f64, f64)>,
    /// Residual area inside the α masks.
    pub alpha_masked_area: f64,
    /// Residual noise level per nm.
    pub noise: f64,
    pub warnings: Vec<String>,
}

impl PsbFit {
    /// A fit result carrying a given model and no residual, for
    /// partitioning with an externally determined sideband.
    pub fn from_model(model: PsbModel, reference_nm: f64, max_phonon_mev: f64) -> Self {
        Self {
            model,
            sigma3: [0.0; 3],
            reduced_chi2: 0.0,
            converged: true,
            shape_frozen: false,
            reference_nm,
            fit_range_mev: (0.0, max_phonon_mev),
            max_phonon_mev,
            beta_residual: Vec::new(),
            alpha_masked_area: 0.0,
            noise: 0.0,
            warnings: Vec::new(),
        }
    }

    /// α sideband intensity per nm at `wavelength_nm`.
    pub fn eval_nm(&self, wavelength_nm: f64) -> f64 {
        let d = phonon_energy_mev(self.reference_nm, wavelength_nm);
        per_mev_to_per_nm(self.model.eval_clipped(d, self.max_phonon_mev), wavelength_nm)
    }

    /// α sideband area between two phonon energies, clipped to the
    /// sideband range.
    pub fn area_between(&self, lo_mev: f64, hi_mev: f64) -> f64 {
        self.model
            .area_between(lo_mev.max(0.0), hi_mev.min(self.max_phonon_mev))
    }

    /// Model spectrum: fitted zero-phonon lines plus the α sideband.
    pub fn reconstruction(&self, spectrum: &Spectrum, zpls: &ZplSet) -> Vec<(f64, f64)> {
        spectrum
            .wavelengths()
            .map(|x| {
                let zpl = zpls.eval_lines(x, |l| l != ZplLabel::AlphaP);
                (x, zpl + self.eval_nm(x))
            })
            .collect()
    }
}

fn in_ranges(x: f64, ranges: &[(f64, f64)]) -> bool {
    ranges.iter().any(|&(a, b)| x >= a.min(b) && x <= a.max(b))
}

/// Best linear `I₀` for a fixed shape, and the resulting cost.
fn profile_i0(shape: &PsbShapeModel, sigma: f64, center: f64, data: &[DataPoint]) -> (f64, f64) {
    let unit = [1.0, sigma, center];
    let (mut gy, mut gg) = (0.0, 0.0);
    let g: Vec<f64> = data.iter().map(|d| shape.eval(&unit, d.x)).collect();
    for (d, gi) in data.iter().zip(&g) {
        gy += d.weight * gi * d.y;
        gg += d.weight * gi * gi;
    }
    let i0 = if gg > 0.0 { (gy / gg).max(0.0) } else { 0.0 };
    let cost = data
        .iter()
        .zip(&g)
        .map(|(d, gi)| d.weight * (d.y - i0 * gi).powi(2))
        .sum();
    (i0, cost)
}

fn grid_guess(shape: &PsbShapeModel, data: &[DataPoint], max_phonon: f64) -> [f64; 3] {
    let mut best = (f64::INFINITY, [0.0, 10.0, max_phonon / 4.0]);
    let mut center = 2.5;
    while center <= max_phonon {
        for sigma in [2.0, 3.0, 5.0, 8.0, 12.0, 18.0, 27.0, 40.0] {
            let (i0, cost) = profile_i0(shape, sigma, center, data);
            if cost < best.0 {
                best = (cost, [i0, sigma, center]);
            }
        }
        center += 2.5;
    }
    best.1
}

/// Fits the α sideband in the region free of β sideband emission and
/// assigns what remains of the spectrum to β.
pub fn fit_psb(spectrum: &Spectrum, zpls: &ZplSet, opts: &PsbFitOptions) -> Result<PsbFit> {
    if opts.j_max < 1 {
        return Err(validation("j_max must be >= 1"));
    }
    let a3 = zpls
        .get(ZplLabel::Alpha3)
        .ok_or_else(|| validation("sideband fit needs a fitted alpha3 line"))?;
    let reference = a3.center_nm;
    let max_phonon = opts.max_phonon_mev;
    let (lo_nm, hi_nm) = spectrum.range_nm();
    let needed_nm = phonon_to_wavelength_nm(reference, max_phonon);
    if lo_nm > reference || hi_nm < needed_nm {
        return Err(validation(format!(
            "spectrum {lo_nm:.1}–{hi_nm:.1} nm must cover the zero-phonon line at {reference:.1} nm \
             through {max_phonon} meV of phonon energy ({needed_nm:.1} nm)"
        )));
    }

    let mut warnings = Vec::new();
    let doublet = if !opts.replicate_doublet {
        None
    } else if let Some(d) = opts.doublet {
        Some(d)
    } else if let (Some(a2), Some(split)) = (zpls.get(ZplLabel::Alpha2), zpls.doublet_splitting_mev) {
        let mut ratio = a2.area / a3.area;
        if ratio > 1.0 {
            warnings.push(format!(
                "alpha2 is stronger than alpha3 (ratio {ratio:.3}); doublet ratio clipped to 1"
            ));
            ratio = 1.0;
        }
        (ratio > 0.0).then_some(Doublet {
            splitting_mev: split,
            ratio,
        })
    } else {
        None
    };

    let fit_max = match (opts.fit_max_mev, zpls.get(ZplLabel::Beta)) {
        (Some(m), _) => m,
        (None, Some(b)) => phonon_energy_mev(reference, b.center_nm) + opts.beta_min_phonon_mev,
        (None, None) => max_phonon,
    }
    .min(max_phonon);
    if !(fit_max > 0.0) {
        return Err(validation(format!("empty sideband fit range up to {fit_max} meV")));
    }

    let subtract = |label: ZplLabel| label != ZplLabel::AlphaP;
    let in_core = |x: f64| {
        zpls.lines
            .iter()
            .any(|l| (x - l.center_nm).abs() <= opts.exclusion_sigmas * l.sigma_nm)
    };
    let mut data = Vec::new();
    for p in spectrum.points() {
        let x = p.wavelength_nm;
        let d = phonon_energy_mev(reference, x);
        if d <= 0.0 || d > fit_max || in_core(x) {
            continue;
        }
        if in_ranges(d, &opts.exclude_mev) || in_ranges(d, &opts.alpha_mask_mev) {
            continue;
        }
        let y = p.intensity - zpls.eval_lines(x, subtract);
        let jac = x * x / super::HC_MEV_NM;
        let weight = nls::poisson_weight(p.intensity) / (jac * jac);
        data.push(DataPoint::new(d, per_nm_to_per_mev(y, x), weight));
    }
    if data.len() < 10 {
        return Err(Error::InsufficientData(format!(
            "{} spectrum points in the sideband fit range 0–{fit_max:.1} meV",
            data.len()
        )));
    }

    let shape = PsbShapeModel {
        j_max: opts.j_max,
        doublet,
    };
    let init = opts
        .initial
        .unwrap_or_else(|| grid_guess(&shape, &data, fit_max.max(10.0)));
    let bounds = vec![
        Bound::positive(),
        Bound::new(0.1, max_phonon),
        Bound::new(0.0, max_phonon),
    ];
    let problem = FitProblem::with_bounds(&shape, data.clone(), init.to_vec(), bounds.clone())?;
    let (fit, shape_frozen) = match nls::minimize(&problem, &opts.nls) {
        Ok(f) => (f, false),
        Err(FitError::Degenerate { direction }) => {
            warnings.push(format!(
                "sideband shape not identifiable ({direction}); refitted I0 with sigma and Delta0 held at {:.3} and {:.3} meV",
                init[1], init[2]
            ));
            let frozen = vec![Bound::positive(), Bound::fixed(init[1]), Bound::fixed(init[2])];
            let problem = FitProblem::with_bounds(&shape, data.clone(), init.to_vec(), frozen)?;
            (nls::minimize(&problem, &opts.nls)?, true)
        }
        Err(e) => return Err(e.into()),
    };
    let mut model = shape.model(&fit.parameters);
    model.emitter = Emitter::Alpha;
    if !fit.converged {
        warnings.push("sideband fit did not converge".into());
    }

    let psb_nm = |x: f64| {
        let d = phonon_energy_mev(reference, x);
        per_mev_to_per_nm(model.eval_clipped(d, max_phonon), x)
    };
    // Fit-region scatter in per-nm units sets the noise level.
    let mut sq = 0.0;
    let mut n_fit = 0usize;
    for p in spectrum.points() {
        let x = p.wavelength_nm;
        let d = phonon_energy_mev(reference, x);
        if d > 0.0
            && d <= fit_max
            && !in_core(x)
            && !in_ranges(d, &opts.exclude_mev)
            && !in_ranges(d, &opts.alpha_mask_mev)
        {
            let r = p.intensity - zpls.eval_lines(x, subtract) - psb_nm(x);
            sq += r * r;
            n_fit += 1;
        }
    }
    let peak = spectrum.intensities().map(f64::abs).fold(0.0, f64::max);
    let noise = (sq / n_fit.max(1) as f64).sqrt().max(1e-6 * peak);

    let mut beta_residual = Vec::with_capacity(spectrum.len());
    let mut masked = Vec::new();
    let mut negative = 0usize;
    let mut in_range = 0usize;
    for p in spectrum.points() {
        let x = p.wavelength_nm;
        let d = phonon_energy_mev(reference, x);
        let r = p.intensity - zpls.eval_lines(x, |l| l.is_alpha_zpl()) - psb_nm(x);
        if (0.0..=max_phonon).contains(&d) {
            in_range += 1;
            if r < -3.0 * noise {
                negative += 1;
            }
        }
        if in_ranges(d, &opts.alpha_mask_mev) {
            masked.push((x, r));
            beta_residual.push((x, 0.0));
        } else {
            beta_residual.push((x, r));
        }
    }
    if in_range > 0 && negative as f64 > 0.05 * in_range as f64 {
        return Err(Error::ModelInconsistency(format!(
            "residual after the alpha sideband is below -3x noise on {negative} of {in_range} bins"
        )));
    }
    let alpha_masked_area = opts
        .alpha_mask_mev
        .iter()
        .map(|&(a, b)| {
            let (a, b) = (a.min(b), a.max(b));
            trapezoid(masked.iter().copied().filter(|&(x, _)| {
                let d = phonon_energy_mev(reference, x);
                d >= a && d <= b
            }))
        })
        .sum();

    Ok(PsbFit {
        model,
        sigma3: [fit.sigma3[0], fit.sigma3[1], fit.sigma3[2]],
        reduced_chi2: fit.reduced_chi2,
        converged: fit.converged,
        shape_frozen,
        reference_nm: reference,
        fit_range_mev: (0.0, fit_max),
        max_phonon_mev: max_phonon,
        beta_residual,
        alpha_masked_area,
        noise,
        warnings,
    })
}
