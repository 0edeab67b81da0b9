//! Deterministic synthetic data from known parameters.
//!
//! Every generator takes a 64-bit seed. Each sample draws from its own
//! ChaCha8 stream (`set_stream(index)`), so output depends only on the seed
//! and the sample's position, never on iteration order.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::decay::{thermal_lifetime, ThermalPoint};
use crate::error::{validation, Error, Result};
use crate::model::{read_text, trapezoid, DecayTrace, Metadata, Spectrum, TracePoint, HC_EV_NM};
use crate::spectrum::{
    hr_lineshape, per_mev_to_per_nm, phonon_energy_mev, phonon_to_wavelength_nm, Doublet, Emitter, HrMode, HrModel,
    HrOptions, LineWidth, PsbModel, ZplLabel, ZplLine, ZplSet,
};

/// Rates below this are sampled by inversion, above by a Gaussian.
const POISSON_INVERSION_LIMIT: f64 = 30.0;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseSpec {
    #[default]
    None,
    Poisson,
    Gaussian {
        sigma: f64,
    },
    /// Gaussian with standard deviation proportional to the value.
    RelativeGaussian {
        fraction: f64,
    },
}

impl NoiseSpec {
    fn validate(&self) -> Result<()> {
        match *self {
            NoiseSpec::Gaussian { sigma } if !(sigma >= 0.0) => {
                Err(validation(format!("noise sigma {sigma} must be >= 0")))
            }
            NoiseSpec::RelativeGaussian { fraction } if !(fraction >= 0.0) => {
                Err(validation(format!("noise fraction {fraction} must be >= 0")))
            }
            _ => Ok(()),
        }
    }
}

fn point_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

fn poisson(rate: f64, rng: &mut ChaCha8Rng) -> f64 {
    if rate <= 0.0 {
        return 0.0;
    }
    if rate < POISSON_INVERSION_LIMIT {
        let u: f64 = rng.random();
        let mut k = 0u32;
        let mut p = (-rate).exp();
        let mut cdf = p;
        while u > cdf && k < 1000 {
            k += 1;
            p *= rate / k as f64;
            cdf += p;
        }
        k as f64
    } else {
        let z: f64 = rng.sample(StandardNormal);
        (rate + rate.sqrt() * z).round().max(0.0)
    }
}

/// Applies noise to one expected value.
pub fn noisy(noise: NoiseSpec, value: f64, seed: u64, index: usize) -> f64 {
    match noise {
        NoiseSpec::None => value,
        NoiseSpec::Poisson => poisson(value, &mut point_rng(seed, index)),
        NoiseSpec::Gaussian { sigma } => {
            let z: f64 = point_rng(seed, index).sample(StandardNormal);
            value + sigma * z
        }
        NoiseSpec::RelativeGaussian { fraction } => {
            let z: f64 = point_rng(seed, index).sample(StandardNormal);
            value * (1.0 + fraction * z)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpTruth {
    pub amplitude: f64,
    pub tau_ns: f64,
}

fn default_band_center() -> f64 {
    1280.0
}

fn default_band_width() -> f64 {
    40.0
}

fn default_temperature() -> f64 {
    4.0
}

/// Parameter names match the decay fit report: `background`, `A1`, `tau1`
/// and, for two components, `A2`, `tau2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "FlatDecayTruth", into = "FlatDecayTruth")]
pub struct DecayTruth {
    /// Counts per bin.
    pub background: f64,
    pub pulse_time_ns: f64,
    pub components: Vec<ExpTruth>,
    pub band_center_nm: f64,
    pub band_width_nm: f64,
    pub temperature_k: f64,
}

#[allow(non_snake_case)]
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FlatDecayTruth {
    background: f64,
    pulse_time_ns: f64,
    A1: f64,
    tau1: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    A2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    tau2: Option<f64>,
    #[serde(default = "default_band_center")]
    band_center_nm: f64,
    #[serde(default = "default_band_width")]
    band_width_nm: f64,
    #[serde(default = "default_temperature")]
    temperature_K: f64,
}

impl TryFrom<FlatDecayTruth> for DecayTruth {
    type Error = String;

    fn try_from(f: FlatDecayTruth) -> std::result::Result<Self, String> {
        let mut components = vec![ExpTruth {
            amplitude: f.A1,
            tau_ns: f.tau1,
        }];
        match (f.A2, f.tau2) {
            (Some(amplitude), Some(tau_ns)) => components.push(ExpTruth { amplitude, tau_ns }),
            (None, None) => {}
            _ => return Err("A2 and tau2 must be given together".into()),
        }
        Ok(Self {
            background: f.background,
            pulse_time_ns: f.pulse_time_ns,
            components,
            band_center_nm: f.band_center_nm,
            band_width_nm: f.band_width_nm,
            temperature_k: f.temperature_K,
        })
    }
}

impl From<DecayTruth> for FlatDecayTruth {
    fn from(t: DecayTruth) -> Self {
        let second = t.components.get(1);
        Self {
            background: t.background,
            pulse_time_ns: t.pulse_time_ns,
            A1: t.components.first().map_or(0.0, |c| c.amplitude),
            tau1: t.components.first().map_or(1.0, |c| c.tau_ns),
            A2: second.map(|c| c.amplitude),
            tau2: second.map(|c| c.tau_ns),
            band_center_nm: t.band_center_nm,
            band_width_nm: t.band_width_nm,
            temperature_K: t.temperature_k,
        }
    }
}

impl DecayTruth {
    pub fn single(amplitude: f64, tau_ns: f64, background: f64, pulse_time_ns: f64) -> Self {
        Self {
            background,
            pulse_time_ns,
            components: vec![ExpTruth { amplitude, tau_ns }],
            band_center_nm: default_band_center(),
            band_width_nm: default_band_width(),
            temperature_k: default_temperature(),
        }
    }

    pub fn double(a1: f64, tau1_ns: f64, a2: f64, tau2_ns: f64, background: f64, pulse_time_ns: f64) -> Self {
        let mut t = Self::single(a1, tau1_ns, background, pulse_time_ns);
        t.components.push(ExpTruth {
            amplitude: a2,
            tau_ns: tau2_ns,
        });
        t
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.background >= 0.0) {
            return Err(validation(format!("background {} must be >= 0", self.background)));
        }
        if !self.pulse_time_ns.is_finite() {
            return Err(validation("pulse time must be finite"));
        }
        if self.components.is_empty() || self.components.len() > 2 {
            return Err(validation("decay truth needs one or two components"));
        }
        for c in &self.components {
            if !(c.amplitude >= 0.0) || !(c.tau_ns > 0.0) {
                return Err(validation(format!(
                    "component A = {}, tau = {}: need A >= 0 and tau > 0",
                    c.amplitude, c.tau_ns
                )));
            }
        }
        Ok(())
    }

    /// Expected counts in the bin at `t_ns`.
    pub fn expected(&self, t_ns: f64) -> f64 {
        let dt = t_ns - self.pulse_time_ns;
        let signal: f64 = if dt >= 0.0 {
            self.components
                .iter()
                .map(|c| c.amplitude * (-dt / c.tau_ns).exp())
                .sum()
        } else {
            0.0
        };
        self.background + signal
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecaySampling {
    pub start_ns: f64,
    pub bin_ns: f64,
    pub n_bins: usize,
}

impl DecaySampling {
    pub fn new(start_ns: f64, bin_ns: f64, n_bins: usize) -> Self {
        Self {
            start_ns,
            bin_ns,
            n_bins,
        }
    }
}

pub fn gen_decay_trace(
    truth: &DecayTruth,
    sampling: &DecaySampling,
    noise: NoiseSpec,
    seed: u64,
) -> Result<DecayTrace> {
    truth.validate()?;
    noise.validate()?;
    if !(sampling.bin_ns > 0.0) {
        return Err(validation("bin width must be > 0"));
    }
    let points = (0..sampling.n_bins)
        .map(|i| {
            let t = sampling.start_ns + sampling.bin_ns * i as f64;
            TracePoint {
                time_ns: t,
                counts: noisy(noise, truth.expected(t), seed, i).max(0.0),
            }
        })
        .collect();
    DecayTrace::new(
        points,
        truth.band_center_nm,
        truth.band_width_nm,
        truth.temperature_k,
        truth.pulse_time_ns,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThermalTruth {
    #[serde(rename = "tau")]
    pub tau_ns: f64,
    #[serde(rename = "tau_p")]
    pub tau_p_ns: f64,
    #[serde(rename = "E_p")]
    pub e_p_mev: f64,
    /// Reported per-point uncertainty as a fraction of the lifetime.
    #[serde(default = "default_sigma_fraction")]
    pub sigma_fraction: f64,
}

fn default_sigma_fraction() -> f64 {
    0.02
}

pub fn gen_thermal_points(
    truth: &ThermalTruth,
    temperatures_k: &[f64],
    noise: NoiseSpec,
    seed: u64,
) -> Result<Vec<ThermalPoint>> {
    noise.validate()?;
    if !(truth.tau_ns > 0.0) || !(truth.tau_p_ns > 0.0) || !(truth.e_p_mev >= 0.0) {
        return Err(validation("thermal truth needs tau, tau_p > 0 and E_p >= 0"));
    }
    if !(truth.sigma_fraction > 0.0) {
        return Err(validation("sigma_fraction must be > 0"));
    }
    temperatures_k
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            if !(t > 0.0) {
                return Err(validation(format!("temperature {t} K must be > 0")));
            }
            let tau = thermal_lifetime(truth.tau_ns, truth.tau_p_ns, truth.e_p_mev, t);
            Ok(ThermalPoint {
                temperature_k: t,
                tau_ns: noisy(noise, tau, seed, i),
                sigma_ns: truth.sigma_fraction * tau,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PowerTruth {
    pub prefactor: f64,
    pub exponent: f64,
}

pub fn gen_power_series(truth: &PowerTruth, powers_mw: &[f64], noise: NoiseSpec, seed: u64) -> Result<Vec<(f64, f64)>> {
    noise.validate()?;
    powers_mw
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            if !(p > 0.0) {
                return Err(validation(format!("power {p} mW must be > 0")));
            }
            Ok((p, noisy(noise, truth.prefactor * p.powf(truth.exponent), seed, i)))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolarizationTruth {
    pub a: f64,
    pub b: f64,
    #[serde(default)]
    pub theta0_deg: f64,
}

pub fn gen_polarization_series(
    truth: &PolarizationTruth,
    angles_deg: &[f64],
    noise: NoiseSpec,
    seed: u64,
) -> Result<Vec<(f64, f64)>> {
    noise.validate()?;
    Ok(angles_deg
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            let v = truth.a + truth.b * (t - truth.theta0_deg).to_radians().cos().powi(2);
            (t, noisy(noise, v, seed, i))
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LineTruth {
    #[serde(default)]
    pub label: Option<ZplLabel>,
    pub center_nm: f64,
    pub fwhm_nm: f64,
    /// Intensity·nm.
    pub area: f64,
}

impl LineTruth {
    pub fn sigma_nm(&self) -> f64 {
        self.fwhm_nm / (8.0 * 2f64.ln()).sqrt()
    }

    pub fn eval(&self, wavelength_nm: f64) -> f64 {
        let s = self.sigma_nm();
        let u = (wavelength_nm - self.center_nm) / s;
        self.area / (s * (2.0 * std::f64::consts::PI).sqrt()) * (-0.5 * u * u).exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SidebandTruth {
    /// Zero-phonon line the phonon energy is measured from.
    pub reference_nm: f64,
    pub model: PsbModel,
    /// No emission at or below this phonon energy.
    #[serde(default)]
    pub min_phonon_mev: f64,
    #[serde(default = "default_max_phonon")]
    pub max_phonon_mev: f64,
}

fn default_max_phonon() -> f64 {
    200.0
}

impl SidebandTruth {
    /// Intensity per nm.
    pub fn eval(&self, wavelength_nm: f64) -> f64 {
        let d = phonon_energy_mev(self.reference_nm, wavelength_nm);
        if d <= self.min_phonon_mev || d > self.max_phonon_mev || d < 0.0 {
            return 0.0;
        }
        per_mev_to_per_nm(self.model.eval(d), wavelength_nm)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HrTruth {
    pub modes: Vec<HrMode>,
    pub zpl_nm: f64,
    /// Total area of the lineshape, ZPL included.
    pub area: f64,
    #[serde(default = "default_broadening")]
    pub broadening_mev: f64,
}

fn default_broadening() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectrumTruth {
    #[serde(default)]
    pub lines: Vec<LineTruth>,
    #[serde(default)]
    pub sidebands: Vec<SidebandTruth>,
    #[serde(default)]
    pub hr: Vec<HrTruth>,
    #[serde(default)]
    pub background: f64,
    #[serde(default = "default_temperature", rename = "temperature_K")]
    pub temperature_k: f64,
}

impl SpectrumTruth {
    pub fn validate(&self) -> Result<()> {
        for (i, l) in self.lines.iter().enumerate() {
            if !(l.fwhm_nm > 0.0) || !(l.area >= 0.0) || !(l.center_nm > 0.0) {
                return Err(validation(format!("line {i}: need center > 0, fwhm > 0 and area >= 0")));
            }
            if let Some(label) = l.label {
                if self.lines[..i].iter().any(|o| o.label == Some(label)) {
                    return Err(validation(format!("line `{label}` defined twice")));
                }
            }
        }
        for s in &self.sidebands {
            s.model.validate()?;
            if !(s.reference_nm > 0.0) || !(s.max_phonon_mev > s.min_phonon_mev) {
                return Err(validation(
                    "sideband needs reference_nm > 0 and max_phonon_mev > min_phonon_mev",
                ));
            }
        }
        for h in &self.hr {
            HrModel::new(h.modes.clone(), HC_EV_NM / h.zpl_nm)?;
            if !(h.area >= 0.0) || !(h.broadening_mev > 0.0) {
                return Err(validation("HR component needs area >= 0 and broadening > 0"));
            }
        }
        if !(self.background >= 0.0) || !(self.temperature_k > 0.0) {
            return Err(validation("background must be >= 0 and temperature > 0"));
        }
        Ok(())
    }

    /// The truth lines as a [`ZplSet`], for use in place of fitted lines.
    pub fn zpl_set(&self) -> ZplSet {
        let lines: Vec<ZplLine> = self
            .lines
            .iter()
            .filter_map(|l| {
                let label = l.label?;
                let s = l.sigma_nm();
                Some(ZplLine {
                    label,
                    center_nm: l.center_nm,
                    center_sigma3_nm: 0.0,
                    amplitude: l.area / (s * (2.0 * std::f64::consts::PI).sqrt()),
                    sigma_nm: s,
                    width: LineWidth::Measured {
                        fwhm_nm: l.fwhm_nm,
                        sigma3_nm: 0.0,
                    },
                    area: l.area,
                    area_sigma3: 0.0,
                })
            })
            .collect();
        let a3 = lines.iter().find(|l| l.label == ZplLabel::Alpha3);
        let a2 = lines.iter().find(|l| l.label == ZplLabel::Alpha2);
        let split = match (a3, a2) {
            (Some(a3), Some(a2)) => Some(a3.energy_mev() - a2.energy_mev()),
            _ => None,
        };
        ZplSet {
            lines,
            doublet_splitting_mev: split,
            splitting_sigma3_mev: split.map(|_| 0.0),
            splitting_consistent: None,
            warnings: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WavelengthGrid {
    pub start_nm: f64,
    pub end_nm: f64,
    pub step_nm: f64,
}

impl WavelengthGrid {
    pub fn points(&self) -> Result<Vec<f64>> {
        if !(self.step_nm > 0.0) || !(self.end_nm > self.start_nm) || !(self.start_nm > 0.0) {
            return Err(validation("wavelength grid needs 0 < start < end and step > 0"));
        }
        let n = ((self.end_nm - self.start_nm) / self.step_nm + 1e-9).floor() as usize;
        Ok((0..=n).map(|i| self.start_nm + self.step_nm * i as f64).collect())
    }
}

/// Per-component spectra on a grid.
struct Components {
    grid: Vec<f64>,
    lines: Vec<Vec<f64>>,
    sidebands: Vec<Vec<f64>>,
    hr: Vec<Vec<f64>>,
}

fn components(truth: &SpectrumTruth, grid: &WavelengthGrid) -> Result<Components> {
    truth.validate()?;
    let xs = grid.points()?;
    let lines = truth
        .lines
        .iter()
        .map(|l| xs.iter().map(|&x| l.eval(x)).collect())
        .collect();
    let sidebands = truth
        .sidebands
        .iter()
        .map(|s| xs.iter().map(|&x| s.eval(x)).collect())
        .collect();
    let mut hr = Vec::new();
    for h in &truth.hr {
        let model = HrModel::new(h.modes.clone(), HC_EV_NM / h.zpl_nm)?;
        let energies: Vec<f64> = xs.iter().map(|&x| HC_EV_NM / x).collect();
        let opts = HrOptions {
            broadening_mev: h.broadening_mev,
            ..HrOptions::default()
        };
        let shape = hr_lineshape(&model, &energies, &opts)?;
        // per eV → per nm
        hr.push(
            xs.iter()
                .zip(&shape.intensity)
                .map(|(&x, &i)| h.area * i * HC_EV_NM / (x * x))
                .collect(),
        );
    }
    Ok(Components {
        grid: xs,
        lines,
        sidebands,
        hr,
    })
}

/// Noise-free sum of all components.
pub fn spectrum_expected(truth: &SpectrumTruth, grid: &WavelengthGrid) -> Result<Vec<(f64, f64)>> {
    let c = components(truth, grid)?;
    Ok(c.grid
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let v = truth.background
                + c.lines.iter().map(|l| l[i]).sum::<f64>()
                + c.sidebands.iter().map(|s| s[i]).sum::<f64>()
                + c.hr.iter().map(|h| h[i]).sum::<f64>();
            (x, v)
        })
        .collect())
}

pub fn gen_spectrum(truth: &SpectrumTruth, grid: &WavelengthGrid, noise: NoiseSpec, seed: u64) -> Result<Spectrum> {
    noise.validate()?;
    let pairs: Vec<(f64, f64)> = spectrum_expected(truth, grid)?
        .into_iter()
        .enumerate()
        .map(|(i, (x, v))| (x, noisy(noise, v, seed, i).max(0.0)))
        .collect();
    Spectrum::from_pairs(&pairs, truth.temperature_k)
}

/// Areas of each generated component on the sampling grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentAreas {
    pub lines: Vec<(Option<ZplLabel>, f64)>,
    pub sidebands: Vec<(Emitter, f64)>,
    pub hr: Vec<f64>,
    pub total: f64,
}

/// Debye-Waller values a partition of the generated spectrum should find.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstructedDw {
    pub mean: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl ComponentAreas {
    pub fn of(truth: &SpectrumTruth, grid: &WavelengthGrid) -> Result<Self> {
        let c = components(truth, grid)?;
        let area = |v: &Vec<f64>| trapezoid(c.grid.iter().copied().zip(v.iter().copied()));
        let lines: Vec<(Option<ZplLabel>, f64)> = truth
            .lines
            .iter()
            .zip(&c.lines)
            .map(|(l, v)| (l.label, area(v)))
            .collect();
        let sidebands: Vec<(Emitter, f64)> = truth
            .sidebands
            .iter()
            .zip(&c.sidebands)
            .map(|(s, v)| (s.model.emitter, area(v)))
            .collect();
        let hr: Vec<f64> = c.hr.iter().map(area).collect();
        let span = c.grid[c.grid.len() - 1] - c.grid[0];
        let total = lines.iter().map(|l| l.1).sum::<f64>()
            + sidebands.iter().map(|s| s.1).sum::<f64>()
            + hr.iter().sum::<f64>()
            + truth.background * span;
        Ok(Self {
            lines,
            sidebands,
            hr,
            total,
        })
    }

    fn zpl(&self, pick: impl Fn(ZplLabel) -> bool) -> f64 {
        self.lines
            .iter()
            .filter(|(l, _)| l.is_some_and(&pick))
            .map(|l| l.1)
            .sum()
    }

    fn sideband(&self, emitter: Emitter) -> f64 {
        self.sidebands.iter().filter(|s| s.0 == emitter).map(|s| s.1).sum()
    }

    pub fn constructed_dw(&self) -> ConstructedDw {
        let za = self.zpl(|l| l.is_alpha_zpl());
        let zb = self.zpl(|l| l == ZplLabel::Beta);
        let frac = |z: f64, p: f64| if z + p > 0.0 { z / (z + p) } else { 0.0 };
        ConstructedDw {
            mean: (za + zb) / self.total,
            alpha: frac(za, self.sideband(Emitter::Alpha)),
            beta: frac(zb, self.sideband(Emitter::Beta)),
        }
    }
}

/// Target areas of the reference composite, as fractions of the total.
const REF_ZPL_ALPHA: f64 = 0.2753;
const REF_ZPL_BETA: f64 = 0.0647;
const REF_PSB_ALPHA: f64 = 0.4306;
const REF_PSB_BETA: f64 = 0.2294;

/// A vanadium-like low-temperature spectrum: α doublet (70:30, 1.47 meV
/// apart) with its Gaussian-series sideband, and a β line whose sideband
/// starts 20 meV from its ZPL. Component areas sum to `total`.
pub fn reference_composite_truth(total: f64) -> (SpectrumTruth, WavelengthGrid) {
    let alpha3 = 1278.8;
    let beta = 1334.0;
    let splitting = 1.47;
    let alpha2 = phonon_to_wavelength_nm(alpha3, splitting);
    let ratio = 3.0 / 7.0;

    let alpha_shape = PsbModel {
        i0: 1.0,
        sigma_mev: 8.0,
        delta0_mev: 58.0,
        j_max: 10,
        doublet: Some(Doublet {
            splitting_mev: splitting,
            ratio,
        }),
        emitter: Emitter::Alpha,
    };
    let beta_shape = PsbModel {
        i0: 1.0,
        sigma_mev: 9.0,
        delta0_mev: 60.0,
        j_max: 10,
        doublet: None,
        emitter: Emitter::Beta,
    };
    let (beta_min, beta_max) = (20.0, 150.0);
    let alpha_unit = alpha_shape.area_between(0.0, 200.0);
    let beta_unit = beta_shape.area_between(beta_min, beta_max);

    let truth = SpectrumTruth {
        lines: vec![
            LineTruth {
                label: Some(ZplLabel::Alpha3),
                center_nm: alpha3,
                fwhm_nm: 0.3,
                area: total * REF_ZPL_ALPHA / (1.0 + ratio),
            },
            LineTruth {
                label: Some(ZplLabel::Alpha2),
                center_nm: alpha2,
                fwhm_nm: 0.3,
                area: total * REF_ZPL_ALPHA * ratio / (1.0 + ratio),
            },
            LineTruth {
                label: Some(ZplLabel::Beta),
                center_nm: beta,
                fwhm_nm: 0.4,
                area: total * REF_ZPL_BETA,
            },
        ],
        sidebands: vec![
            SidebandTruth {
                reference_nm: alpha3,
                model: PsbModel {
                    i0: total * REF_PSB_ALPHA / alpha_unit,
                    ..alpha_shape
                },
                min_phonon_mev: 0.0,
                max_phonon_mev: 200.0,
            },
            SidebandTruth {
                reference_nm: beta,
                model: PsbModel {
                    i0: total * REF_PSB_BETA / beta_unit,
                    ..beta_shape
                },
                min_phonon_mev: beta_min,
                max_phonon_mev: beta_max,
            },
        ],
        hr: Vec::new(),
        background: 0.0,
        temperature_k: 4.0,
    };
    let grid = WavelengthGrid {
        start_nm: 1240.0,
        end_nm: 1650.0,
        step_nm: 0.05,
    };
    (truth, grid)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorKind {
    Decay,
    Spectrum,
    ThermalSeries,
    PowerSeries,
    PolarizationSeries,
}

/// Generator specification file:
///
/// ```toml
/// seed = 7
/// kind = "decay"
///
/// [noise]
/// type = "poisson"
///
/// [truth]
/// background = 20.0
/// pulse_time_ns = 100.0
/// A1 = 1e4
/// tau1 = 164.2
///
/// [sampling]
/// start_ns = 0.0
/// bin_ns = 1.0
/// n_bins = 1500
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorSpec {
    pub seed: u64,
    pub kind: GeneratorKind,
    #[serde(default)]
    pub noise: NoiseSpec,
    pub truth: toml::Table,
    pub sampling: toml::Table,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TemperatureSampling {
    #[serde(rename = "temperatures_K")]
    temperatures_k: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PowerSampling {
    #[serde(rename = "powers_mW")]
    powers_mw: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AngleSampling {
    angles_deg: Vec<f64>,
}

/// Output of a generator run.
#[derive(Debug, Clone, PartialEq)]
pub enum Generated {
    Decay(DecayTrace),
    Spectrum(Spectrum),
    ThermalSeries(Vec<ThermalPoint>),
    PowerSeries(Vec<(f64, f64)>),
    PolarizationSeries(Vec<(f64, f64)>),
}

impl Generated {
    /// Column text in the format the corresponding loader reads.
    pub fn to_text(&self) -> String {
        match self {
            Generated::Decay(t) => t.to_text(),
            Generated::Spectrum(s) => s.to_text(),
            Generated::ThermalSeries(pts) => {
                let mut out = String::from("# temperature_K,tau_ns,sigma_ns\n");
                for p in pts {
                    out.push_str(&format!("{},{},{}\n", p.temperature_k, p.tau_ns, p.sigma_ns));
                }
                out
            }
            Generated::PowerSeries(pts) => two_column("power_mW,intensity", pts),
            Generated::PolarizationSeries(pts) => two_column("angle_deg,intensity", pts),
        }
    }

    /// Sidecar metadata, where the data type carries any.
    pub fn metadata(&self) -> Option<Metadata> {
        match self {
            Generated::Decay(t) => Some(t.metadata()),
            Generated::Spectrum(s) => Some(s.metadata()),
            _ => None,
        }
    }
}

fn two_column(header: &str, pts: &[(f64, f64)]) -> String {
    let mut out = format!("# {header}\n");
    for (x, y) in pts {
        out.push_str(&format!("{x},{y}\n"));
    }
    out
}

fn decode<T: serde::de::DeserializeOwned>(table: &toml::Table, what: &str) -> Result<T> {
    table
        .clone()
        .try_into()
        .map_err(|e| Error::Configuration(format!("{what}: {e}")))
}

impl GeneratorSpec {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Configuration(format!("generator spec: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&read_text(path)?).map_err(|e| Error::Configuration(format!("{}: {e}", path.display())))
    }

    pub fn generate(&self) -> Result<Generated> {
        match self.kind {
            GeneratorKind::Decay => {
                let truth: DecayTruth = decode(&self.truth, "truth")?;
                let sampling: DecaySampling = decode(&self.sampling, "sampling")?;
                gen_decay_trace(&truth, &sampling, self.noise, self.seed).map(Generated::Decay)
            }
            GeneratorKind::Spectrum => {
                let truth: SpectrumTruth = decode(&self.truth, "truth")?;
                let grid: WavelengthGrid = decode(&self.sampling, "sampling")?;
                gen_spectrum(&truth, &grid, self.noise, self.seed).map(Generated::Spectrum)
            }
            GeneratorKind::ThermalSeries => {
                let truth: ThermalTruth = decode(&self.truth, "truth")?;
                let s: TemperatureSampling = decode(&self.sampling, "sampling")?;
                gen_thermal_points(&truth, &s.temperatures_k, self.noise, self.seed).map(Generated::ThermalSeries)
            }
            GeneratorKind::PowerSeries => {
                let truth: PowerTruth = decode(&self.truth, "truth")?;
                let s: PowerSampling = decode(&self.sampling, "sampling")?;
                gen_power_series(&truth, &s.powers_mw, self.noise, self.seed).map(Generated::PowerSeries)
            }
            GeneratorKind::PolarizationSeries => {
                let truth: PolarizationTruth = decode(&self.truth, "truth")?;
                let s: AngleSampling = decode(&self.sampling, "sampling")?;
                gen_polarization_series(&truth, &s.angles_deg, self.noise, self.seed).map(Generated::PolarizationSeries)
            }
        }
    }
}
