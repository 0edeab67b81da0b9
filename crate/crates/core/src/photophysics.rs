//! Radiative-efficiency budgets and Fabry-Pérot cavity enhancement.

use serde::{Deserialize, Serialize};

use crate::error::{validation, Error, Result};
use crate::model::Site;

pub const DEFAULT_N_SIC: f64 = 2.56;

/// Fraction of cavity emission leaving through the output mirror.
pub const DEFAULT_EXTRACTION: f64 = 0.61;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhotophysicsBudget {
    pub site: Option<Site>,
    pub s_th: f64,
    pub dw_th: f64,
    pub dw_exp: f64,
    pub tau_rad_ns: f64,
    pub tau_tot_ns: f64,
    /// Absent for a purely radiative decay.
    pub tau_nr_ns: Option<f64>,
    pub eta_rad: f64,
    pub eta_tot: f64,
}

impl PhotophysicsBudget {
    /// `1/τ_rad + 1/τ_NR`, inverted.
    pub fn reconstructed_tau_tot(&self) -> f64 {
        match self.tau_nr_ns {
            Some(nr) => 1.0 / (1.0 / self.tau_rad_ns + 1.0 / nr),
            None => self.tau_rad_ns,
        }
    }
}

/// Splits a measured lifetime into radiative and non-radiative parts.
pub fn budget(tau_rad_ns: f64, tau_tot_ns: f64, dw_exp: f64, s_th: f64) -> Result<PhotophysicsBudget> {
    if !(tau_rad_ns > 0.0) || !tau_rad_ns.is_finite() {
        return Err(validation(format!("radiative lifetime {tau_rad_ns} ns must be > 0")));
    }
    if !(tau_tot_ns > 0.0) || !tau_tot_ns.is_finite() {
        return Err(validation(format!("total lifetime {tau_tot_ns} ns must be > 0")));
    }
    if !(dw_exp > 0.0 && dw_exp <= 1.0) {
        return Err(validation(format!("Debye-Waller factor {dw_exp} must lie in (0, 1]")));
    }
    if !(s_th >= 0.0) || !s_th.is_finite() {
        return Err(validation(format!("Huang-Rhys factor {s_th} must be >= 0")));
    }
    if tau_tot_ns > tau_rad_ns {
        return Err(Error::Superradiant { tau_rad_ns, tau_tot_ns });
    }
    let tau_nr_ns = (tau_tot_ns < tau_rad_ns).then(|| tau_rad_ns * tau_tot_ns / (tau_rad_ns - tau_tot_ns));
    let eta_rad = tau_tot_ns / tau_rad_ns;
    Ok(PhotophysicsBudget {
        site: None,
        s_th,
        dw_th: (-s_th).exp(),
        dw_exp,
        tau_rad_ns,
        tau_tot_ns,
        tau_nr_ns,
        eta_rad,
        eta_tot: eta_rad * dw_exp,
    })
}

/// Published radiative properties of one site.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReferenceRow {
    pub site: Site,
    pub s_th: f64,
    pub dw_th: f64,
    pub dw_exp: f64,
    pub tau_rad_ns: f64,
    pub tau_tot_ns: f64,
    pub tau_nr_ns: f64,
    pub eta_rad: f64,
    pub eta_tot: f64,
}

impl ReferenceRow {
    pub const K: ReferenceRow = ReferenceRow {
        site: Site::KCubic,
        s_th: 0.66,
        dw_th: 0.52,
        dw_exp: 0.39,
        tau_rad_ns: 704.0,
        tau_tot_ns: 163.0,
        tau_nr_ns: 212.0,
        eta_rad: 0.23,
        eta_tot: 0.089,
    };

    pub const H: ReferenceRow = ReferenceRow {
        site: Site::HHexagonal,
        s_th: 0.79,
        dw_th: 0.45,
        dw_exp: 0.22,
        tau_rad_ns: 277.0,
        tau_tot_ns: 43.0,
        tau_nr_ns: 47.0,
        eta_rad: 0.15,
        eta_tot: 0.033,
    };

    pub fn for_site(site: Site) -> ReferenceRow {
        match site {
            Site::KCubic => Self::K,
            Site::HHexagonal => Self::H,
        }
    }

    /// Whether `b` was computed from this row's inputs.
    pub fn same_inputs(&self, b: &PhotophysicsBudget) -> bool {
        let eq = |x: f64, y: f64| (x - y).abs() <= 1e-9 * y.abs().max(1.0);
        eq(b.tau_rad_ns, self.tau_rad_ns)
            && eq(b.tau_tot_ns, self.tau_tot_ns)
            && eq(b.dw_exp, self.dw_exp)
            && eq(b.s_th, self.s_th)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Agreement {
    /// Within half a unit of the last printed digit.
    Agrees,
    /// Off by up to one and a half units, attributable to rounded inputs.
    Rounding,
    Discrepant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub quantity: String,
    pub computed: f64,
    pub reference: f64,
    pub agreement: Agreement,
}

fn classify(computed: f64, reference: f64, unit: f64) -> Agreement {
    let d = (computed - reference).abs();
    if d <= 0.5 * unit + 1e-12 {
        Agreement::Agrees
    } else if d <= 1.5 * unit + 1e-12 {
        Agreement::Rounding
    } else {
        Agreement::Discrepant
    }
}

/// Compares a budget against the published row at the row's printed
/// precision.
pub fn compare_with_reference(b: &PhotophysicsBudget, row: &ReferenceRow) -> Vec<Comparison> {
    let mut out = vec![
        Comparison {
            quantity: "dw_th".into(),
            computed: b.dw_th,
            reference: row.dw_th,
            agreement: classify(b.dw_th, row.dw_th, 0.01),
        },
        Comparison {
            quantity: "eta_rad".into(),
            computed: b.eta_rad,
            reference: row.eta_rad,
            agreement: classify(b.eta_rad, row.eta_rad, 0.01),
        },
        Comparison {
            quantity: "eta_tot".into(),
            computed: b.eta_tot,
            reference: row.eta_tot,
            agreement: classify(b.eta_tot, row.eta_tot, 0.001),
        },
    ];
    if let Some(nr) = b.tau_nr_ns {
        out.insert(
            0,
            Comparison {
                quantity: "tau_nr_ns".into(),
                computed: nr,
                reference: row.tau_nr_ns,
                agreement: classify(nr, row.tau_nr_ns, 1.0),
            },
        );
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CavityParams {
    pub wavelength_nm: f64,
    pub finesse: f64,
    /// Mirror radius of curvature; used to derive the waist when
    /// `waist_um` is absent.
    pub roc_mm: Option<f64>,
    pub l_vac_um: f64,
    pub l_sic_um: f64,
    pub n_sic: f64,
    /// 1/e² mode field radius at the emitter.
    pub waist_um: Option<f64>,
    pub eta_tot: f64,
    pub extraction: f64,
}

impl CavityParams {
    /// Telecom fibre microcavity with a 5 µm + 5 µm vacuum/SiC stack.
    pub fn reference() -> Self {
        Self {
            wavelength_nm: 1279.0,
            finesse: 3.4e4,
            roc_mm: Some(1.3),
            l_vac_um: 5.0,
            l_sic_um: 5.0,
            n_sic: DEFAULT_N_SIC,
            waist_um: None,
            eta_tot: 0.089,
            extraction: DEFAULT_EXTRACTION,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64, name: &str| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(validation(format!("{name} = {v} must be > 0")))
            }
        };
        positive(self.wavelength_nm, "wavelength_nm")?;
        if !(self.finesse >= 0.0) || !self.finesse.is_finite() {
            return Err(validation(format!("finesse {} must be >= 0", self.finesse)));
        }
        if !(self.l_vac_um >= 0.0) || !(self.l_sic_um >= 0.0) {
            return Err(validation("cavity lengths must be >= 0"));
        }
        positive(self.l_vac_um + self.l_sic_um, "cavity length")?;
        if !(self.n_sic >= 1.0) {
            return Err(validation(format!("refractive index {} must be >= 1", self.n_sic)));
        }
        if !(self.eta_tot > 0.0 && self.eta_tot <= 1.0) {
            return Err(validation(format!("eta_tot {} must lie in (0, 1]", self.eta_tot)));
        }
        if !(self.extraction > 0.0 && self.extraction <= 1.0) {
            return Err(validation(format!("extraction {} must lie in (0, 1]", self.extraction)));
        }
        if let Some(r) = self.roc_mm {
            positive(r, "roc_mm")?;
        }
        if let Some(w) = self.waist_um {
            positive(w, "waist_um")?;
        }
        Ok(())
    }

    /// Supplied waist, or the plano-concave Gaussian waist
    /// `w₀² = (λ/π)·√(L(R − L))` for geometric length `L`.
    pub fn resolved_waist_um(&self) -> Result<f64> {
        if let Some(w) = self.waist_um {
            return Ok(w);
        }
        let r_um = self
            .roc_mm
            .ok_or_else(|| Error::Configuration("neither waist_um nor roc_mm given".into()))?
            * 1e3;
        let l = self.l_vac_um + self.l_sic_um;
        if !(r_um > l) {
            return Err(Error::Configuration(format!(
                "cavity length {l} µm must be shorter than the mirror radius {r_um} µm"
            )));
        }
        let lambda_um = self.wavelength_nm * 1e-3;
        Ok(((lambda_um / std::f64::consts::PI) * (l * (r_um - l)).sqrt()).sqrt())
    }
}

/// Emitter and cavity-mode cross-sections in m².
pub fn mode_cross_sections(params: &CavityParams) -> Result<(f64, f64)> {
    params.validate()?;
    let lambda = params.wavelength_nm * 1e-9;
    let w = params.resolved_waist_um()? * 1e-6;
    let sigma_e = 3.0 * lambda * lambda / (2.0 * std::f64::consts::PI);
    let sigma_c = std::f64::consts::PI * w * w;
    Ok((sigma_e, sigma_c))
}

/// Field-strength factor of a cavity partially filled with SiC.
pub fn fill_factor(l_vac_um: f64, l_sic_um: f64, n_sic: f64) -> Result<f64> {
    if !(l_vac_um >= 0.0) || !(l_sic_um >= 0.0) || !(l_vac_um + l_sic_um > 0.0) {
        return Err(validation("cavity lengths must be >= 0 with a positive sum"));
    }
    if !(n_sic >= 1.0) {
        return Err(validation(format!("refractive index {n_sic} must be >= 1")));
    }
    Ok((l_vac_um + n_sic * l_sic_um) / (l_vac_um + n_sic * n_sic * l_sic_um))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cooperativity {
    pub waist_um: f64,
    pub sigma_e_m2: f64,
    pub sigma_c_m2: f64,
    pub fill_factor: f64,
    pub cooperativity: f64,
    pub eta_cav: f64,
    pub eta_out: f64,
}

pub fn eta_cav(cooperativity: f64) -> f64 {
    2.0 * cooperativity / (2.0 * cooperativity + 1.0)
}

/// `C = (2/π)(σ_E/σ_C)·η_tot·(f_L/n)·F` and the cavity emission probability.
pub fn cooperativity(params: &CavityParams) -> Result<Cooperativity> {
    let (sigma_e, sigma_c) = mode_cross_sections(params)?;
    let f_l = fill_factor(params.l_vac_um, params.l_sic_um, params.n_sic)?;
    let c = 2.0 / std::f64::consts::PI * (sigma_e / sigma_c) * params.eta_tot * (f_l / params.n_sic) * params.finesse;
    let eta = eta_cav(c);
    Ok(Cooperativity {
        waist_um: params.resolved_waist_um()?,
        sigma_e_m2: sigma_e,
        sigma_c_m2: sigma_c,
        fill_factor: f_l,
        cooperativity: c,
        eta_cav: eta,
        eta_out: eta * params.extraction,
    })
}

/// Cooperativity at `n` finesse values spaced linearly from `from` to `to`.
pub fn sweep_finesse(params: &CavityParams, from: f64, to: f64, n: usize) -> Result<Vec<(f64, Cooperativity)>> {
    if n < 2 {
        return Err(validation("a sweep needs at least 2 points"));
    }
    (0..n)
        .map(|i| {
            let f = from + (to - from) * i as f64 / (n - 1) as f64;
            let p = CavityParams { finesse: f, ..*params };
            cooperativity(&p).map(|c| (f, c))
        })
        .collect()
}
