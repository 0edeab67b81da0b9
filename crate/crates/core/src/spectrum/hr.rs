use serde::{Deserialize, Serialize};

use crate::error::{validation, Error, Result};

/// Poisson weight left beyond the last phonon order.
const TAIL_TOLERANCE: f64 = 1e-12;
const MAX_ORDER: usize = 400;
/// Weight allowed in phonon orders that may extend below the grid.
const COVERAGE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HrMode {
    /// Partial Huang-Rhys factor.
    pub s: f64,
    pub energy_mev: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HrModel {
    pub modes: Vec<HrMode>,
    pub s_total: f64,
    pub zpl_energy_ev: f64,
}

impl HrModel {
    pub fn new(modes: Vec<HrMode>, zpl_energy_ev: f64) -> Result<Self> {
        for m in &modes {
            if !(m.s >= 0.0) || !m.s.is_finite() {
                return Err(validation(format!("partial Huang-Rhys factor {} must be >= 0", m.s)));
            }
            if !(m.energy_mev > 0.0) || !m.energy_mev.is_finite() {
                return Err(validation(format!("phonon energy {} meV must be > 0", m.energy_mev)));
            }
        }
        if !(zpl_energy_ev > 0.0) {
            return Err(validation("zero-phonon energy must be > 0"));
        }
        let s_total = modes.iter().map(|m| m.s).sum();
        Ok(Self {
            modes,
            s_total,
            zpl_energy_ev,
        })
    }

    /// Rescales the partial factors so they sum to `s_total`.
    pub fn with_total(s_total: f64, modes: Vec<HrMode>, zpl_energy_ev: f64) -> Result<Self> {
        if !(s_total >= 0.0) {
            return Err(validation(format!("total Huang-Rhys factor {s_total} must be >= 0")));
        }
        let model = Self::new(modes, zpl_energy_ev)?;
        if s_total == 0.0 {
            return Ok(Self { s_total: 0.0, ..model });
        }
        if model.s_total == 0.0 {
            return Err(Error::ModelInconsistency(format!(
                "total Huang-Rhys factor {s_total} needs at least one phonon mode"
            )));
        }
        let k = s_total / model.s_total;
        Ok(Self {
            modes: model
                .modes
                .iter()
                .map(|m| HrMode {
                    s: m.s * k,
                    energy_mev: m.energy_mev,
                })
                .collect(),
            s_total,
            zpl_energy_ev,
        })
    }

    /// `exp(−S_total)`.
    pub fn debye_waller(&self) -> f64 {
        (-self.s_total).exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HrOptions {
    /// Minimum number of phonon orders; raised until the omitted Poisson
    /// weight is below 1e-12.
    pub n_max: usize,
    /// Gaussian standard deviation applied to every line.
    pub broadening_mev: f64,
    /// Bin width of the phonon-energy distribution.
    pub bin_mev: f64,
}

impl Default for HrOptions {
    fn default() -> Self {
        Self {
            n_max: 8,
            broadening_mev: 1.0,
            bin_mev: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HrLineshape {
    pub energies_ev: Vec<f64>,
    /// Per eV; unit area over an unbounded grid.
    pub intensity: Vec<f64>,
    /// Fraction of the emission in the zero-phonon line.
    pub zpl_weight: f64,
    /// Weight of each phonon order, starting with the ZPL.
    pub order_weights: Vec<f64>,
    /// Whether the grid reaches every phonon order carrying more than 1e-9
    /// of the weight.
    pub grid_covers_sideband: bool,
}

/// Splits each mode between the two neighbouring bins so that total weight
/// and mean energy are preserved.
fn one_phonon(model: &HrModel, bin: f64) -> Vec<(usize, f64)> {
    let mut out: Vec<(usize, f64)> = Vec::new();
    let mut add = |i: usize, w: f64| {
        if w == 0.0 {
            return;
        }
        match out.iter_mut().find(|e| e.0 == i) {
            Some(e) => e.1 += w,
            None => out.push((i, w)),
        }
    };
    for m in &model.modes {
        let w = m.s / model.s_total;
        let pos = m.energy_mev / bin;
        let i = pos.floor();
        let frac = pos - i;
        add(i as usize, w * (1.0 - frac));
        add(i as usize + 1, w * frac);
    }
    out
}

fn poisson_weights(s: f64, n_min: usize) -> Vec<f64> {
    let mut w = vec![(-s).exp()];
    let mut cum = w[0];
    let mut n = 0;
    while n < n_min || (1.0 - cum > TAIL_TOLERANCE && n < MAX_ORDER) {
        n += 1;
        let next = w[n - 1] * s / n as f64;
        w.push(next);
        cum += next;
    }
    w
}

/// Multi-phonon emission lineshape in the Huang-Rhys approximation.
pub fn hr_lineshape(model: &HrModel, energies_ev: &[f64], opts: &HrOptions) -> Result<HrLineshape> {
    if energies_ev.iter().any(|e| !e.is_finite()) {
        return Err(validation("energy grid must be finite"));
    }
    if !(opts.broadening_mev > 0.0) || !(opts.bin_mev > 0.0) {
        return Err(validation("broadening and bin width must be > 0"));
    }
    if model.s_total > 0.0 && model.modes.iter().all(|m| m.s == 0.0) {
        return Err(Error::ModelInconsistency(
            "nonzero Huang-Rhys factor without phonon modes".into(),
        ));
    }

    let raw = if model.s_total > 0.0 {
        poisson_weights(model.s_total, opts.n_max)
    } else {
        vec![1.0]
    };
    let norm: f64 = raw.iter().sum();
    let order_weights: Vec<f64> = raw.iter().map(|w| w / norm).collect();

    // Sticks at phonon energy (meV) with weight.
    let mut sticks: Vec<(f64, f64)> = vec![(0.0, order_weights[0])];
    if order_weights.len() > 1 {
        let p = one_phonon(model, opts.bin_mev);
        let mut power: Vec<f64> = vec![1.0];
        for &wn in &order_weights[1..] {
            let reach = power.len() + p.iter().map(|e| e.0).max().unwrap_or(0);
            let mut next = vec![0.0; reach];
            for (i, &v) in power.iter().enumerate() {
                if v == 0.0 {
                    continue;
                }
                for &(k, pk) in &p {
                    next[i + k] += v * pk;
                }
            }
            power = next;
            sticks.extend(
                power
                    .iter()
                    .enumerate()
                    .filter(|(_, v)| **v * wn > 0.0)
                    .map(|(i, v)| (i as f64 * opts.bin_mev, v * wn)),
            );
        }
    }

    let sigma_ev = opts.broadening_mev * 1e-3;
    let norm_g = 1.0 / (sigma_ev * (2.0 * std::f64::consts::PI).sqrt());
    let mut order: Vec<usize> = (0..energies_ev.len()).collect();
    order.sort_by(|&a, &b| energies_ev[a].total_cmp(&energies_ev[b]));
    let sorted: Vec<f64> = order.iter().map(|&i| energies_ev[i]).collect();
    let mut acc = vec![0.0; sorted.len()];
    for &(eps, w) in &sticks {
        let center = model.zpl_energy_ev - eps * 1e-3;
        let lo = sorted.partition_point(|&e| e < center - 9.0 * sigma_ev);
        let hi = sorted.partition_point(|&e| e <= center + 9.0 * sigma_ev);
        for k in lo..hi {
            let u = (sorted[k] - center) / sigma_ev;
            acc[k] += w * norm_g * (-0.5 * u * u).exp();
        }
    }
    let mut intensity = vec![0.0; energies_ev.len()];
    for (k, &i) in order.iter().enumerate() {
        intensity[i] = acc[k];
    }

    // Weight of the orders that can reach below the grid must be negligible.
    let max_mode = model.modes.iter().map(|m| m.energy_mev).fold(0.0, f64::max);
    let grid_covers_sideband = match (sorted.first(), sorted.last()) {
        (Some(&lo), Some(&hi)) if hi >= model.zpl_energy_ev => {
            let missed: f64 = order_weights
                .iter()
                .enumerate()
                .filter(|(n, _)| model.zpl_energy_ev - *n as f64 * max_mode * 1e-3 < lo)
                .map(|(_, w)| w)
                .sum();
            missed < COVERAGE_TOLERANCE
        }
        _ => false,
    };

    Ok(HrLineshape {
        energies_ev: energies_ev.to_vec(),
        intensity,
        zpl_weight: order_weights[0],
        order_weights,
        grid_covers_sideband,
    })
}
