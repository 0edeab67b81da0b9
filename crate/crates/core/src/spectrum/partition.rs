use serde::{Deserialize, Serialize};

use super::phonon_energy_mev;
use super::psb::PsbFit;
use super::zpl::{ZplLabel, ZplSet};
use crate::error::{validation, Error, Result};
use crate::model::{trapezoid, Spectrum};

/// Scales the recorded ZPL fraction (over one half) to the estimated
/// fraction of the full emission (about one third), accounting for sideband
/// emission beyond the recorded window.
pub const DEFAULT_TRUNCATION_MULTIPLIER: f64 = 2.0 / 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PartitionOptions {
    /// Phonon energy (from α₃) separating α-only sideband from the shared
    /// region; defaults to the β line plus `beta_min_phonon_mev`.
    pub partition_mev: Option<f64>,
    pub beta_min_phonon_mev: f64,
    pub truncation_multiplier: f64,
}

impl Default for PartitionOptions {
    fn default() -> Self {
        Self {
            partition_mev: None,
            beta_min_phonon_mev: 20.0,
            truncation_multiplier: DEFAULT_TRUNCATION_MULTIPLIER,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DwPartition {
    /// Zero-phonon share of all recorded emission.
    pub dw_mean: f64,
    /// α Debye-Waller factor with the shared region given wholly to α
    /// (low) or wholly to β (high).
    pub dw_alpha_bounds: (f64, f64),
    pub dw_beta_low: f64,
    pub dw_alpha_refined: Option<f64>,
    pub dw_beta_refined: Option<f64>,
    pub partition_mev: f64,
    pub zpl_area_alpha: f64,
    pub zpl_area_beta: f64,
    pub total_area: f64,
    /// Sideband area below the partition (α only).
    pub psb_low: f64,
    /// Sideband area above the partition (α and β).
    pub psb_high: f64,
    /// Share of the shared region given to α by the sideband fit.
    pub alpha_high: Option<f64>,
    pub truncation_multiplier: f64,
    /// `dw_mean` scaled by the truncation multiplier.
    pub corrected_zpl_fraction: f64,
    pub warnings: Vec<String>,
}

impl DwPartition {
    /// Whether `0 ≤ low ≤ refined ≤ high ≤ 1` for α and
    /// `0 ≤ β_low ≤ β_refined ≤ 1` hold.
    pub fn ordering_holds(&self) -> bool {
        let (lo, hi) = self.dw_alpha_bounds;
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        let alpha = unit(lo) && unit(hi) && lo <= hi && self.dw_alpha_refined.is_none_or(|r| lo <= r && r <= hi);
        let beta = unit(self.dw_beta_low) && self.dw_beta_refined.is_none_or(|r| self.dw_beta_low <= r && r <= 1.0);
        alpha && beta
    }
}

fn ratio(num: f64, rest: f64) -> f64 {
    if num <= 0.0 {
        0.0
    } else {
        (num / (num + rest.max(0.0))).clamp(0.0, 1.0)
    }
}

/// Splits the recorded emission into zero-phonon and sideband parts and
/// bounds the Debye-Waller factors of the α and β defects.
pub fn partition_dw(
    spectrum: &Spectrum,
    zpls: &ZplSet,
    opts: &PartitionOptions,
    psb_fit: Option<&PsbFit>,
) -> Result<DwPartition> {
    let reference = zpls
        .get(ZplLabel::Alpha3)
        .ok_or_else(|| validation("partitioning needs the alpha3 line"))?
        .center_nm;
    let partition = match (opts.partition_mev, zpls.get(ZplLabel::Beta)) {
        (Some(p), _) => p,
        (None, Some(b)) => phonon_energy_mev(reference, b.center_nm) + opts.beta_min_phonon_mev,
        (None, None) => {
            return Err(validation(
                "partition energy not given and no beta line to derive it from",
            ))
        }
    };
    if !(opts.truncation_multiplier > 0.0 && opts.truncation_multiplier <= 1.0) {
        return Err(validation("truncation multiplier must lie in (0, 1]"));
    }

    let total = trapezoid(spectrum.points().iter().map(|p| (p.wavelength_nm, p.intensity)));
    if !(total > 0.0) {
        return Err(Error::Domain(format!("total emission area {total} is not positive")));
    }
    let z_alpha = zpls.alpha_area().max(0.0);
    let z_beta = zpls.beta_area().max(0.0);
    let psb_total = (total - z_alpha - z_beta).max(0.0);
    let high_raw = trapezoid(
        spectrum
            .points()
            .iter()
            .filter(|p| phonon_energy_mev(reference, p.wavelength_nm) >= partition)
            .map(|p| {
                let x = p.wavelength_nm;
                (x, p.intensity - zpls.eval_lines(x, |l| l != ZplLabel::AlphaP))
            }),
    );
    let psb_high = high_raw.clamp(0.0, psb_total);
    let psb_low = psb_total - psb_high;

    let mut warnings = Vec::new();
    let dw_mean = ((z_alpha + z_beta) / total).clamp(0.0, 1.0);
    let alpha_lo = ratio(z_alpha, psb_low + psb_high);
    let alpha_hi = ratio(z_alpha, psb_low);
    let beta_low = ratio(z_beta, psb_high);

    let (alpha_high, alpha_refined, beta_refined) = match psb_fit {
        Some(fit) => {
            let (_, hi_nm) = spectrum.range_nm();
            let edge = phonon_energy_mev(reference, hi_nm);
            let modelled = fit.area_between(partition, edge) + fit.alpha_masked_area;
            let a_high = modelled.clamp(0.0, psb_high);
            if a_high < modelled {
                warnings.push(format!(
                    "fitted alpha sideband above the partition ({modelled:.4}) exceeds the measured shared area ({psb_high:.4}); clipped"
                ));
            }
            (
                Some(a_high),
                Some(ratio(z_alpha, psb_low + a_high).clamp(alpha_lo, alpha_hi)),
                Some(if z_beta > 0.0 {
                    ratio(z_beta, psb_high - a_high).max(beta_low)
                } else {
                    0.0
                }),
            )
        }
        None => (None, None, None),
    };

    Ok(DwPartition {
        dw_mean,
        dw_alpha_bounds: (alpha_lo, alpha_hi),
        dw_beta_low: beta_low,
        dw_alpha_refined: alpha_refined,
        dw_beta_refined: beta_refined,
        partition_mev: partition,
        zpl_area_alpha: z_alpha,
        zpl_area_beta: z_beta,
        total_area: total,
        psb_low,
        psb_high,
        alpha_high,
        truncation_multiplier: opts.truncation_multiplier,
        corrected_zpl_fraction: dw_mean * opts.truncation_multiplier,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectrum::{LineWidth, ZplLine};

    fn line(label: ZplLabel, center: f64, area: f64) -> ZplLine {
        let sigma = 0.12;
        ZplLine {
            label,
            center_nm: center,
            center_sigma3_nm: 0.0,
            amplitude: area / (sigma * (2.0 * std::f64::consts::PI).sqrt()),
            sigma_nm: sigma,
            width: LineWidth::Measured {
                fwhm_nm: 0.28,
                sigma3_nm: 0.0,
            },
            area,
            area_sigma3: 0.0,
        }
    }

    fn set(lines: Vec<ZplLine>) -> ZplSet {
        ZplSet {
            lines,
            doublet_splitting_mev: None,
            splitting_sigma3_mev: None,
            splitting_consistent: None,
            warnings: vec![],
        }
    }

    fn spectrum_of(zpls: &ZplSet, extra: impl Fn(f64) -> f64) -> Spectrum {
        let pairs: Vec<(f64, f64)> = (0..8000)
            .map(|i| {
                let x = 1260.0 + 0.025 * i as f64;
                (x, zpls.eval_lines(x, |_| true) + extra(x))
            })
            .collect();
        Spectrum::from_pairs(&pairs, 4.0).unwrap()
    }

    #[test]
    fn pure_zero_phonon_lines() {
        let z = set(vec![
            line(ZplLabel::Alpha3, 1278.8, 7.0),
            line(ZplLabel::Alpha2, 1280.7, 3.0),
            line(ZplLabel::Beta, 1334.0, 2.0),
        ]);
        let s = spectrum_of(&z, |_| 0.0);
        let p = partition_dw(&s, &z, &PartitionOptions::default(), None).unwrap();
        assert!((p.dw_mean - 1.0).abs() < 1e-6, "{p:?}");
        assert!((p.dw_alpha_bounds.0 - 1.0).abs() < 1e-6);
        assert!((p.dw_alpha_bounds.1 - 1.0).abs() < 1e-6);
        assert!((p.dw_beta_low - 1.0).abs() < 1e-6);
        assert!(p.ordering_holds());
    }

    #[test]
    fn zero_zpl_areas() {
        let z = set(vec![
            line(ZplLabel::Alpha3, 1278.8, 0.0),
            line(ZplLabel::Beta, 1334.0, 0.0),
        ]);
        let s = spectrum_of(&z, |_| 1.0);
        let p = partition_dw(&s, &z, &PartitionOptions::default(), None).unwrap();
        assert_eq!(p.dw_mean, 0.0);
        assert_eq!(p.dw_alpha_bounds, (0.0, 0.0));
        assert_eq!(p.dw_beta_low, 0.0);
    }

    #[test]
    fn zero_total_is_a_domain_error() {
        let z = set(vec![line(ZplLabel::Alpha3, 1278.8, 0.0)]);
        let s = spectrum_of(&z, |_| 0.0);
        let opts = PartitionOptions {
            partition_mev: Some(60.0),
            ..Default::default()
        };
        assert!(matches!(partition_dw(&s, &z, &opts, None), Err(Error::Domain(_))));
    }

    #[test]
    fn bounds_from_flat_sideband() {
        let z = set(vec![
            line(ZplLabel::Alpha3, 1278.8, 10.0),
            line(ZplLabel::Beta, 1334.0, 2.0),
        ]);
        // Unit sideband from 1280 nm on.
        let s = spectrum_of(&z, |x| if x > 1280.0 { 0.01 } else { 0.0 });
        let p = partition_dw(&s, &z, &PartitionOptions::default(), None).unwrap();
        let (lo, hi) = p.dw_alpha_bounds;
        assert!(lo < hi);
        assert!((lo - 10.0 / (10.0 + p.psb_low + p.psb_high)).abs() < 1e-12);
        assert!((p.psb_low + p.psb_high + 12.0 - p.total_area).abs() < 1e-6);
        assert!((p.corrected_zpl_fraction - p.dw_mean * 2.0 / 3.0).abs() < 1e-15);
        assert!(p.ordering_holds());
    }
}
