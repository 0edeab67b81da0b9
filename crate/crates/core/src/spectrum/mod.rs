//! Photoluminescence spectrum analysis: zero-phonon lines, doublet
//! thermometry, excitation checks, phonon sidebands and Debye-Waller
//! partitioning.
//!
//! Spectra are stored per wavelength; sideband models work in phonon energy
//! `δ = E_ref − E` (meV) measured from a reference zero-phonon line.

mod checks;
mod hr;
mod partition;
mod psb;
mod zpl;

pub use checks::{
    doublet_ratio_vs_t, fit_ratio_model, polarization_fit, power_law_check, ratio_model, DoubletThermometry, LineModel,
    PolarizationFit, PolarizationModel, PowerLawFit, RatioModel, RatioPoint, DOMINANT_SHARE_REFERENCE,
    DOMINANT_SHARE_TOLERANCE,
};
pub use hr::{hr_lineshape, HrLineshape, HrMode, HrModel, HrOptions};
pub use partition::{partition_dw, DwPartition, PartitionOptions, DEFAULT_TRUNCATION_MULTIPLIER};
pub use psb::{fit_psb, psb_eval, Doublet, Emitter, PsbFit, PsbFitOptions, PsbModel, PsbShapeModel, DEFAULT_J_MAX};
pub use zpl::{
    find_zpls, LineWidth, PeakModel, ZplConfig, ZplLabel, ZplLine, ZplOptions, ZplSet, ZplWindow,
    SPLITTING_REFERENCE_MEV, SPLITTING_TOLERANCE_MEV,
};

use crate::model::HC_EV_NM;

/// `hc` in meV·nm.
pub const HC_MEV_NM: f64 = HC_EV_NM * 1000.0;

/// Phonon energy in meV of light at `wavelength_nm` relative to a line at
/// `reference_nm`.
pub fn phonon_energy_mev(reference_nm: f64, wavelength_nm: f64) -> f64 {
    HC_MEV_NM / reference_nm - HC_MEV_NM / wavelength_nm
}

pub fn phonon_to_wavelength_nm(reference_nm: f64, delta_mev: f64) -> f64 {
    HC_MEV_NM / (HC_MEV_NM / reference_nm - delta_mev)
}

/// Converts a spectral density per nm into one per meV.
pub fn per_nm_to_per_mev(intensity: f64, wavelength_nm: f64) -> f64 {
    intensity * wavelength_nm * wavelength_nm / HC_MEV_NM
}

pub fn per_mev_to_per_nm(intensity: f64, wavelength_nm: f64) -> f64 {
    intensity * HC_MEV_NM / (wavelength_nm * wavelength_nm)
}
