//! Domain records shared by every analysis: spectra, decay traces, site
//! assignments and energy values, plus the two-column text loaders.
//!
//! All wavelengths are vacuum wavelengths in nm. Intensities are detector
//! counts without response correction.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{validation, Error, Result};

/// hc in eV·nm; converts vacuum wavelength to photon energy.
pub const HC_EV_NM: f64 = 1239.84198;

/// Relative tolerance on decay-trace bin uniformity.
pub const BIN_UNIFORMITY_TOL: f64 = 1e-6;

/// Minimum number of pre-pulse samples a decay trace must carry.
pub const MIN_BASELINE_BINS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EnergyUnit {
    #[serde(rename = "meV")]
    MilliElectronVolt,
    #[serde(rename = "eV")]
    ElectronVolt,
}

/// An energy with an explicit unit tag.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyValue {
    pub value: f64,
    pub unit: EnergyUnit,
}

impl EnergyValue {
    pub fn ev(value: f64) -> Self {
        Self {
            value,
            unit: EnergyUnit::ElectronVolt,
        }
    }

    pub fn mev(value: f64) -> Self {
        Self {
            value,
            unit: EnergyUnit::MilliElectronVolt,
        }
    }

    pub fn as_ev(&self) -> f64 {
        match self.unit {
            EnergyUnit::ElectronVolt => self.value,
            EnergyUnit::MilliElectronVolt => self.value * 1e-3,
        }
    }

    pub fn as_mev(&self) -> f64 {
        match self.unit {
            EnergyUnit::ElectronVolt => self.value * 1e3,
            EnergyUnit::MilliElectronVolt => self.value,
        }
    }
}

impl fmt::Display for EnergyValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.unit {
            EnergyUnit::ElectronVolt => write!(f, "{} eV", self.value),
            EnergyUnit::MilliElectronVolt => write!(f, "{} meV", self.value),
        }
    }
}

/// Photon energy of a vacuum wavelength.
pub fn wavelength_to_energy(wavelength_nm: f64) -> Result<EnergyValue> {
    if !(wavelength_nm > 0.0) || !wavelength_nm.is_finite() {
        return Err(Error::Domain(format!(
            "wavelength must be positive and finite, got {wavelength_nm} nm"
        )));
    }
    Ok(EnergyValue::ev(HC_EV_NM / wavelength_nm))
}

/// Vacuum wavelength (nm) of a photon energy.
pub fn energy_to_wavelength(energy: EnergyValue) -> Result<f64> {
    let ev = energy.as_ev();
    if !(ev > 0.0) || !ev.is_finite() {
        return Err(Error::Domain(format!(
            "energy must be positive and finite, got {energy}"
        )));
    }
    Ok(HC_EV_NM / ev)
}

/// Optional run metadata, from CLI flags or a sidecar TOML file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Metadata {
    #[serde(rename = "temperature_K", skip_serializing_if = "Option::is_none")]
    pub temperature_k: Option<f64>,
    #[serde(rename = "power_mW", skip_serializing_if = "Option::is_none")]
    pub power_mw: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub band_center_nm: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub band_width_nm: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pulse_time_ns: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub polarization_deg: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

impl Metadata {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| validation(format!("metadata: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = read_text(path)?;
        toml::from_str(&text).map_err(|e| validation(format!("{}: {e}", path.display())))
    }

    /// Sidecar location used by the CLI: `<data file>.meta.toml`.
    pub fn sidecar_path(data_path: &Path) -> PathBuf {
        let mut name = data_path.as_os_str().to_owned();
        name.push(".meta.toml");
        PathBuf::from(name)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("metadata serializes")
    }

    /// Fields set in `other` override fields in `self`.
    pub fn merged(&self, other: &Metadata) -> Metadata {
        Metadata {
            temperature_k: other.temperature_k.or(self.temperature_k),
            power_mw: other.power_mw.or(self.power_mw),
            band_center_nm: other.band_center_nm.or(self.band_center_nm),
            band_width_nm: other.band_width_nm.or(self.band_width_nm),
            pulse_time_ns: other.pulse_time_ns.or(self.pulse_time_ns),
            polarization_deg: other.polarization_deg.or(self.polarization_deg),
            label: other.label.clone().or_else(|| self.label.clone()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectrumPoint {
    pub wavelength_nm: f64,
    pub intensity: f64,
}

/// Wavelength-indexed photoluminescence intensity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    points: Vec<SpectrumPoint>,
    pub temperature_k: f64,
    pub excitation_power_mw: Option<f64>,
    pub polarization_deg: Option<f64>,
    pub label: String,
}

impl Spectrum {
    /// Builds a spectrum from points already in ascending wavelength order.
    pub fn new(points: Vec<SpectrumPoint>, temperature_k: f64) -> Result<Self> {
        if !(temperature_k > 0.0) || !temperature_k.is_finite() {
            return Err(validation(format!(
                "spectrum temperature must be > 0 K, got {temperature_k}"
            )));
        }
        if points.is_empty() {
            return Err(validation("spectrum has no points"));
        }
        for (i, p) in points.iter().enumerate() {
            if !p.wavelength_nm.is_finite() || p.wavelength_nm <= 0.0 {
                return Err(validation(format!(
                    "point {i}: wavelength {} is not a positive finite value",
                    p.wavelength_nm
                )));
            }
            if !p.intensity.is_finite() || p.intensity < 0.0 {
                return Err(validation(format!(
                    "point {i}: intensity {} must be finite and >= 0",
                    p.intensity
                )));
            }
        }
        if let Some(i) = points.windows(2).position(|w| w[1].wavelength_nm <= w[0].wavelength_nm) {
            return Err(validation(format!(
                "wavelengths not strictly increasing at point {}",
                i + 1
            )));
        }
        Ok(Self {
            points,
            temperature_k,
            excitation_power_mw: None,
            polarization_deg: None,
            label: String::new(),
        })
    }

    pub fn from_pairs(pairs: &[(f64, f64)], temperature_k: f64) -> Result<Self> {
        Self::new(
            pairs
                .iter()
                .map(|&(wavelength_nm, intensity)| SpectrumPoint {
                    wavelength_nm,
                    intensity,
                })
                .collect(),
            temperature_k,
        )
    }

    pub fn with_metadata(mut self, meta: &Metadata) -> Self {
        self.excitation_power_mw = meta.power_mw.or(self.excitation_power_mw);
        self.polarization_deg = meta.polarization_deg.or(self.polarization_deg);
        if let Some(label) = &meta.label {
            self.label = label.clone();
        }
        self
    }

    pub fn points(&self) -> &[SpectrumPoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn wavelengths(&self) -> impl Iterator<Item = f64> + '_ {
        self.points.iter().map(|p| p.wavelength_nm)
    }

    pub fn intensities(&self) -> impl Iterator<Item = f64> + '_ {
        self.points.iter().map(|p| p.intensity)
    }

    pub fn range_nm(&self) -> (f64, f64) {
        (
            self.points[0].wavelength_nm,
            self.points[self.points.len() - 1].wavelength_nm,
        )
    }

    /// Median spacing between neighbouring wavelength samples.
    pub fn pixel_spacing_nm(&self) -> f64 {
        let mut d: Vec<f64> = self
            .points
            .windows(2)
            .map(|w| w[1].wavelength_nm - w[0].wavelength_nm)
            .collect();
        if d.is_empty() {
            return 0.0;
        }
        d.sort_by(f64::total_cmp);
        d[d.len() / 2]
    }

    /// Trapezoidal area in counts·nm over the recorded range.
    pub fn total_area(&self) -> f64 {
        trapezoid(self.points.iter().map(|p| (p.wavelength_nm, p.intensity)))
    }

    pub fn to_text(&self) -> String {
        write_two_column(
            "wavelength_nm,counts",
            self.points.iter().map(|p| (p.wavelength_nm, p.intensity)),
        )
    }

    pub fn metadata(&self) -> Metadata {
        Metadata {
            temperature_k: Some(self.temperature_k),
            power_mw: self.excitation_power_mw,
            polarization_deg: self.polarization_deg,
            label: (!self.label.is_empty()).then(|| self.label.clone()),
            ..Metadata::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub time_ns: f64,
    pub counts: f64,
}

/// Time-resolved photon counts after a pulsed excitation.
///
/// Counts are stored as `f64` so noiseless synthetic traces can carry exact
/// expectation values; measured traces hold integer values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayTrace {
    points: Vec<TracePoint>,
    pub band_center_nm: f64,
    pub band_width_nm: f64,
    pub temperature_k: f64,
    pub pulse_time_ns: f64,
}

impl DecayTrace {
    pub fn new(
        points: Vec<TracePoint>,
        band_center_nm: f64,
        band_width_nm: f64,
        temperature_k: f64,
        pulse_time_ns: f64,
    ) -> Result<Self> {
        if points.len() < 2 {
            return Err(validation("decay trace needs at least two samples"));
        }
        for (i, p) in points.iter().enumerate() {
            if !p.time_ns.is_finite() {
                return Err(validation(format!("sample {i}: non-finite time")));
            }
            if !p.counts.is_finite() || p.counts < 0.0 {
                return Err(validation(format!(
                    "sample {i}: counts {} must be finite and >= 0",
                    p.counts
                )));
            }
        }
        let width = points[1].time_ns - points[0].time_ns;
        if !(width > 0.0) {
            return Err(validation("decay trace times not strictly increasing"));
        }
        for (i, w) in points.windows(2).enumerate() {
            let d = w[1].time_ns - w[0].time_ns;
            if !(d > 0.0) {
                return Err(validation(format!(
                    "decay trace times not strictly increasing at sample {}",
                    i + 1
                )));
            }
            if ((d - width) / width).abs() > BIN_UNIFORMITY_TOL {
                return Err(validation(format!(
                    "non-uniform bin width at sample {}: {d} ns vs {width} ns",
                    i + 1
                )));
            }
        }
        for (name, v) in [
            ("band_center_nm", band_center_nm),
            ("band_width_nm", band_width_nm),
            ("temperature_K", temperature_k),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(validation(format!("{name} must be > 0, got {v}")));
            }
        }
        if !pulse_time_ns.is_finite() {
            return Err(validation("pulse_time_ns must be finite"));
        }
        let baseline = points.iter().filter(|p| p.time_ns < pulse_time_ns).count();
        if baseline < MIN_BASELINE_BINS {
            return Err(validation(format!(
                "only {baseline} samples precede the pulse at {pulse_time_ns} ns; need {MIN_BASELINE_BINS}"
            )));
        }
        Ok(Self {
            points,
            band_center_nm,
            band_width_nm,
            temperature_k,
            pulse_time_ns,
        })
    }

    pub fn from_pairs(pairs: &[(f64, f64)], meta: &Metadata) -> Result<Self> {
        let points = pairs
            .iter()
            .map(|&(time_ns, counts)| TracePoint { time_ns, counts })
            .collect();
        let need =
            |v: Option<f64>, key: &str| v.ok_or_else(|| validation(format!("decay trace metadata missing `{key}`")));
        Self::new(
            points,
            need(meta.band_center_nm, "band_center_nm")?,
            need(meta.band_width_nm, "band_width_nm")?,
            need(meta.temperature_k, "temperature_K")?,
            need(meta.pulse_time_ns, "pulse_time_ns")?,
        )
    }

    pub fn points(&self) -> &[TracePoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn bin_width_ns(&self) -> f64 {
        self.points[1].time_ns - self.points[0].time_ns
    }

    pub fn to_text(&self) -> String {
        write_two_column("time_ns,counts", self.points.iter().map(|p| (p.time_ns, p.counts)))
    }

    pub fn metadata(&self) -> Metadata {
        Metadata {
            temperature_k: Some(self.temperature_k),
            band_center_nm: Some(self.band_center_nm),
            band_width_nm: Some(self.band_width_nm),
            pulse_time_ns: Some(self.pulse_time_ns),
            ..Metadata::default()
        }
    }
}

/// Inequivalent silicon lattice sites of the host.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Site {
    /// Quasi-cubic site.
    #[serde(rename = "k")]
    KCubic,
    /// Hexagonal site.
    #[serde(rename = "h")]
    HHexagonal,
}

impl Site {
    pub fn as_str(&self) -> &'static str {
        match self {
            Site::KCubic => "k",
            Site::HHexagonal => "h",
        }
    }
}

impl fmt::Display for Site {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Site {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "k" | "k_cubic" | "cubic" => Ok(Site::KCubic),
            "h" | "h_hexagonal" | "hexagonal" => Ok(Site::HHexagonal),
            other => Err(validation(format!("unknown site `{other}` (expected k or h)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedLine {
    pub label: String,
    pub wavelength_nm: f64,
}

/// Which emission lines belong to which lattice site. Stored as data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteAssignment {
    pub site: Site,
    zpl_lines: Vec<NamedLine>,
    pub notes: String,
}

impl SiteAssignment {
    pub fn new(site: Site, zpl_lines: Vec<NamedLine>, notes: impl Into<String>) -> Result<Self> {
        for (i, line) in zpl_lines.iter().enumerate() {
            if !(1200.0..=1400.0).contains(&line.wavelength_nm) {
                return Err(validation(format!(
                    "line `{}` at {} nm is outside 1200-1400 nm",
                    line.label, line.wavelength_nm
                )));
            }
            if zpl_lines[..i].iter().any(|l| l.label == line.label) {
                return Err(validation(format!("duplicate line label `{}`", line.label)));
            }
        }
        Ok(Self {
            site,
            zpl_lines,
            notes: notes.into(),
        })
    }

    pub fn zpl_lines(&self) -> &[NamedLine] {
        &self.zpl_lines
    }

    /// α doublet emitter on the quasi-cubic site.
    pub fn vanadium_k() -> Self {
        Self::new(
            Site::KCubic,
            vec![
                NamedLine {
                    label: "alpha3".into(),
                    wavelength_nm: 1278.8,
                },
                NamedLine {
                    label: "alpha2".into(),
                    wavelength_nm: 1280.7,
                },
            ],
            "alpha lines; emission from a 2E excited state (e* a1* ordering)",
        )
        .expect("static assignment is valid")
    }

    /// β emitter on the hexagonal site.
    pub fn vanadium_h() -> Self {
        Self::new(
            Site::HHexagonal,
            vec![NamedLine {
                label: "beta".into(),
                wavelength_nm: 1334.0,
            }],
            "beta line; emission from a 2A1 excited state (a1* e* ordering)",
        )
        .expect("static assignment is valid")
    }
}

/// Loads a two-column (wavelength_nm, counts) file.
pub fn load_spectrum(path: &Path, meta: &Metadata) -> Result<Spectrum> {
    let text = read_text(path)?;
    let mut rows = parse_two_column(&text, path)?;
    sort_rows(&mut rows, path)?;
    let temperature = meta
        .temperature_k
        .ok_or_else(|| validation(format!("{}: spectrum metadata missing `temperature_K`", path.display())))?;
    Ok(Spectrum::from_pairs(&rows, temperature)?.with_metadata(meta))
}

/// Loads a two-column (time_ns, counts) file.
pub fn load_trace(path: &Path, meta: &Metadata) -> Result<DecayTrace> {
    let text = read_text(path)?;
    let mut rows = parse_two_column(&text, path)?;
    sort_rows(&mut rows, path)?;
    DecayTrace::from_pairs(&rows, meta).map_err(|e| validation(format!("{}: {e}", path.display())))
}

pub(crate) fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Splits a data row on comma, tab or whitespace.
fn split_fields(line: &str) -> Vec<&str> {
    if line.contains(',') {
        line.split(',').map(str::trim).collect()
    } else if line.contains(';') {
        line.split(';').map(str::trim).collect()
    } else {
        line.split_whitespace().collect()
    }
}

/// Parses numeric rows of `columns` fields, skipping blanks and `#` comments.
pub fn parse_columns(text: &str, path: &Path, columns: usize) -> Result<Vec<Vec<f64>>> {
    let mut rows = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields = split_fields(line);
        let err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: idx + 1,
            message,
        };
        if fields.len() != columns {
            return Err(err(format!("expected {columns} columns, found {}", fields.len())));
        }
        let mut row = Vec::with_capacity(columns);
        for (col, f) in fields.iter().enumerate() {
            let v: f64 = f
                .parse()
                .map_err(|_| err(format!("column {}: `{f}` is not a number", col + 1)))?;
            if !v.is_finite() {
                return Err(err(format!("column {}: non-finite value", col + 1)));
            }
            row.push(v);
        }
        rows.push(row);
    }
    Ok(rows)
}

fn parse_two_column(text: &str, path: &Path) -> Result<Vec<(f64, f64)>> {
    Ok(parse_columns(text, path, 2)?
        .into_iter()
        .map(|r| (r[0], r[1]))
        .collect())
}

fn sort_rows(rows: &mut [(f64, f64)], path: &Path) -> Result<()> {
    rows.sort_by(|a, b| a.0.total_cmp(&b.0));
    if let Some(w) = rows.windows(2).find(|w| w[0].0 == w[1].0) {
        return Err(validation(format!("{}: duplicate abscissa {}", path.display(), w[0].0)));
    }
    Ok(())
}

pub(crate) fn write_two_column(header: &str, rows: impl Iterator<Item = (f64, f64)>) -> String {
    let mut out = format!("# {header}\n");
    for (x, y) in rows {
        out.push_str(&format!("{x},{y}\n"));
    }
    out
}

pub(crate) fn trapezoid(points: impl Iterator<Item = (f64, f64)>) -> f64 {
    let mut prev: Option<(f64, f64)> = None;
    let mut acc = 0.0;
    for (x, y) in points {
        if let Some((x0, y0)) = prev {
            acc += 0.5 * (y + y0) * (x - x0);
        }
        prev = Some((x, y));
    }
    acc
}
