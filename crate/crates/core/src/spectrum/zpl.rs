use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::HC_MEV_NM;
use crate::error::{validation, Error, Result};
use crate::model::{read_text, Spectrum};
use crate::nls::{self, Bound, DataPoint, FitOptions, FitProblem, Model};

/// Observed α₃–α₂ splitting in meV.
pub const SPLITTING_REFERENCE_MEV: f64 = 1.47;
pub const SPLITTING_TOLERANCE_MEV: f64 = 0.3;

const FWHM_PER_SIGMA: f64 = 2.354_820_045_030_949_3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ZplLabel {
    #[serde(rename = "alpha2")]
    Alpha2,
    #[serde(rename = "alpha3")]
    Alpha3,
    #[serde(rename = "beta")]
    Beta,
    #[serde(rename = "alphaP")]
    AlphaP,
}

impl ZplLabel {
    pub fn as_str(&self) -> &'static str {
        match self {
            ZplLabel::Alpha2 => "alpha2",
            ZplLabel::Alpha3 => "alpha3",
            ZplLabel::Beta => "beta",
            ZplLabel::AlphaP => "alphaP",
        }
    }

    /// Zero-phonon lines of the α defect.
    pub fn is_alpha_zpl(&self) -> bool {
        matches!(self, ZplLabel::Alpha2 | ZplLabel::Alpha3)
    }
}

impl fmt::Display for ZplLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ZplLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "alpha2" => Ok(ZplLabel::Alpha2),
            "alpha3" => Ok(ZplLabel::Alpha3),
            "beta" => Ok(ZplLabel::Beta),
            "alphaP" => Ok(ZplLabel::AlphaP),
            other => Err(validation(format!(
                "unknown line label `{other}` (expected alpha2, alpha3, beta or alphaP)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ZplWindow {
    pub label: ZplLabel,
    pub center_nm: f64,
    pub half_window_nm: f64,
}

impl ZplWindow {
    pub fn new(label: ZplLabel, center_nm: f64, half_window_nm: f64) -> Self {
        Self {
            label,
            center_nm,
            half_window_nm,
        }
    }

    /// Windows for the vanadium α doublet and β line.
    pub fn vanadium() -> Vec<ZplWindow> {
        vec![
            ZplWindow::new(ZplLabel::Alpha3, 1278.8, 0.8),
            ZplWindow::new(ZplLabel::Alpha2, 1280.7, 0.8),
            ZplWindow::new(ZplLabel::Beta, 1334.0, 1.0),
        ]
    }

    fn lo(&self) -> f64 {
        self.center_nm - self.half_window_nm
    }

    fn hi(&self) -> f64 {
        self.center_nm + self.half_window_nm
    }
}

/// Line-window configuration file:
///
/// ```toml
/// [[line]]
/// label = "alpha3"
/// center_nm = 1278.8
/// half_window_nm = 0.8
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ZplConfig {
    pub line: Vec<ZplWindow>,
}

impl ZplConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ZplConfig = toml::from_str(text).map_err(|e| Error::Configuration(format!("line windows: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&read_text(path)?).map_err(|e| Error::Configuration(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        if self.line.is_empty() {
            return Err(Error::Configuration("no [[line]] entries".into()));
        }
        for (i, w) in self.line.iter().enumerate() {
            if !(w.half_window_nm > 0.0) || !w.center_nm.is_finite() {
                return Err(Error::Configuration(format!(
                    "line `{}`: half_window_nm must be > 0",
                    w.label
                )));
            }
            if self.line[..i].iter().any(|o| o.label == w.label) {
                return Err(Error::Configuration(format!("duplicate line `{}`", w.label)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LineWidth {
    Measured {
        fwhm_nm: f64,
        sigma3_nm: f64,
    },
    /// Narrower than the resolution; the value is the resolution.
    UpperBound {
        fwhm_nm: f64,
    },
}

impl LineWidth {
    pub fn fwhm_nm(&self) -> f64 {
        match *self {
            LineWidth::Measured { fwhm_nm, .. } | LineWidth::UpperBound { fwhm_nm } => fwhm_nm,
        }
    }

    pub fn is_upper_bound(&self) -> bool {
        matches!(self, LineWidth::UpperBound { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZplLine {
    pub label: ZplLabel,
    pub center_nm: f64,
    pub center_sigma3_nm: f64,
    /// Peak height above the local baseline.
    pub amplitude: f64,
    /// Gaussian standard deviation.
    pub sigma_nm: f64,
    pub width: LineWidth,
    /// Background-subtracted area, intensity·nm.
    pub area: f64,
    pub area_sigma3: f64,
}

impl ZplLine {
    /// The fitted Gaussian without baseline.
    pub fn eval(&self, wavelength_nm: f64) -> f64 {
        let u = (wavelength_nm - self.center_nm) / self.sigma_nm;
        self.amplitude * (-0.5 * u * u).exp()
    }

    pub fn energy_mev(&self) -> f64 {
        HC_MEV_NM / self.center_nm
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZplSet {
    pub lines: Vec<ZplLine>,
    /// E(α₃) − E(α₂) in meV.
    pub doublet_splitting_mev: Option<f64>,
    pub splitting_sigma3_mev: Option<f64>,
    /// Whether the splitting lies within 1.47 ± 0.3 meV.
    pub splitting_consistent: Option<bool>,
    pub warnings: Vec<String>,
}

impl ZplSet {
    pub fn get(&self, label: ZplLabel) -> Option<&ZplLine> {
        self.lines.iter().find(|l| l.label == label)
    }

    pub fn alpha_area(&self) -> f64 {
        self.lines
            .iter()
            .filter(|l| l.label.is_alpha_zpl())
            .map(|l| l.area)
            .sum()
    }

    pub fn beta_area(&self) -> f64 {
        self.get(ZplLabel::Beta).map_or(0.0, |l| l.area)
    }

    /// Line used as the phonon-energy origin: α₃, else the first line.
    pub fn reference(&self) -> Option<&ZplLine> {
        self.get(ZplLabel::Alpha3).or_else(|| self.lines.first())
    }

    /// Sum of the fitted Gaussians of the given lines at `wavelength_nm`.
    pub fn eval_lines(&self, wavelength_nm: f64, include: impl Fn(ZplLabel) -> bool) -> f64 {
        self.lines
            .iter()
            .filter(|l| include(l.label))
            .map(|l| l.eval(wavelength_nm))
            .sum()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ZplOptions {
    /// Instrumental resolution; defaults to two pixel spacings.
    pub resolution_nm: Option<f64>,
    pub nls: FitOptions,
}

/// Gaussians on a linear baseline; parameters
/// `[b₀, b₁, A₁, μ₁, s₁, A₂, μ₂, s₂, …]`, baseline slope about `x_ref`.
#[derive(Debug, Clone, Copy)]
pub struct PeakModel {
    pub n_peaks: usize,
    pub x_ref: f64,
}

impl Model for PeakModel {
    fn n_params(&self) -> usize {
        2 + 3 * self.n_peaks
    }

    fn eval(&self, p: &[f64], x: f64) -> f64 {
        let mut v = p[0] + p[1] * (x - self.x_ref);
        for g in p[2..].chunks_exact(3) {
            let u = (x - g[1]) / g[2];
            v += g[0] * (-0.5 * u * u).exp();
        }
        v
    }

    fn partials(&self, p: &[f64], x: f64, out: &mut [f64]) -> bool {
        out[0] = 1.0;
        out[1] = x - self.x_ref;
        for (g, o) in p[2..].chunks_exact(3).zip(out[2..].chunks_exact_mut(3)) {
            let u = (x - g[1]) / g[2];
            let e = (-0.5 * u * u).exp();
            o[0] = e;
            o[1] = g[0] * e * u / g[2];
            o[2] = g[0] * e * u * u / g[2];
        }
        true
    }

    fn param_names(&self) -> Vec<String> {
        let mut names = vec!["baseline".to_string(), "slope".to_string()];
        for k in 1..=self.n_peaks {
            names.extend([format!("amplitude{k}"), format!("center{k}"), format!("sigma{k}")]);
        }
        names
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

struct Detection {
    center: f64,
    height: f64,
    sigma: f64,
}

/// Locates a local maximum above the window's edge baseline.
fn detect(pts: &[(f64, f64)], w: &ZplWindow, spacing: f64) -> Result<Detection> {
    let not_found = || {
        Error::LineNotFound(format!(
            "no local maximum for `{}` in {:.3}–{:.3} nm",
            w.label,
            w.lo(),
            w.hi()
        ))
    };
    if pts.len() < 7 {
        return Err(not_found());
    }
    let n = pts.len();
    let edge = 3.min(n / 3);
    let avg = |s: &[(f64, f64)]| {
        let k = s.len() as f64;
        (
            s.iter().map(|p| p.0).sum::<f64>() / k,
            s.iter().map(|p| p.1).sum::<f64>() / k,
        )
    };
    let (x0, y0) = avg(&pts[..edge]);
    let (x1, y1) = avg(&pts[n - edge..]);
    let slope = (y1 - y0) / (x1 - x0);
    let rise: Vec<f64> = pts.iter().map(|p| p.1 - (y0 + slope * (p.0 - x0))).collect();
    let (imax, &hmax) = rise.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap();
    let diffs: Vec<f64> = pts.windows(2).map(|p| (p[1].1 - p[0].1).abs()).collect();
    let noise = 1.4826 * median(diffs) / std::f64::consts::SQRT_2;
    let scale = pts.iter().map(|p| p.1.abs()).fold(0.0, f64::max);
    if imax < 2 || imax + 2 >= n || !(hmax > 5.0 * noise) || !(hmax > 1e-9 * scale) {
        return Err(not_found());
    }
    let above = rise.iter().filter(|r| **r >= 0.5 * hmax).count() as f64;
    Ok(Detection {
        center: pts[imax].0,
        height: hmax,
        sigma: (above * spacing / FWHM_PER_SIGMA).max(0.5 * spacing),
    })
}

fn merge_groups(windows: &[ZplWindow]) -> Vec<Vec<ZplWindow>> {
    let mut sorted = windows.to_vec();
    sorted.sort_by(|a, b| a.lo().total_cmp(&b.lo()));
    let mut groups: Vec<Vec<ZplWindow>> = Vec::new();
    for w in sorted {
        match groups.last_mut() {
            Some(g) if g.iter().map(|x| x.hi()).fold(f64::MIN, f64::max) >= w.lo() => g.push(w),
            _ => groups.push(vec![w]),
        }
    }
    groups
}

fn fit_group(spectrum: &Spectrum, group: &[ZplWindow], opts: &ZplOptions, resolution: f64) -> Result<Vec<ZplLine>> {
    let spacing = spectrum.pixel_spacing_nm();
    let lo = group.iter().map(|w| w.lo()).fold(f64::MAX, f64::min);
    let hi = group.iter().map(|w| w.hi()).fold(f64::MIN, f64::max);
    let pts: Vec<(f64, f64)> = spectrum
        .points()
        .iter()
        .filter(|p| p.wavelength_nm >= lo && p.wavelength_nm <= hi)
        .map(|p| (p.wavelength_nm, p.intensity))
        .collect();

    // Strongest line first; each later detection sees the earlier peaks
    // subtracted so a weak neighbour is not hidden on a strong tail.
    let raw_max = |w: &ZplWindow| {
        pts.iter()
            .filter(|p| p.0 >= w.lo() && p.0 <= w.hi())
            .map(|p| p.1)
            .fold(f64::MIN, f64::max)
    };
    let mut order: Vec<usize> = (0..group.len()).collect();
    order.sort_by(|&a, &b| raw_max(&group[b]).total_cmp(&raw_max(&group[a])));
    let mut found: Vec<Option<Detection>> = (0..group.len()).map(|_| None).collect();
    for &k in &order {
        let w = &group[k];
        let sub: Vec<(f64, f64)> = pts
            .iter()
            .filter(|p| p.0 >= w.lo() && p.0 <= w.hi())
            .map(|&(x, y)| {
                let earlier: f64 = found
                    .iter()
                    .flatten()
                    .map(|d| d.height * (-0.5 * ((x - d.center) / d.sigma).powi(2)).exp())
                    .sum();
                (x, y - earlier)
            })
            .collect();
        found[k] = Some(detect(&sub, w, spacing)?);
    }
    let detections: Vec<Detection> = found.into_iter().flatten().collect();

    let x_ref = 0.5 * (lo + hi);
    let edge = 3.min(pts.len() / 3).max(1);
    let base0 = pts[..edge].iter().map(|p| p.1).sum::<f64>() / edge as f64;
    let base1 = pts[pts.len() - edge..].iter().map(|p| p.1).sum::<f64>() / edge as f64;
    let slope = (base1 - base0) / (pts[pts.len() - 1].0 - pts[0].0);
    let base_mid = 0.5 * (base0 + base1);

    let model = PeakModel {
        n_peaks: group.len(),
        x_ref,
    };
    let mut init = vec![base_mid, slope];
    let mut bounds = vec![Bound::FREE, Bound::FREE];
    for (w, d) in group.iter().zip(&detections) {
        init.extend([d.height, d.center, d.sigma.min(w.half_window_nm)]);
        bounds.extend([
            Bound::positive(),
            Bound::new(w.lo(), w.hi()),
            Bound::new(0.05 * spacing, w.half_window_nm),
        ]);
    }
    let data: Vec<DataPoint> = pts.iter().map(|p| DataPoint::new(p.0, p.1, 1.0)).collect();
    let problem = FitProblem::with_bounds(&model, data, init, bounds)?;
    let fit = nls::minimize(&problem, &opts.nls)?;

    let two_pi_sqrt = (2.0 * std::f64::consts::PI).sqrt();
    let mut lines = Vec::with_capacity(group.len());
    for (k, w) in group.iter().enumerate() {
        let (ia, imu, is) = (2 + 3 * k, 3 + 3 * k, 4 + 3 * k);
        let (a, mu, s) = (fit.parameters[ia], fit.parameters[imu], fit.parameters[is]);
        let c = &fit.covariance;
        let var_area = two_pi_sqrt.powi(2) * (s * s * c[ia][ia] + a * a * c[is][is] + 2.0 * a * s * c[ia][is]);
        let fwhm = FWHM_PER_SIGMA * s;
        let width = if fwhm <= resolution {
            LineWidth::UpperBound { fwhm_nm: resolution }
        } else {
            LineWidth::Measured {
                fwhm_nm: fwhm,
                sigma3_nm: FWHM_PER_SIGMA * fit.sigma3[is],
            }
        };
        if fit.at_bound[imu] {
            return Err(Error::LineNotFound(format!(
                "`{}` fitted center ran to the window edge at {mu:.3} nm",
                w.label
            )));
        }
        lines.push(ZplLine {
            label: w.label,
            center_nm: mu,
            center_sigma3_nm: fit.sigma3[imu],
            amplitude: a,
            sigma_nm: s,
            width,
            area: a * s * two_pi_sqrt,
            area_sigma3: 3.0 * var_area.max(0.0).sqrt(),
        });
    }
    Ok(lines)
}

/// Fits each expected zero-phonon line with a Gaussian on a local linear
/// baseline; lines whose windows overlap are fitted jointly.
pub fn find_zpls(spectrum: &Spectrum, windows: &[ZplWindow], opts: &ZplOptions) -> Result<ZplSet> {
    if windows.is_empty() {
        return Err(validation("no line windows given"));
    }
    ZplConfig { line: windows.to_vec() }
        .validate()
        .map_err(|e| validation(e.to_string()))?;
    let (lo, hi) = spectrum.range_nm();
    for w in windows {
        if w.lo() < lo || w.hi() > hi {
            return Err(validation(format!(
                "window for `{}` ({:.3}–{:.3} nm) lies outside the spectrum ({lo:.3}–{hi:.3} nm)",
                w.label,
                w.lo(),
                w.hi()
            )));
        }
    }
    let resolution = opts.resolution_nm.unwrap_or(2.0 * spectrum.pixel_spacing_nm());

    let mut lines = Vec::new();
    for group in merge_groups(windows) {
        lines.extend(fit_group(spectrum, &group, opts, resolution)?);
    }
    lines.sort_by_key(|l| windows.iter().position(|w| w.label == l.label));

    let mut set = ZplSet {
        lines,
        doublet_splitting_mev: None,
        splitting_sigma3_mev: None,
        splitting_consistent: None,
        warnings: Vec::new(),
    };
    if let (Some(a3), Some(a2)) = (set.get(ZplLabel::Alpha3), set.get(ZplLabel::Alpha2)) {
        let split = a3.energy_mev() - a2.energy_mev();
        if !(split > 0.0) {
            return Err(Error::ModelInconsistency(format!(
                "alpha2 ({:.3} nm) must lie below alpha3 ({:.3} nm) in energy",
                a2.center_nm, a3.center_nm
            )));
        }
        let d3 = HC_MEV_NM / (a3.center_nm * a3.center_nm) * a3.center_sigma3_nm;
        let d2 = HC_MEV_NM / (a2.center_nm * a2.center_nm) * a2.center_sigma3_nm;
        let consistent = (split - SPLITTING_REFERENCE_MEV).abs() <= SPLITTING_TOLERANCE_MEV;
        set.doublet_splitting_mev = Some(split);
        set.splitting_sigma3_mev = Some(d3.hypot(d2));
        set.splitting_consistent = Some(consistent);
        if !consistent {
            set.warnings.push(format!(
                "doublet splitting {split:.3} meV is outside {SPLITTING_REFERENCE_MEV} ± {SPLITTING_TOLERANCE_MEV} meV"
            ));
        }
    }
    for l in &set.lines {
        if l.width.is_upper_bound() {
            set.warnings.push(format!(
                "`{}` is resolution limited; FWHM reported as an upper bound",
                l.label
            ));
        }
    }
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gaussians(lines: &[(f64, f64, f64)], background: f64) -> Spectrum {
        let pairs: Vec<(f64, f64)> = (0..3000)
            .map(|i| {
                let x = 1270.0 + 0.025 * i as f64;
                let y = background
                    + lines
                        .iter()
                        .map(|&(c, a, fwhm)| {
                            let s = fwhm / FWHM_PER_SIGMA;
                            a * (-0.5 * ((x - c) / s).powi(2)).exp()
                        })
                        .sum::<f64>();
                (x, y)
            })
            .collect();
        Spectrum::from_pairs(&pairs, 4.0).unwrap()
    }

    #[test]
    fn three_lines_recovered() {
        let s = gaussians(&[(1278.6, 100.0, 0.3), (1280.2, 40.0, 0.3), (1334.0, 25.0, 0.4)], 5.0);
        let windows = vec![
            ZplWindow::new(ZplLabel::Alpha3, 1278.6, 0.7),
            ZplWindow::new(ZplLabel::Alpha2, 1280.2, 0.7),
            ZplWindow::new(ZplLabel::Beta, 1334.0, 1.0),
        ];
        let set = find_zpls(&s, &windows, &ZplOptions::default()).unwrap();
        assert_eq!(set.lines.len(), 3);
        for (l, c) in set.lines.iter().zip([1278.6, 1280.2, 1334.0]) {
            assert!((l.center_nm - c).abs() < 0.05, "{l:?}");
        }
        let a3 = set.get(ZplLabel::Alpha3).unwrap();
        let expected_area = 100.0 * 0.3 / FWHM_PER_SIGMA * (2.0 * std::f64::consts::PI).sqrt();
        assert!((a3.area - expected_area).abs() < 1e-6 * expected_area);
        assert!((a3.width.fwhm_nm() - 0.3).abs() < 1e-6);
    }

    #[test]
    fn doublet_splitting() {
        let a3 = 1279.0;
        let a2 = HC_MEV_NM / (HC_MEV_NM / a3 - 1.47);
        let s = gaussians(&[(a3, 70.0, 0.3), (a2, 30.0, 0.3)], 0.0);
        let windows = vec![
            ZplWindow::new(ZplLabel::Alpha3, a3, 0.9),
            ZplWindow::new(ZplLabel::Alpha2, a2, 0.9),
        ];
        let set = find_zpls(&s, &windows, &ZplOptions::default()).unwrap();
        assert!((set.doublet_splitting_mev.unwrap() - 1.47).abs() < 0.05);
        assert_eq!(set.splitting_consistent, Some(true));
    }

    #[test]
    fn overlapping_windows_fit_jointly() {
        let s = gaussians(&[(1279.0, 70.0, 0.5), (1279.9, 30.0, 0.5)], 1.0);
        let windows = vec![
            ZplWindow::new(ZplLabel::Alpha3, 1279.0, 0.8),
            ZplWindow::new(ZplLabel::Alpha2, 1279.9, 0.8),
        ];
        let set = find_zpls(&s, &windows, &ZplOptions::default()).unwrap();
        assert!((set.get(ZplLabel::Alpha3).unwrap().center_nm - 1279.0).abs() < 1e-6);
        assert!((set.get(ZplLabel::Alpha2).unwrap().center_nm - 1279.9).abs() < 1e-6);
    }

    #[test]
    fn flat_spectrum_has_no_lines() {
        let s = gaussians(&[], 10.0);
        for w in ZplWindow::vanadium() {
            let r = find_zpls(&s, &[w], &ZplOptions::default());
            assert!(matches!(r, Err(Error::LineNotFound(_))), "{r:?}");
        }
    }

    #[test]
    fn narrow_line_reports_upper_bound() {
        let s = gaussians(&[(1300.0, 10.0, 0.03)], 0.0);
        let set = find_zpls(
            &s,
            &[ZplWindow::new(ZplLabel::Beta, 1300.0, 0.5)],
            &ZplOptions::default(),
        )
        .unwrap();
        assert!(set.lines[0].width.is_upper_bound());
        assert!((set.lines[0].width.fwhm_nm() - 0.05).abs() < 1e-9);
    }

    #[test]
    fn window_outside_spectrum_rejected() {
        let s = gaussians(&[(1278.6, 100.0, 0.3)], 0.0);
        let r = find_zpls(
            &s,
            &[ZplWindow::new(ZplLabel::Beta, 1400.0, 1.0)],
            &ZplOptions::default(),
        );
        assert!(matches!(r, Err(Error::Validation(_))));
    }

    #[test]
    fn config_parsing() {
        let cfg = ZplConfig::from_toml_str("[[line]]\nlabel = \"alpha3\"\ncenter_nm = 1278.8\nhalf_window_nm = 0.8\n")
            .unwrap();
        assert_eq!(cfg.line[0].label, ZplLabel::Alpha3);
        assert!(
            ZplConfig::from_toml_str("[[line]]\nlabel = \"gamma\"\ncenter_nm = 1.0\nhalf_window_nm = 1.0\n").is_err()
        );
        assert!(ZplConfig::from_toml_str("line = []\n").is_err());
    }
}
