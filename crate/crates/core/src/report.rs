//! Structured run reports, manifests and the per-site summary table.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{read_text, Site};
use crate::photophysics::PhotophysicsBudget;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportParameter {
    pub name: String,
    pub value: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma3: Option<f64>,
    #[serde(default)]
    pub unit: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    #[serde(default)]
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub command: String,
    pub version: String,
    #[serde(default, rename = "parameter")]
    pub parameters: Vec<ReportParameter>,
    #[serde(default, rename = "check")]
    pub checks: Vec<Check>,
    #[serde(default)]
    pub notes: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget: Option<PhotophysicsBudget>,
}

impl Report {
    pub fn new(command: &str) -> Self {
        Self {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            parameters: Vec::new(),
            checks: Vec::new(),
            notes: Vec::new(),
            budget: None,
        }
    }

    pub fn param(&mut self, name: &str, value: f64, sigma3: Option<f64>, unit: &str) {
        self.parameters.push(ReportParameter {
            name: name.to_string(),
            value,
            sigma3,
            unit: unit.to_string(),
        });
    }

    pub fn check(&mut self, name: &str, passed: bool, detail: impl Into<String>) {
        self.checks.push(Check {
            name: name.to_string(),
            passed,
            detail: detail.into(),
        });
    }

    pub fn note(&mut self, note: impl Into<String>) {
        self.notes.push(note.into());
    }

    pub fn get(&self, name: &str) -> Option<&ReportParameter> {
        self.parameters.iter().find(|p| p.name == name)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("report serializes")
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Configuration(format!("report: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&read_text(path)?).map_err(|e| Error::Configuration(format!("{}: {e}", path.display())))
    }

    /// Human-readable parameter table, checks and notes.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let width = self.parameters.iter().map(|p| p.name.len()).max().unwrap_or(0).max(9);
        let _ = writeln!(out, "{}", self.command);
        for p in &self.parameters {
            let margin = p.sigma3.map_or(String::new(), |s| format!(" ± {}", sig(s)));
            let _ = writeln!(out, "  {:<width$}  {}{} {}", p.name, sig(p.value), margin, p.unit);
        }
        for c in &self.checks {
            let mark = if c.passed { "pass" } else { "FAIL" };
            if c.detail.is_empty() {
                let _ = writeln!(out, "  [{mark}] {}", c.name);
            } else {
                let _ = writeln!(out, "  [{mark}] {}: {}", c.name, c.detail);
            }
        }
        for n in &self.notes {
            let _ = writeln!(out, "  note: {n}");
        }
        out
    }
}

/// Six significant digits, without trailing zeros.
fn sig(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return format!("{v}");
    }
    let digits = (5 - v.abs().log10().floor() as i32).clamp(0, 12) as usize;
    let s = format!("{v:.digits$}");
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    std::fs::read(path).map(|b| sha256_hex(&b)).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputHash {
    pub key: String,
    pub path: PathBuf,
    pub sha256: String,
}

/// Everything needed to re-run a command: the canonical configuration (also
/// written next to the report), its hash, input hashes and tool version.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config_file: PathBuf,
    pub config_sha256: String,
    #[serde(default, rename = "input")]
    pub inputs: Vec<InputHash>,
    #[serde(default)]
    pub outputs: Vec<PathBuf>,
}

impl Manifest {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("manifest serializes")
    }
}

/// One row per site, k before h.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub rows: Vec<PhotophysicsBudget>,
}

fn same_row(a: &PhotophysicsBudget, b: &PhotophysicsBudget) -> bool {
    let eq = |x: f64, y: f64| (x - y).abs() <= 1e-12 * x.abs().max(y.abs()).max(1.0);
    eq(a.s_th, b.s_th) && eq(a.dw_exp, b.dw_exp) && eq(a.tau_rad_ns, b.tau_rad_ns) && eq(a.tau_tot_ns, b.tau_tot_ns)
}

/// Collects the budget rows of several reports into one table.
pub fn report_bundle(reports: &[Report]) -> Result<Summary> {
    if reports.is_empty() {
        return Err(Error::NoData("no reports to bundle".into()));
    }
    let mut rows: BTreeMap<Site, PhotophysicsBudget> = BTreeMap::new();
    for r in reports {
        let Some(b) = &r.budget else { continue };
        let site = b
            .site
            .ok_or_else(|| Error::Aggregation(format!("{} report has a budget without a site label", r.command)))?;
        match rows.get(&site) {
            Some(existing) if !same_row(existing, b) => {
                return Err(Error::Aggregation(format!(
                    "site {site} supplied twice with different values (tau_tot {} vs {} ns)",
                    existing.tau_tot_ns, b.tau_tot_ns
                )))
            }
            Some(_) => {}
            None => {
                rows.insert(site, b.clone());
            }
        }
    }
    if rows.is_empty() {
        return Err(Error::Aggregation("none of the reports carries a budget".into()));
    }
    Ok(Summary {
        rows: rows.into_values().collect(),
    })
}

impl Summary {
    pub fn to_text(&self) -> String {
        let mut out = String::from(
            "site  S     DW(th.)  DW(exp.)  tau_rad(ns)  tau_tot(ns)  tau_NR(ns)  eta_rad(%)  eta_tot(%)\n",
        );
        for b in &self.rows {
            let site = b.site.map_or("-", |s| s.as_str());
            let nr = b.tau_nr_ns.map_or("absent".to_string(), |v| format!("{v:.0}"));
            let _ = writeln!(
                out,
                "{site:<4}  {:<4.2}  {:<7.2}  {:<8.2}  {:<11.0}  {:<11.0}  {nr:<10}  {:<10.1}  {:.1}",
                b.s_th,
                b.dw_th,
                b.dw_exp,
                b.tau_rad_ns,
                b.tau_tot_ns,
                100.0 * b.eta_rad,
                100.0 * b.eta_tot
            );
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::photophysics::budget;

    fn budget_report(site: Site, tau_rad: f64, tau_tot: f64, dw: f64, s: f64) -> Report {
        let mut r = Report::new("budget");
        let mut b = budget(tau_rad, tau_tot, dw, s).unwrap();
        b.site = Some(site);
        r.budget = Some(b);
        r
    }

    #[test]
    fn bundle_orders_sites() {
        let h = budget_report(Site::HHexagonal, 277.0, 43.0, 0.22, 0.79);
        let k = budget_report(Site::KCubic, 704.0, 163.0, 0.39, 0.66);
        let s = report_bundle(&[h.clone(), k.clone()]).unwrap();
        assert_eq!(s.rows.len(), 2);
        assert_eq!(s.rows[0].site, Some(Site::KCubic));
        let text = s.to_text();
        let lines: Vec<&str> = text.lines().collect();
        assert!(lines[1].starts_with("k "), "{text}");
        assert!(lines[1].contains("212"), "{text}");
        assert!(lines[2].starts_with("h "));
        assert_eq!(report_bundle(&[h]).unwrap().rows.len(), 1);
    }

    #[test]
    fn conflicting_duplicate_site() {
        let a = budget_report(Site::KCubic, 704.0, 163.0, 0.39, 0.66);
        let b = budget_report(Site::KCubic, 704.0, 150.0, 0.39, 0.66);
        assert!(matches!(report_bundle(&[a.clone(), b]), Err(Error::Aggregation(_))));
        assert_eq!(report_bundle(&[a.clone(), a]).unwrap().rows.len(), 1);
    }

    #[test]
    fn report_round_trips_through_toml() {
        let mut r = budget_report(Site::KCubic, 704.0, 163.0, 0.39, 0.66);
        r.param("tau_nr_ns", 212.1, None, "ns");
        r.check("ordering", true, "ok");
        let back = Report::from_toml_str(&r.to_toml()).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn significant_digits() {
        assert_eq!(sig(164.2), "164.2");
        assert_eq!(sig(0.0903), "0.0903");
        assert_eq!(sig(12345678.0), "12345678");
    }
}
