//! Command-line front end. Every invocation, from flags or from a `--config`
//! file, is normalised into a [`RunConfig`] and executed by [`run`].

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use toml::Value;

use crate::decay::{fit_decay, fit_thermal, DecayFitOptions, DecayKind, KindSelection, ThermalPoint};
use crate::error::{validation, Error, Result};
use crate::model::{load_spectrum, load_trace, parse_columns, read_text, Metadata, Site, Spectrum};
use crate::nls::FitOptions;
use crate::photophysics::{
    budget, compare_with_reference, cooperativity, sweep_finesse, Agreement, CavityParams, ReferenceRow,
    DEFAULT_EXTRACTION, DEFAULT_N_SIC,
};
use crate::report::{report_bundle, sha256_file, sha256_hex, InputHash, Manifest, Report};
use crate::spectrum::{
    find_zpls, partition_dw, PartitionOptions, PsbFitOptions, ZplConfig, ZplOptions, ZplSet, ZplWindow,
};
use crate::synth::GeneratorSpec;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_FIT: i32 = 3;

pub fn exit_code(err: &Error) -> i32 {
    if err.is_fit_failure() {
        EXIT_FIT
    } else {
        EXIT_VALIDATION
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CommandKind {
    FitDecay,
    FitThermal,
    FitPsb,
    Zpl,
    Budget,
    Cavity,
    Simulate,
    Report,
}

impl CommandKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            CommandKind::FitDecay => "fit-decay",
            CommandKind::FitThermal => "fit-thermal",
            CommandKind::FitPsb => "fit-psb",
            CommandKind::Zpl => "zpl",
            CommandKind::Budget => "budget",
            CommandKind::Cavity => "cavity",
            CommandKind::Simulate => "simulate",
            CommandKind::Report => "report",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InputPaths {
    One(PathBuf),
    Many(Vec<PathBuf>),
}

impl InputPaths {
    pub fn paths(&self) -> Vec<&Path> {
        match self {
            InputPaths::One(p) => vec![p.as_path()],
            InputPaths::Many(v) => v.iter().map(PathBuf::as_path).collect(),
        }
    }

    fn map(&self, f: impl Fn(&Path) -> PathBuf) -> InputPaths {
        match self {
            InputPaths::One(p) => InputPaths::One(f(p)),
            InputPaths::Many(v) => InputPaths::Many(v.iter().map(|p| f(p)).collect()),
        }
    }
}

fn default_output_dir() -> PathBuf {
    PathBuf::from(".")
}

/// A complete, replayable description of one command invocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub command: CommandKind,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub emit_plot_data: bool,
    #[serde(default)]
    pub inputs: BTreeMap<String, InputPaths>,
    #[serde(default)]
    pub parameters: toml::Table,
}

impl RunConfig {
    pub fn new(command: CommandKind) -> Self {
        Self {
            command,
            output_dir: default_output_dir(),
            emit_plot_data: false,
            inputs: BTreeMap::new(),
            parameters: toml::Table::new(),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Configuration(format!("run config: {e}")))
    }

    /// Loads a config file; relative paths inside it are taken relative to
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let cfg = Self::from_toml_str(&read_text(path)?)
            .map_err(|e| Error::Configuration(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        Ok(cfg.rebased(base))
    }

    fn rebased(mut self, base: &Path) -> Self {
        let join = |p: &Path| if p.is_relative() { base.join(p) } else { p.to_path_buf() };
        self.output_dir = join(&self.output_dir);
        for v in self.inputs.values_mut() {
            *v = v.map(join);
        }
        if self.command == CommandKind::Simulate {
            if let Some(Value::String(out)) = self.parameters.get("out") {
                let resolved = join(Path::new(out)).to_string_lossy().into_owned();
                self.parameters.insert("out".into(), Value::String(resolved));
            }
        }
        self
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    /// The same configuration with every path made absolute, so it can be
    /// replayed from any directory.
    pub fn absolute(&self) -> Result<Self> {
        let cwd = std::env::current_dir().map_err(|source| Error::Io {
            path: PathBuf::from("."),
            source,
        })?;
        Ok(self.clone().rebased(&cwd))
    }

    pub fn input(&self, key: &str) -> Option<&Path> {
        match self.inputs.get(key)? {
            InputPaths::One(p) => Some(p),
            InputPaths::Many(v) => v.first().map(PathBuf::as_path),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Ty {
    Num,
    Int,
    Str,
    Bool,
    Pair,
}

struct Schema {
    /// (key, required)
    inputs: &'static [(&'static str, bool)],
    /// (key, type, required)
    params: &'static [(&'static str, Ty, bool)],
}

fn schema(cmd: CommandKind) -> Schema {
    use Ty::*;
    match cmd {
        CommandKind::FitDecay => Schema {
            inputs: &[("trace", true), ("metadata", false)],
            params: &[
                ("kind", Str, false),
                ("window", Pair, false),
                ("fixed_slow_tau_ns", Num, false),
                ("fixed_fast_amplitude", Num, false),
                ("aic_threshold", Num, false),
                ("model_weights", Bool, false),
                ("pulse_time_ns", Num, false),
                ("band_center_nm", Num, false),
                ("band_width_nm", Num, false),
                ("temperature_K", Num, false),
            ],
        },
        CommandKind::FitThermal => Schema {
            inputs: &[("points", true)],
            params: &[],
        },
        CommandKind::FitPsb => Schema {
            inputs: &[("spectrum", true), ("zpl_config", false), ("metadata", false)],
            params: &[
                ("partition_meV", Num, false),
                ("temperature_K", Num, false),
                ("resolution_nm", Num, false),
                ("j_max", Int, false),
                ("max_phonon_meV", Num, false),
                ("beta_min_phonon_meV", Num, false),
                ("truncation_multiplier", Num, false),
                ("replicate_doublet", Bool, false),
            ],
        },
        CommandKind::Zpl => Schema {
            inputs: &[("spectrum", true), ("zpl_config", false), ("metadata", false)],
            params: &[("temperature_K", Num, false), ("resolution_nm", Num, false)],
        },
        CommandKind::Budget => Schema {
            inputs: &[],
            params: &[
                ("tau_rad", Num, true),
                ("tau_tot", Num, true),
                ("dw", Num, true),
                ("s", Num, true),
                ("site", Str, false),
            ],
        },
        CommandKind::Cavity => Schema {
            inputs: &[],
            params: &[
                ("lambda_nm", Num, true),
                ("finesse", Num, true),
                ("roc_mm", Num, false),
                ("lvac_um", Num, true),
                ("lsic_um", Num, true),
                ("eta_tot", Num, true),
                ("n_sic", Num, false),
                ("wc_um", Num, false),
                ("extraction", Num, false),
                ("sweep", Str, false),
            ],
        },
        CommandKind::Simulate => Schema {
            inputs: &[("spec", true)],
            params: &[("out", Str, true)],
        },
        CommandKind::Report => Schema {
            inputs: &[("reports", true)],
            params: &[],
        },
    }
}

fn type_matches(v: &Value, ty: Ty) -> bool {
    match ty {
        Ty::Num => matches!(v, Value::Float(_) | Value::Integer(_)),
        Ty::Int => matches!(v, Value::Integer(i) if *i >= 0),
        Ty::Str => v.is_str(),
        Ty::Bool => v.is_bool(),
        Ty::Pair => matches!(v, Value::Array(a) if a.len() == 2
            && a.iter().all(|x| matches!(x, Value::Float(_) | Value::Integer(_)))),
    }
}

fn type_name(ty: Ty) -> &'static str {
    match ty {
        Ty::Num => "a number",
        Ty::Int => "a non-negative integer",
        Ty::Str => "a string",
        Ty::Bool => "a boolean",
        Ty::Pair => "a two-number array",
    }
}

/// Checks input and parameter keys against the command's schema.
pub fn validate_config(cfg: &RunConfig) -> Result<()> {
    let s = schema(cfg.command);
    let cmd = cfg.command.as_str();
    for key in cfg.inputs.keys() {
        if !s.inputs.iter().any(|(k, _)| k == key) {
            let known: Vec<&str> = s.inputs.iter().map(|(k, _)| *k).collect();
            return Err(Error::Configuration(format!(
                "{cmd}: unknown input `{key}` (expected one of: {})",
                known.join(", ")
            )));
        }
    }
    for (key, required) in s.inputs {
        if *required && !cfg.inputs.contains_key(*key) {
            return Err(Error::Configuration(format!("{cmd}: missing input `{key}`")));
        }
    }
    for (key, value) in &cfg.parameters {
        let Some((_, ty, _)) = s.params.iter().find(|(k, _, _)| k == key) else {
            let known: Vec<&str> = s.params.iter().map(|(k, _, _)| *k).collect();
            return Err(Error::Configuration(format!(
                "{cmd}: unknown parameter `{key}` (expected one of: {})",
                if known.is_empty() {
                    "none".to_string()
                } else {
                    known.join(", ")
                }
            )));
        };
        if !type_matches(value, *ty) {
            return Err(Error::Configuration(format!(
                "{cmd}: parameter `{key}` must be {}",
                type_name(*ty)
            )));
        }
    }
    for (key, _, required) in s.params {
        if *required && !cfg.parameters.contains_key(*key) {
            return Err(Error::Configuration(format!("{cmd}: missing parameter `{key}`")));
        }
    }
    Ok(())
}

struct Params<'a>(&'a toml::Table);

impl Params<'_> {
    fn num(&self, key: &str) -> Option<f64> {
        match self.0.get(key)? {
            Value::Float(f) => Some(*f),
            Value::Integer(i) => Some(*i as f64),
            _ => None,
        }
    }

    fn req(&self, key: &str) -> Result<f64> {
        self.num(key)
            .ok_or_else(|| Error::Configuration(format!("missing parameter `{key}`")))
    }

    fn int(&self, key: &str) -> Option<i64> {
        self.0.get(key)?.as_integer()
    }

    fn str(&self, key: &str) -> Option<&str> {
        self.0.get(key)?.as_str()
    }

    fn bool(&self, key: &str) -> Option<bool> {
        self.0.get(key)?.as_bool()
    }

    fn pair(&self, key: &str) -> Option<(f64, f64)> {
        let a = self.0.get(key)?.as_array()?;
        let n = |v: &Value| v.as_float().or_else(|| v.as_integer().map(|i| i as f64));
        Some((n(&a[0])?, n(&a[1])?))
    }
}

/// Output of one command before it is written to disk.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report: Report,
    /// Text printed to stdout.
    pub text: String,
    /// Files written, in write order.
    pub files: Vec<PathBuf>,
}

struct Outputs {
    /// Files placed in the output directory: (name, contents).
    local: Vec<(String, String)>,
    /// Files written elsewhere (simulate's data file).
    external: Vec<(PathBuf, String)>,
    /// Replaces the report table on stdout.
    text: Option<String>,
}

impl Outputs {
    fn new() -> Self {
        Self {
            local: Vec::new(),
            external: Vec::new(),
            text: None,
        }
    }

    fn add(&mut self, name: String, contents: String) {
        self.local.push((name, contents));
    }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn columns(header: &str, rows: impl IntoIterator<Item = Vec<f64>>) -> String {
    let mut out = format!("# {header}\n");
    for r in rows {
        let cells: Vec<String> = r.iter().map(|v| v.to_string()).collect();
        out.push_str(&cells.join(" "));
        out.push('\n');
    }
    out
}

/// Validates `cfg`, runs the command and writes report, manifest, canonical
/// config and any data files into `cfg.output_dir`.
pub fn run(cfg: &RunConfig) -> Result<RunOutcome> {
    validate_config(cfg)?;
    let canonical = cfg.absolute()?;
    let mut input_hashes = Vec::new();
    for (key, paths) in &canonical.inputs {
        for path in paths.paths() {
            input_hashes.push(InputHash {
                key: key.clone(),
                path: path.to_path_buf(),
                sha256: sha256_file(path)?,
            });
        }
    }
    let cmd = cfg.command.as_str();
    let p = Params(&cfg.parameters);
    let mut out = Outputs::new();
    let report = match cfg.command {
        CommandKind::FitDecay => run_fit_decay(cfg, &p, &mut out)?,
        CommandKind::FitThermal => run_fit_thermal(cfg, &mut out)?,
        CommandKind::FitPsb => run_fit_psb(cfg, &p, &mut out)?,
        CommandKind::Zpl => run_zpl(cfg, &p, &mut out)?,
        CommandKind::Budget => run_budget(&p)?,
        CommandKind::Cavity => run_cavity(&p, &mut out)?,
        CommandKind::Simulate => run_simulate(cfg, &p, &mut out)?,
        CommandKind::Report => run_report(cfg, &mut out)?,
    };

    fs::create_dir_all(&cfg.output_dir).map_err(|source| Error::Io {
        path: cfg.output_dir.clone(),
        source,
    })?;
    let mut files = Vec::new();
    for (path, contents) in &out.external {
        write_file(path, contents)?;
        files.push(path.clone());
    }
    out.local.push((format!("{cmd}.report.toml"), report.to_toml()));
    let config_name = format!("{cmd}.config.toml");
    let config_text = canonical.to_toml();
    out.local.push((config_name.clone(), config_text.clone()));
    let mut outputs: Vec<PathBuf> = out.external.iter().map(|(p, _)| p.clone()).collect();
    outputs.extend(out.local.iter().map(|(n, _)| PathBuf::from(n)));
    let manifest = Manifest {
        tool: "colorcenter".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        command: cmd.into(),
        config_file: PathBuf::from(&config_name),
        config_sha256: sha256_hex(config_text.as_bytes()),
        inputs: input_hashes,
        outputs,
    };
    out.local.push((format!("{cmd}.manifest.toml"), manifest.to_toml()));
    for (name, contents) in &out.local {
        let path = cfg.output_dir.join(name);
        write_file(&path, contents)?;
        files.push(path);
    }
    let text = out.text.take().unwrap_or_else(|| report.to_table());
    Ok(RunOutcome { report, text, files })
}

fn sidecar_metadata(cfg: &RunConfig, data: &Path) -> Result<Metadata> {
    if let Some(path) = cfg.input("metadata") {
        return Metadata::load(path);
    }
    let sidecar = Metadata::sidecar_path(data);
    if sidecar.exists() {
        Metadata::load(&sidecar)
    } else {
        Ok(Metadata::default())
    }
}

fn required_input<'a>(cfg: &'a RunConfig, key: &str) -> Result<&'a Path> {
    cfg.input(key)
        .ok_or_else(|| Error::Configuration(format!("missing input `{key}`")))
}

fn run_fit_decay(cfg: &RunConfig, p: &Params, out: &mut Outputs) -> Result<Report> {
    let path = required_input(cfg, "trace")?;
    let overrides = Metadata {
        temperature_k: p.num("temperature_K"),
        band_center_nm: p.num("band_center_nm"),
        band_width_nm: p.num("band_width_nm"),
        pulse_time_ns: p.num("pulse_time_ns"),
        ..Metadata::default()
    };
    let meta = sidecar_metadata(cfg, path)?.merged(&overrides);
    let trace = load_trace(path, &meta)?;
    let defaults = DecayFitOptions::default();
    let opts = DecayFitOptions {
        kind: p.str("kind").map_or(Ok(KindSelection::Auto), str::parse)?,
        window_ns: p.pair("window"),
        fixed_slow_tau_ns: p.num("fixed_slow_tau_ns"),
        fixed_fast_amplitude: p.num("fixed_fast_amplitude"),
        aic_threshold: p.num("aic_threshold").unwrap_or(defaults.aic_threshold),
        model_weights: p.bool("model_weights").unwrap_or(defaults.model_weights),
        nls: defaults.nls,
    };
    let fit = fit_decay(&trace, &opts)?;

    let mut r = Report::new("fit-decay");
    r.param(
        "background",
        fit.background.mean,
        Some(3.0 * fit.background.std_error),
        "counts/bin",
    );
    for (k, c) in fit.components.iter().enumerate() {
        r.param(
            &format!("A{}", k + 1),
            c.amplitude,
            Some(c.amplitude_sigma3),
            "counts/bin",
        );
        r.param(&format!("tau{}", k + 1), c.tau_ns, Some(c.tau_sigma3), "ns");
    }
    r.param("reduced_chi2", fit.reduced_chi2, None, "");
    r.param("aic", fit.aic, None, "");
    if let Some(d) = fit.delta_aic {
        r.param("delta_aic", d, None, "");
    }
    r.check("converged", fit.converged, "");
    let kind = match fit.model_kind {
        DecayKind::Single => "single",
        DecayKind::Double => "double",
    };
    r.note(format!("model: {kind} exponential"));
    r.note(format!("window: {} to {} ns", fit.window_ns.0, fit.window_ns.1));
    for w in &fit.warnings {
        r.note(w.clone());
    }

    if cfg.emit_plot_data {
        let pts = trace.points();
        out.add(
            "fit-decay.data.dat".into(),
            columns("time_ns counts", pts.iter().map(|q| vec![q.time_ns, q.counts])),
        );
        let pulse = trace.pulse_time_ns;
        let bg = fit.background.mean;
        out.add(
            "fit-decay.model.dat".into(),
            columns(
                "time_ns model_counts",
                pts.iter()
                    .filter(|q| q.time_ns >= fit.window_ns.0 && q.time_ns <= fit.window_ns.1)
                    .map(|q| vec![q.time_ns, bg + fit.eval(q.time_ns, pulse)]),
            ),
        );
    }
    Ok(r)
}

fn run_fit_thermal(cfg: &RunConfig, out: &mut Outputs) -> Result<Report> {
    let path = required_input(cfg, "points")?;
    let rows = parse_columns(&read_text(path)?, path, 3)?;
    let points: Vec<ThermalPoint> = rows
        .iter()
        .map(|r| ThermalPoint {
            temperature_k: r[0],
            tau_ns: r[1],
            sigma_ns: r[2],
        })
        .collect();
    let m = fit_thermal(&points, &FitOptions::default())?;
    let mut r = Report::new("fit-thermal");
    r.param("tau", m.tau_ns, Some(m.sigma3[0]), "ns");
    r.param("tau_p", m.tau_p_ns, Some(m.sigma3[1]), "ns");
    r.param("E_p", m.e_p_mev, Some(m.sigma3[2]), "meV");
    r.param("reduced_chi2", m.reduced_chi2, None, "");
    r.check("converged", m.converged, "");
    if cfg.emit_plot_data {
        out.add(
            "fit-thermal.data.dat".into(),
            columns(
                "temperature_K tau_ns sigma_ns",
                points.iter().map(|q| vec![q.temperature_k, q.tau_ns, q.sigma_ns]),
            ),
        );
        let lo = points.iter().map(|q| q.temperature_k).fold(f64::INFINITY, f64::min);
        let hi = points.iter().map(|q| q.temperature_k).fold(0.0, f64::max);
        out.add(
            "fit-thermal.model.dat".into(),
            columns(
                "temperature_K tau_ns",
                (0..=200).map(|i| {
                    let t = lo + (hi - lo) * i as f64 / 200.0;
                    vec![t, m.lifetime(t)]
                }),
            ),
        );
    }
    Ok(r)
}

fn load_spectrum_input(cfg: &RunConfig, p: &Params) -> Result<Spectrum> {
    let path = required_input(cfg, "spectrum")?;
    let overrides = Metadata {
        temperature_k: p.num("temperature_K"),
        ..Metadata::default()
    };
    let meta = sidecar_metadata(cfg, path)?.merged(&overrides);
    load_spectrum(path, &meta)
}

fn windows(cfg: &RunConfig) -> Result<Vec<ZplWindow>> {
    match cfg.input("zpl_config") {
        Some(path) => Ok(ZplConfig::load(path)?.line),
        None => Ok(ZplWindow::vanadium()),
    }
}

fn zpl_options(p: &Params) -> ZplOptions {
    ZplOptions {
        resolution_nm: p.num("resolution_nm"),
        ..ZplOptions::default()
    }
}

fn report_lines(r: &mut Report, set: &ZplSet) {
    for l in &set.lines {
        let label = l.label.as_str();
        r.param(
            &format!("{label}_center_nm"),
            l.center_nm,
            Some(l.center_sigma3_nm),
            "nm",
        );
        match l.width {
            crate::spectrum::LineWidth::Measured { fwhm_nm, sigma3_nm } => {
                r.param(&format!("{label}_fwhm_nm"), fwhm_nm, Some(sigma3_nm), "nm");
            }
            crate::spectrum::LineWidth::UpperBound { fwhm_nm } => {
                r.param(&format!("{label}_fwhm_nm"), fwhm_nm, None, "nm");
                r.note(format!("{label} width is at most the resolution, {fwhm_nm} nm"));
            }
        }
        r.param(&format!("{label}_area"), l.area, Some(l.area_sigma3), "counts·nm");
    }
    if let Some(s) = set.doublet_splitting_mev {
        r.param("doublet_splitting", s, set.splitting_sigma3_mev, "meV");
    }
    if let Some(ok) = set.splitting_consistent {
        r.check(
            "doublet_splitting",
            ok,
            format!(
                "expected {} ± {} meV",
                crate::spectrum::SPLITTING_REFERENCE_MEV,
                crate::spectrum::SPLITTING_TOLERANCE_MEV
            ),
        );
    }
    for w in &set.warnings {
        r.note(w.clone());
    }
}

fn spectrum_columns(s: &Spectrum) -> String {
    columns(
        "wavelength_nm intensity",
        s.points().iter().map(|q| vec![q.wavelength_nm, q.intensity]),
    )
}

fn run_zpl(cfg: &RunConfig, p: &Params, out: &mut Outputs) -> Result<Report> {
    let spectrum = load_spectrum_input(cfg, p)?;
    let set = find_zpls(&spectrum, &windows(cfg)?, &zpl_options(p))?;
    let mut r = Report::new("zpl");
    report_lines(&mut r, &set);
    if cfg.emit_plot_data {
        out.add("zpl.data.dat".into(), spectrum_columns(&spectrum));
        out.add(
            "zpl.lines.dat".into(),
            columns(
                "wavelength_nm line_intensity",
                spectrum.wavelengths().map(|x| vec![x, set.eval_lines(x, |_| true)]),
            ),
        );
    }
    Ok(r)
}

fn run_fit_psb(cfg: &RunConfig, p: &Params, out: &mut Outputs) -> Result<Report> {
    let spectrum = load_spectrum_input(cfg, p)?;
    let zpls = find_zpls(&spectrum, &windows(cfg)?, &zpl_options(p))?;
    let defaults = PsbFitOptions::default();
    let j_max = match p.int("j_max") {
        Some(j) => u32::try_from(j).map_err(|_| validation(format!("j_max {j} out of range")))?,
        None => defaults.j_max,
    };
    let beta_min = p.num("beta_min_phonon_meV").unwrap_or(defaults.beta_min_phonon_mev);
    let opts = PsbFitOptions {
        j_max,
        beta_min_phonon_mev: beta_min,
        max_phonon_mev: p.num("max_phonon_meV").unwrap_or(defaults.max_phonon_mev),
        replicate_doublet: p.bool("replicate_doublet").unwrap_or(defaults.replicate_doublet),
        ..defaults
    };
    let psb = crate::spectrum::fit_psb(&spectrum, &zpls, &opts)?;
    let popts = PartitionOptions {
        partition_mev: p.num("partition_meV"),
        beta_min_phonon_mev: beta_min,
        truncation_multiplier: p
            .num("truncation_multiplier")
            .unwrap_or(PartitionOptions::default().truncation_multiplier),
    };
    let part = partition_dw(&spectrum, &zpls, &popts, Some(&psb))?;

    let mut r = Report::new("fit-psb");
    r.param("I0", psb.model.i0, Some(psb.sigma3[0]), "counts·meV");
    r.param("sigma", psb.model.sigma_mev, Some(psb.sigma3[1]), "meV");
    r.param("Delta0", psb.model.delta0_mev, Some(psb.sigma3[2]), "meV");
    r.param("reduced_chi2", psb.reduced_chi2, None, "");
    r.param("partition", part.partition_mev, None, "meV");
    r.param("dw_mean", part.dw_mean, None, "");
    r.param("dw_alpha_low", part.dw_alpha_bounds.0, None, "");
    r.param("dw_alpha_high", part.dw_alpha_bounds.1, None, "");
    if let Some(v) = part.dw_alpha_refined {
        r.param("dw_alpha_refined", v, None, "");
    }
    r.param("dw_beta_low", part.dw_beta_low, None, "");
    if let Some(v) = part.dw_beta_refined {
        r.param("dw_beta_refined", v, None, "");
    }
    r.param("corrected_zpl_fraction", part.corrected_zpl_fraction, None, "");
    r.check("converged", psb.converged, "");
    r.check(
        "dw_ordering",
        part.ordering_holds(),
        "0 <= low <= refined <= high <= 1 for alpha and beta",
    );
    if psb.shape_frozen {
        r.note("sideband shape held at its starting value");
    }
    for w in psb.warnings.iter().chain(&part.warnings) {
        r.note(w.clone());
    }
    out.add(
        "fit-psb.reconstruction.dat".into(),
        columns(
            "wavelength_nm model_intensity",
            psb.reconstruction(&spectrum, &zpls)
                .into_iter()
                .map(|(x, y)| vec![x, y]),
        ),
    );
    if cfg.emit_plot_data {
        out.add("fit-psb.data.dat".into(), spectrum_columns(&spectrum));
        out.add(
            "fit-psb.beta_residual.dat".into(),
            columns(
                "wavelength_nm residual_intensity",
                psb.beta_residual.iter().map(|&(x, y)| vec![x, y]),
            ),
        );
    }
    Ok(r)
}

fn run_budget(p: &Params) -> Result<Report> {
    let mut b = budget(p.req("tau_rad")?, p.req("tau_tot")?, p.req("dw")?, p.req("s")?)?;
    b.site = p.str("site").map(str::parse::<Site>).transpose()?;
    let mut r = Report::new("budget");
    r.param("S", b.s_th, None, "");
    r.param("DW_th", b.dw_th, None, "");
    r.param("DW_exp", b.dw_exp, None, "");
    r.param("tau_rad", b.tau_rad_ns, None, "ns");
    r.param("tau_tot", b.tau_tot_ns, None, "ns");
    match b.tau_nr_ns {
        Some(nr) => r.param("tau_NR", nr, None, "ns"),
        None => r.note("purely radiative: no non-radiative channel"),
    }
    r.param("eta_rad", b.eta_rad, None, "");
    r.param("eta_tot", b.eta_tot, None, "");
    let back = b.reconstructed_tau_tot();
    r.check(
        "lifetime_closure",
        (back - b.tau_tot_ns).abs() <= 1e-9 * b.tau_tot_ns,
        format!("1/(1/tau_rad + 1/tau_NR) = {back} ns"),
    );
    if let Some(site) = b.site {
        let row = ReferenceRow::for_site(site);
        if row.same_inputs(&b) {
            for c in compare_with_reference(&b, &row) {
                let label = match c.agreement {
                    Agreement::Agrees => "agrees",
                    Agreement::Rounding => "within input rounding",
                    Agreement::Discrepant => "discrepant",
                };
                r.check(
                    &format!("reference_{}", c.quantity),
                    c.agreement != Agreement::Discrepant,
                    format!("computed {} vs tabulated {} ({label})", c.computed, c.reference),
                );
                if c.agreement == Agreement::Discrepant {
                    r.note(format!(
                        "site {site}: tabulated {} = {} is inconsistent with its own inputs, which give {}",
                        c.quantity, c.reference, c.computed
                    ));
                }
            }
        } else {
            r.note(format!(
                "inputs differ from the tabulated site {site} row; no comparison made"
            ));
        }
    }
    r.budget = Some(b);
    Ok(r)
}

fn parse_sweep(spec: &str) -> Result<(f64, f64, usize)> {
    let bad = || validation(format!("sweep `{spec}`: expected finesse=FROM:TO:N"));
    let range = spec.strip_prefix("finesse=").ok_or_else(bad)?;
    let parts: Vec<&str> = range.split(':').collect();
    if parts.len() != 3 {
        return Err(bad());
    }
    let from: f64 = parts[0].trim().parse().map_err(|_| bad())?;
    let to: f64 = parts[1].trim().parse().map_err(|_| bad())?;
    let n: usize = parts[2].trim().parse().map_err(|_| bad())?;
    Ok((from, to, n))
}

fn run_cavity(p: &Params, out: &mut Outputs) -> Result<Report> {
    let params = CavityParams {
        wavelength_nm: p.req("lambda_nm")?,
        finesse: p.req("finesse")?,
        roc_mm: p.num("roc_mm"),
        l_vac_um: p.req("lvac_um")?,
        l_sic_um: p.req("lsic_um")?,
        n_sic: p.num("n_sic").unwrap_or(DEFAULT_N_SIC),
        waist_um: p.num("wc_um"),
        eta_tot: p.req("eta_tot")?,
        extraction: p.num("extraction").unwrap_or(DEFAULT_EXTRACTION),
    };
    let c = cooperativity(&params)?;
    let mut r = Report::new("cavity");
    r.param("waist", c.waist_um, None, "um");
    r.param("sigma_E", c.sigma_e_m2, None, "m^2");
    r.param("sigma_C", c.sigma_c_m2, None, "m^2");
    r.param("fill_factor", c.fill_factor, None, "");
    r.param("cooperativity", c.cooperativity, None, "");
    r.param("eta_cav", c.eta_cav, None, "");
    r.param("eta_out", c.eta_out, None, "");
    if let Some(spec) = p.str("sweep") {
        let (from, to, n) = parse_sweep(spec)?;
        let sweep = sweep_finesse(&params, from, to, n)?;
        let monotone = sweep.windows(2).all(|w| w[1].1.eta_cav >= w[0].1.eta_cav);
        r.check(
            "eta_cav_monotone_in_finesse",
            monotone,
            format!("{n} points from {from} to {to}"),
        );
        out.add(
            "cavity.sweep.dat".into(),
            columns(
                "finesse cooperativity eta_cav eta_out",
                sweep
                    .iter()
                    .map(|(f, c)| vec![*f, c.cooperativity, c.eta_cav, c.eta_out]),
            ),
        );
    }
    Ok(r)
}

fn run_simulate(cfg: &RunConfig, p: &Params, out: &mut Outputs) -> Result<Report> {
    let spec = GeneratorSpec::load(required_input(cfg, "spec")?)?;
    let target = PathBuf::from(
        p.str("out")
            .ok_or_else(|| Error::Configuration("missing parameter `out`".into()))?,
    );
    let generated = spec.generate()?;
    let text = generated.to_text();
    let n = text.lines().filter(|l| !l.starts_with('#')).count();
    let mut r = Report::new("simulate");
    r.param("n_points", n as f64, None, "");
    r.note(format!("kind: {:?}, seed {}", spec.kind, spec.seed));
    if let Some(meta) = generated.metadata() {
        out.external
            .push((Metadata::sidecar_path(&target), meta.to_toml_string()));
    }
    out.external.push((target, text));
    Ok(r)
}

fn run_report(cfg: &RunConfig, out: &mut Outputs) -> Result<Report> {
    let paths = cfg.inputs.get("reports").map(InputPaths::paths).unwrap_or_default();
    let reports = paths.iter().map(|p| Report::load(p)).collect::<Result<Vec<_>>>()?;
    let summary = report_bundle(&reports)?;
    let text = summary.to_text();
    let mut r = Report::new("report");
    for b in &summary.rows {
        let site = b.site.map_or("-", |s| s.as_str());
        r.param(&format!("{site}_eta_rad"), b.eta_rad, None, "");
        r.param(&format!("{site}_eta_tot"), b.eta_tot, None, "");
    }
    r.note(format!("{} reports, {} site rows", reports.len(), summary.rows.len()));
    out.add("summary.txt".into(), text.clone());
    out.text = Some(text);
    Ok(r)
}

#[derive(Debug, Parser)]
#[command(
    name = "colorcenter",
    version,
    about = "Photophysics analysis of near-infrared color centers"
)]
struct Cli {
    /// Run from a TOML run configuration instead of a subcommand.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory for reports, manifests and data files.
    #[arg(long = "out-dir", global = true)]
    out_dir: Option<PathBuf>,
    /// Also write two-column data files of data and fitted curves.
    #[arg(long = "plot-data", global = true)]
    plot_data: bool,
    #[command(subcommand)]
    command: Option<Cmd>,
}

fn parse_window(s: &str) -> std::result::Result<(f64, f64), String> {
    let (a, b) = s.split_once(',').ok_or("expected t0,t1")?;
    let a: f64 = a.trim().parse().map_err(|e| format!("{e}"))?;
    let b: f64 = b.trim().parse().map_err(|e| format!("{e}"))?;
    Ok((a, b))
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Fit a time-resolved decay trace.
    FitDecay {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long, value_parser = ["auto", "single", "double"])]
        kind: Option<String>,
        #[arg(long, value_parser = parse_window)]
        window: Option<(f64, f64)>,
        #[arg(long)]
        fix_slow_tau: Option<f64>,
        #[arg(long)]
        fix_fast_amplitude: Option<f64>,
        #[arg(long)]
        aic_threshold: Option<f64>,
        /// Weight by observed counts only, without model reweighting.
        #[arg(long)]
        observed_weights: bool,
        #[arg(long)]
        pulse_time_ns: Option<f64>,
        #[arg(long)]
        band_center_nm: Option<f64>,
        #[arg(long)]
        band_width_nm: Option<f64>,
        #[arg(long = "temperature-K")]
        temperature_k: Option<f64>,
        #[arg(long)]
        metadata: Option<PathBuf>,
    },
    /// Fit lifetimes against temperature (columns T_K, tau_ns, sigma_ns).
    FitThermal {
        #[arg(long)]
        points: PathBuf,
    },
    /// Fit the phonon sideband and partition the Debye-Waller factor.
    FitPsb {
        #[arg(long)]
        spectrum: PathBuf,
        #[arg(long)]
        zpl_config: Option<PathBuf>,
        #[arg(long = "partition-meV")]
        partition_mev: Option<f64>,
        #[arg(long = "temperature-K")]
        temperature_k: Option<f64>,
        #[arg(long)]
        resolution_nm: Option<f64>,
        #[arg(long)]
        j_max: Option<u32>,
        #[arg(long = "max-phonon-meV")]
        max_phonon_mev: Option<f64>,
        #[arg(long)]
        truncation_multiplier: Option<f64>,
        #[arg(long)]
        metadata: Option<PathBuf>,
    },
    /// Locate and fit zero-phonon lines.
    Zpl {
        #[arg(long)]
        spectrum: PathBuf,
        #[arg(long)]
        zpl_config: Option<PathBuf>,
        #[arg(long = "temperature-K")]
        temperature_k: Option<f64>,
        #[arg(long)]
        resolution_nm: Option<f64>,
        #[arg(long)]
        metadata: Option<PathBuf>,
    },
    /// Radiative and total efficiency from lifetimes and Debye-Waller factor.
    Budget {
        #[arg(long)]
        tau_rad: f64,
        #[arg(long)]
        tau_tot: f64,
        #[arg(long)]
        dw: f64,
        #[arg(long = "s")]
        s: f64,
        #[arg(long)]
        site: Option<String>,
    },
    /// Purcell enhancement in a Fabry-Pérot microcavity.
    Cavity {
        #[arg(long)]
        lambda_nm: f64,
        #[arg(long)]
        finesse: f64,
        #[arg(long)]
        roc_mm: Option<f64>,
        #[arg(long)]
        lvac_um: f64,
        #[arg(long)]
        lsic_um: f64,
        #[arg(long)]
        eta_tot: f64,
        #[arg(long)]
        n_sic: Option<f64>,
        #[arg(long)]
        wc_um: Option<f64>,
        #[arg(long)]
        extraction: Option<f64>,
        /// `finesse=FROM:TO:N`, log-spaced.
        #[arg(long)]
        sweep: Option<String>,
    },
    /// Generate synthetic data from a generator spec.
    Simulate {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Combine budget reports into one table, one row per site.
    Report {
        #[arg(required = true)]
        reports: Vec<PathBuf>,
    },
}

fn put(t: &mut toml::Table, key: &str, v: Option<impl Into<Value>>) {
    if let Some(v) = v {
        t.insert(key.into(), v.into());
    }
}

fn path_value(p: &Path) -> InputPaths {
    InputPaths::One(p.to_path_buf())
}

impl Cmd {
    fn into_config(self) -> RunConfig {
        let mut t = toml::Table::new();
        let mut inputs = BTreeMap::new();
        let command = match self {
            Cmd::FitDecay {
                trace,
                kind,
                window,
                fix_slow_tau,
                fix_fast_amplitude,
                aic_threshold,
                observed_weights,
                pulse_time_ns,
                band_center_nm,
                band_width_nm,
                temperature_k,
                metadata,
            } => {
                inputs.insert("trace".into(), path_value(&trace));
                if let Some(m) = metadata {
                    inputs.insert("metadata".into(), path_value(&m));
                }
                put(&mut t, "kind", kind);
                put(
                    &mut t,
                    "window",
                    window.map(|(a, b)| Value::Array(vec![a.into(), b.into()])),
                );
                put(&mut t, "fixed_slow_tau_ns", fix_slow_tau);
                put(&mut t, "fixed_fast_amplitude", fix_fast_amplitude);
                put(&mut t, "aic_threshold", aic_threshold);
                put(&mut t, "model_weights", observed_weights.then_some(false));
                put(&mut t, "pulse_time_ns", pulse_time_ns);
                put(&mut t, "band_center_nm", band_center_nm);
                put(&mut t, "band_width_nm", band_width_nm);
                put(&mut t, "temperature_K", temperature_k);
                CommandKind::FitDecay
            }
            Cmd::FitThermal { points } => {
                inputs.insert("points".into(), path_value(&points));
                CommandKind::FitThermal
            }
            Cmd::FitPsb {
                spectrum,
                zpl_config,
                partition_mev,
                temperature_k,
                resolution_nm,
                j_max,
                max_phonon_mev,
                truncation_multiplier,
                metadata,
            } => {
                inputs.insert("spectrum".into(), path_value(&spectrum));
                if let Some(z) = zpl_config {
                    inputs.insert("zpl_config".into(), path_value(&z));
                }
                if let Some(m) = metadata {
                    inputs.insert("metadata".into(), path_value(&m));
                }
                put(&mut t, "partition_meV", partition_mev);
                put(&mut t, "temperature_K", temperature_k);
                put(&mut t, "resolution_nm", resolution_nm);
                put(&mut t, "j_max", j_max.map(i64::from));
                put(&mut t, "max_phonon_meV", max_phonon_mev);
                put(&mut t, "truncation_multiplier", truncation_multiplier);
                CommandKind::FitPsb
            }
            Cmd::Zpl {
                spectrum,
                zpl_config,
                temperature_k,
                resolution_nm,
                metadata,
            } => {
                inputs.insert("spectrum".into(), path_value(&spectrum));
                if let Some(z) = zpl_config {
                    inputs.insert("zpl_config".into(), path_value(&z));
                }
                if let Some(m) = metadata {
                    inputs.insert("metadata".into(), path_value(&m));
                }
                put(&mut t, "temperature_K", temperature_k);
                put(&mut t, "resolution_nm", resolution_nm);
                CommandKind::Zpl
            }
            Cmd::Budget {
                tau_rad,
                tau_tot,
                dw,
                s,
                site,
            } => {
                put(&mut t, "tau_rad", Some(tau_rad));
                put(&mut t, "tau_tot", Some(tau_tot));
                put(&mut t, "dw", Some(dw));
                put(&mut t, "s", Some(s));
                put(&mut t, "site", site);
                CommandKind::Budget
            }
            Cmd::Cavity {
                lambda_nm,
                finesse,
                roc_mm,
                lvac_um,
                lsic_um,
                eta_tot,
                n_sic,
                wc_um,
                extraction,
                sweep,
            } => {
                put(&mut t, "lambda_nm", Some(lambda_nm));
                put(&mut t, "finesse", Some(finesse));
                put(&mut t, "roc_mm", roc_mm);
                put(&mut t, "lvac_um", Some(lvac_um));
                put(&mut t, "lsic_um", Some(lsic_um));
                put(&mut t, "eta_tot", Some(eta_tot));
                put(&mut t, "n_sic", n_sic);
                put(&mut t, "wc_um", wc_um);
                put(&mut t, "extraction", extraction);
                put(&mut t, "sweep", sweep);
                CommandKind::Cavity
            }
            Cmd::Simulate { spec, out } => {
                inputs.insert("spec".into(), path_value(&spec));
                put(&mut t, "out", Some(out.to_string_lossy().into_owned()));
                CommandKind::Simulate
            }
            Cmd::Report { reports } => {
                inputs.insert("reports".into(), InputPaths::Many(reports));
                CommandKind::Report
            }
        };
        RunConfig {
            command,
            output_dir: default_output_dir(),
            emit_plot_data: false,
            inputs,
            parameters: t,
        }
    }
}

enum Setup {
    Usage(String),
    Failed(Error),
}

fn build_config(cli: Cli) -> std::result::Result<RunConfig, Setup> {
    let mut cfg = match (cli.config, cli.command) {
        (Some(_), Some(_)) => return Err(Setup::Usage("--config cannot be combined with a subcommand".into())),
        (None, None) => {
            return Err(Setup::Usage(
                "a subcommand or --config <file> is required (see --help)".into(),
            ))
        }
        (Some(path), None) => RunConfig::load(&path).map_err(Setup::Failed)?,
        (None, Some(cmd)) => cmd.into_config(),
    };
    if let Some(dir) = cli.out_dir {
        cfg.output_dir = dir;
    }
    cfg.emit_plot_data |= cli.plot_data;
    Ok(cfg)
}

/// Parses arguments, runs, prints and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let cfg = match build_config(cli) {
        Ok(cfg) => cfg,
        Err(Setup::Usage(msg)) => {
            eprintln!("error: {msg}");
            return EXIT_USAGE;
        }
        Err(Setup::Failed(e)) => {
            eprintln!("error: {e}");
            return exit_code(&e);
        }
    };
    match run(&cfg) {
        Ok(outcome) => {
            print!("{}", outcome.text);
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_parameter_is_rejected() {
        let mut cfg = RunConfig::new(CommandKind::Budget);
        for (k, v) in [("tau_rad", 704.0), ("tau_tot", 163.0), ("dw", 0.39), ("s", 0.66)] {
            cfg.parameters.insert(k.into(), v.into());
        }
        assert!(validate_config(&cfg).is_ok());
        cfg.parameters.insert("tau_radd".into(), 1.0.into());
        let err = validate_config(&cfg).unwrap_err();
        assert!(err.to_string().contains("tau_radd"), "{err}");
    }

    #[test]
    fn wrong_type_and_missing_key() {
        let mut cfg = RunConfig::new(CommandKind::Budget);
        cfg.parameters.insert("tau_rad".into(), "704".into());
        assert!(matches!(validate_config(&cfg), Err(Error::Configuration(_))));
        cfg.parameters.insert("tau_rad".into(), 704.into());
        let err = validate_config(&cfg).unwrap_err();
        assert!(err.to_string().contains("missing parameter"), "{err}");
    }

    #[test]
    fn config_round_trips() {
        let cli = Cli::try_parse_from([
            "colorcenter",
            "fit-decay",
            "--trace",
            "a.dat",
            "--kind",
            "double",
            "--window",
            "100,900",
        ])
        .unwrap();
        let cfg = build_config(cli).ok().unwrap();
        assert_eq!(cfg.command, CommandKind::FitDecay);
        assert_eq!(Params(&cfg.parameters).pair("window"), Some((100.0, 900.0)));
        let back = RunConfig::from_toml_str(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn relative_paths_follow_config_file() {
        let cfg = RunConfig::from_toml_str(
            "command = \"simulate\"\noutput_dir = \"out\"\n[inputs]\nspec = \"g.toml\"\n[parameters]\nout = \"t.dat\"\n",
        )
        .unwrap()
        .rebased(Path::new("/data/run"));
        assert_eq!(cfg.output_dir, PathBuf::from("/data/run/out"));
        assert_eq!(cfg.input("spec"), Some(Path::new("/data/run/g.toml")));
        assert_eq!(cfg.parameters["out"].as_str(), Some("/data/run/t.dat"));
    }

    #[test]
    fn sweep_spec() {
        assert_eq!(parse_sweep("finesse=100:100000:31").unwrap(), (100.0, 1e5, 31));
        assert!(parse_sweep("roc=1:2:3").is_err());
    }

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(main_with_args(["colorcenter"]), EXIT_USAGE);
        assert_eq!(main_with_args(["colorcenter", "budget", "--tau-rad", "x"]), EXIT_USAGE);
    }
}
