//! Run configuration, orchestration and file output.
//!
//! Configs are TOML. Every section and key is optional; unknown keys are
//! errors. The top-level `seed` is the single source of randomness: it is
//! copied into `scenario.rng_seed` and `bench.seed` when the config is
//! resolved. `print_config` emits the resolved config with every default
//! spelled out, and parsing that text gives back the same config.
//!
//! ```toml
//! seed = 7
//! mode = "scalar"            # or "polarized"
//!
//! [scenario]
//! f0 = 3.0e9
//! link_count = 2
//!
//! [tx]
//! layout = "ula"             # or "upa" with rows/cols
//! count = 8
//! pattern = { kind = "sectorized", azimuth_3db_deg = 65.0, elevation_3db_deg = 65.0, max_attenuation_db = 30.0 }
//!
//! [grid]
//! times = [0.0, 1.0e-3]
//! freqs = { count = 12, spacing = 15.0e3 }   # centered on f0
//! ```
//!
//! All floating-point CSV fields use `{:.16e}` (17 significant digits).

use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::antenna::{make_ula, make_upa, ArrayDescriptor, ArrayPattern, ElementPattern, PolarizedPattern};
use crate::bench::{run_bench, BenchConfig, BenchEnvironment};
use crate::covariance::{
    convergence_experiment, sample_covariance_ensemble, sample_covariance_time, theoretical_covariance,
    time_limit_covariance, ConvergenceConfig, ConvergenceRow, CovarianceReport, Provenance, Side,
};
use crate::engine::{channel_grid, precompute_spatial, SpatialMatrices};
use crate::error::{Error, Result};
use crate::geometry::{Angles, LinkMultipath, Vec3};
use crate::linalg::CMatrix;
use crate::params::{generate_links, PolarizationConfig, ScenarioConfig};
use crate::polarized::{polarized_grid, precompute_polarized, PolTerm};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EngineMode {
    #[default]
    Scalar,
    Polarized,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArrayLayout {
    #[default]
    Ula,
    Upa,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PatternSettings {
    #[default]
    Isotropic,
    Sectorized {
        azimuth_3db_deg: f64,
        elevation_3db_deg: f64,
        max_attenuation_db: f64,
        #[serde(default)]
        boresight_azimuth_deg: f64,
    },
    CosinePower {
        exponent: f64,
        #[serde(default = "default_boresight_theta")]
        boresight_theta_deg: f64,
        #[serde(default)]
        boresight_phi_deg: f64,
    },
}

fn default_boresight_theta() -> f64 {
    90.0
}

impl PatternSettings {
    pub fn element(&self) -> ElementPattern {
        match *self {
            PatternSettings::Isotropic => ElementPattern::Isotropic,
            PatternSettings::Sectorized {
                azimuth_3db_deg,
                elevation_3db_deg,
                max_attenuation_db,
                boresight_azimuth_deg,
            } => ElementPattern::Sectorized {
                azimuth_3db_deg,
                elevation_3db_deg,
                max_attenuation_db,
                boresight_azimuth: boresight_azimuth_deg.to_radians(),
            },
            PatternSettings::CosinePower {
                exponent,
                boresight_theta_deg,
                boresight_phi_deg,
            } => ElementPattern::CosinePower {
                exponent,
                boresight: Angles::from_degrees(boresight_theta_deg, boresight_phi_deg),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArraySettings {
    pub layout: ArrayLayout,
    /// Elements of a ULA.
    pub count: usize,
    /// UPA rows (along z) and columns (along y).
    pub rows: usize,
    pub cols: usize,
    pub spacing_wavelengths: f64,
    /// ULA axis, unit length.
    pub axis: Vec3,
    pub pattern: PatternSettings,
    /// Element slant from vertical in polarized mode, degrees.
    pub slant_deg: f64,
}

impl Default for ArraySettings {
    fn default() -> Self {
        ArraySettings {
            layout: ArrayLayout::Ula,
            count: 1,
            rows: 1,
            cols: 1,
            spacing_wavelengths: 0.5,
            axis: Vec3::Y,
            pattern: PatternSettings::Isotropic,
            slant_deg: 45.0,
        }
    }
}

impl ArraySettings {
    pub fn build(&self, f0: f64, mode: EngineMode) -> Result<ArrayDescriptor> {
        let array = match self.layout {
            ArrayLayout::Ula => make_ula(self.count, self.spacing_wavelengths, f0, self.axis)?,
            ArrayLayout::Upa => make_upa(self.rows, self.cols, self.spacing_wavelengths, f0)?,
        };
        let element = self.pattern.element();
        element.validate()?;
        let pattern = match mode {
            EngineMode::Scalar => ArrayPattern::Scalar(element),
            EngineMode::Polarized => ArrayPattern::Polarized(PolarizedPattern::slanted(element, self.slant_deg.to_radians())?),
        };
        array.with_pattern(pattern)
    }
}

/// Time axis: explicit seconds, or `count` points `start + k * step`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TimeAxis {
    List(Vec<f64>),
    Uniform {
        count: usize,
        step: f64,
        #[serde(default)]
        start: f64,
    },
}

/// Frequency axis: explicit Hz, or `count` points `spacing` apart centered
/// on the carrier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FreqAxis {
    List(Vec<f64>),
    Uniform { count: usize, spacing: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSettings {
    pub times: TimeAxis,
    pub freqs: FreqAxis,
}

impl Default for GridSettings {
    fn default() -> Self {
        GridSettings {
            times: TimeAxis::List(vec![0.0]),
            freqs: FreqAxis::Uniform {
                count: 1,
                spacing: 15e3,
            },
        }
    }
}

impl GridSettings {
    pub fn times(&self) -> Vec<f64> {
        match &self.times {
            TimeAxis::List(v) => v.clone(),
            TimeAxis::Uniform { count, step, start } => (0..*count).map(|k| start + k as f64 * step).collect(),
        }
    }

    pub fn freqs(&self, f0: f64) -> Vec<f64> {
        match &self.freqs {
            FreqAxis::List(v) => v.clone(),
            FreqAxis::Uniform { count, spacing } => {
                let mid = (*count as f64 - 1.0) / 2.0;
                (0..*count).map(|k| f0 + (k as f64 - mid) * spacing).collect()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CovarianceSettings {
    pub side: Side,
    pub link_index: usize,
    /// Evaluation frequency, Hz; the carrier when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub frequency: Option<f64>,
    /// Time of the ensemble draws, s.
    pub time: f64,
    /// Time samples in the time-average estimate, `sample_interval` apart.
    pub time_samples: usize,
    pub sample_interval: f64,
    pub n_draws: usize,
    pub nu_tolerance: f64,
}

impl Default for CovarianceSettings {
    fn default() -> Self {
        CovarianceSettings {
            side: Side::Receive,
            link_index: 0,
            frequency: None,
            time: 0.0,
            time_samples: 1,
            sample_interval: 1e-3,
            n_draws: 10_000,
            nu_tolerance: crate::covariance::DEFAULT_NU_TOLERANCE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConvergenceSettings {
    pub side: Side,
    pub link_index: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub frequency: Option<f64>,
    pub ensemble_time: f64,
    /// 14 OFDM symbols per 1 ms subframe by default.
    pub sample_interval: f64,
    pub time_budgets: Vec<usize>,
    pub ensemble_budgets: Vec<usize>,
}

impl Default for ConvergenceSettings {
    fn default() -> Self {
        ConvergenceSettings {
            side: Side::Receive,
            link_index: 0,
            frequency: None,
            ensemble_time: 0.0,
            sample_interval: 1e-3 / 14.0,
            time_budgets: vec![1, 10, 100, 1_000, 10_000, 100_000],
            ensemble_budgets: vec![1, 10, 100, 1_000, 10_000],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSettings {
    pub dir: String,
}

impl Default for OutputSettings {
    fn default() -> Self {
        OutputSettings { dir: "out".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub mode: EngineMode,
    pub scenario: ScenarioConfig,
    pub tx: ArraySettings,
    pub rx: ArraySettings,
    pub grid: GridSettings,
    pub covariance: CovarianceSettings,
    pub convergence: ConvergenceSettings,
    pub bench: BenchConfig,
    pub output: OutputSettings,
}

impl RunConfig {
    /// Propagates the seed and mode into the sections that depend on them.
    pub fn resolve(&mut self) {
        self.scenario.rng_seed = self.seed;
        self.bench.seed = self.seed;
        if self.mode == EngineMode::Polarized && self.scenario.polarization.is_none() {
            self.scenario.polarization = Some(PolarizationConfig::default());
        }
        self.bench.polarized = self.mode == EngineMode::Polarized;
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.resolve();
    }

    pub fn validate(&self) -> Result<()> {
        in_section("scenario", self.scenario.validate())?;
        let f0 = self.scenario.f0;
        in_section("tx", self.tx.build(f0, self.mode).map(drop))?;
        in_section("rx", self.rx.build(f0, self.mode).map(drop))?;
        let times = self.grid.times();
        if times.is_empty() || times.iter().any(|t| !t.is_finite()) {
            return Err(config_error("grid.times", "must resolve to a nonempty list of finite times"));
        }
        let freqs = self.grid.freqs(f0);
        if freqs.is_empty() || freqs.iter().any(|f| !(f.is_finite() && *f >= 0.0)) {
            return Err(config_error("grid.freqs", "must resolve to a nonempty list of finite, nonnegative frequencies"));
        }
        let links = self.scenario.link_count;
        let c = &self.covariance;
        if c.link_index >= links {
            return Err(config_error("covariance.link_index", "must be below scenario.link_count"));
        }
        if c.time_samples == 0 {
            return Err(config_error("covariance.time_samples", "must be >= 1"));
        }
        if c.n_draws == 0 {
            return Err(config_error("covariance.n_draws", "must be >= 1"));
        }
        if !(c.sample_interval.is_finite() && c.sample_interval > 0.0) {
            return Err(config_error("covariance.sample_interval", "must be > 0"));
        }
        if !(c.nu_tolerance.is_finite() && c.nu_tolerance >= 0.0) {
            return Err(config_error("covariance.nu_tolerance", "must be >= 0"));
        }
        let v = &self.convergence;
        if v.link_index >= links {
            return Err(config_error("convergence.link_index", "must be below scenario.link_count"));
        }
        if !(v.sample_interval.is_finite() && v.sample_interval > 0.0) {
            return Err(config_error("convergence.sample_interval", "must be > 0"));
        }
        for (key, budgets) in [
            ("convergence.time_budgets", &v.time_budgets),
            ("convergence.ensemble_budgets", &v.ensemble_budgets),
        ] {
            if budgets.is_empty() || budgets[0] == 0 || budgets.windows(2).any(|w| w[1] <= w[0]) {
                return Err(config_error(key, "must be a nonempty, strictly increasing list of positive counts"));
            }
        }
        for f in [c.frequency, v.frequency].into_iter().flatten() {
            if !(f.is_finite() && f >= 0.0) {
                return Err(config_error("frequency", "must be finite and >= 0"));
            }
        }
        in_section("bench", self.bench.validate())?;
        if self.output.dir.is_empty() {
            return Err(config_error("output.dir", "must not be empty"));
        }
        Ok(())
    }
}

fn config_error(key: impl Into<String>, reason: impl Into<String>) -> Error {
    Error::Config {
        key: key.into(),
        reason: reason.into(),
    }
}

/// Re-labels a parameter error with its config section.
fn in_section<T>(section: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::InvalidParameter { name, reason } => config_error(format!("{section}.{name}"), reason),
        other => other,
    })
}

/// Dotted key at byte offset `at` of a TOML document, best effort.
fn key_at(text: &str, at: usize) -> String {
    let at = at.min(text.len());
    let line_start = text[..at].rfind('\n').map_or(0, |i| i + 1);
    let line_end = text[at..].find('\n').map_or(text.len(), |i| at + i);
    let line = text[line_start..line_end].trim();
    let header = |l: &str| l.trim_start_matches('[').trim_end_matches(']').trim().to_string();
    if line.starts_with('[') {
        return header(line);
    }
    let key = line.split('=').next().unwrap_or("").trim().trim_matches('"').to_string();
    let table = text[..line_start]
        .lines()
        .rev()
        .map(str::trim)
        .find(|l| l.starts_with('['))
        .map(header);
    // inline tables: name the innermost `key =` left of the error
    let inner = text[line_start..at]
        .rsplit(['{', ','])
        .next()
        .and_then(|seg| seg.split('=').next())
        .map(|k| k.trim().trim_matches('"').to_string())
        .filter(|k| !k.is_empty() && *k != key && !k.contains(['[', '{', '}']));
    let mut path = match table {
        Some(t) if !t.is_empty() => format!("{t}.{key}"),
        _ => key,
    };
    if let Some(inner) = inner {
        if !inner.contains(' ') {
            path = format!("{path}.{inner}");
        }
    }
    path
}

/// Parses, resolves and validates a TOML run config.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let mut cfg: RunConfig = toml::from_str(text).map_err(|e| {
        let key = e.span().map(|s| key_at(text, s.start)).unwrap_or_default();
        config_error(if key.is_empty() { "<document>".to_string() } else { key }, e.message().to_string())
    })?;
    cfg.resolve();
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path).map_err(|e| config_error(path.display().to_string(), format!("cannot read config: {e}")))?;
    parse_config(&text)
}

/// The resolved config as TOML, defaults included.
pub fn print_config(cfg: &RunConfig) -> String {
    toml::to_string(cfg).expect("run config serializes to TOML")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Subcommand {
    Simulate,
    Bench,
    Covariance,
    Convergence,
}

impl Subcommand {
    pub fn label(self) -> &'static str {
        match self {
            Subcommand::Simulate => "simulate",
            Subcommand::Bench => "bench",
            Subcommand::Covariance => "covariance",
            Subcommand::Convergence => "convergence",
        }
    }

    fn default_file(self) -> &'static str {
        match self {
            Subcommand::Simulate => "channel.csv",
            Subcommand::Bench => "bench.csv",
            Subcommand::Covariance => "covariance_summary.csv",
            Subcommand::Convergence => "convergence.csv",
        }
    }
}

/// Where a run writes. A `.csv` path names the main output file of a
/// single-file subcommand; anything else is a directory.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputTarget {
    pub dir: PathBuf,
    pub main_file: PathBuf,
}

impl OutputTarget {
    pub fn new(out: &Path, sub: Subcommand) -> Self {
        let single_file = sub != Subcommand::Covariance && out.extension().is_some_and(|e| e == "csv");
        if single_file {
            let dir = out.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new(".")).to_path_buf();
            OutputTarget {
                dir,
                main_file: out.to_path_buf(),
            }
        } else {
            OutputTarget {
                dir: out.to_path_buf(),
                main_file: out.join(sub.default_file()),
            }
        }
    }

    fn manifest(&self) -> PathBuf {
        let stem = self.main_file.file_stem().and_then(|s| s.to_str()).unwrap_or("run");
        self.main_file.with_file_name(format!("{stem}.manifest.toml"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub outputs: Vec<PathBuf>,
    pub manifest: PathBuf,
}

#[derive(Serialize)]
struct Manifest<'a> {
    subcommand: &'a str,
    seed: u64,
    library_version: &'a str,
    started_unix_seconds: f64,
    wall_time_seconds: f64,
    outputs: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    environment: Option<BenchEnvironment>,
    config: &'a RunConfig,
}

fn write_file(path: &Path, body: &str) -> Result<()> {
    fs::write(path, body).map_err(|e| Error::io(path, e))
}

fn runtime(module: &'static str) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::InvalidParameter { name, reason } => Error::Runtime {
            module,
            reason: format!("{name}: {reason}"),
        },
        other => other,
    }
}

/// Runs one subcommand, writing its CSVs and a manifest under `out`.
pub fn run(sub: Subcommand, cfg: &RunConfig, out: &Path) -> Result<RunSummary> {
    let started = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64());
    let clock = Instant::now();
    let target = OutputTarget::new(out, sub);
    fs::create_dir_all(&target.dir).map_err(|e| Error::io(&target.dir, e))?;
    let mut environment = None;
    let outputs = match sub {
        Subcommand::Simulate => {
            simulate(cfg, &target.main_file)?;
            vec![target.main_file.clone()]
        }
        Subcommand::Bench => {
            let report = run_bench(&cfg.bench).map_err(runtime("bench"))?;
            write_file(&target.main_file, &report.to_csv())?;
            environment = Some(report.environment);
            vec![target.main_file.clone()]
        }
        Subcommand::Covariance => covariance(cfg, &target.dir)?,
        Subcommand::Convergence => {
            let rows = convergence(cfg)?;
            write_file(&target.main_file, &convergence_csv(&rows))?;
            vec![target.main_file.clone()]
        }
    };
    let manifest = Manifest {
        subcommand: sub.label(),
        seed: cfg.seed,
        library_version: env!("CARGO_PKG_VERSION"),
        started_unix_seconds: started,
        wall_time_seconds: clock.elapsed().as_secs_f64(),
        outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
        environment,
        config: cfg,
    };
    let path = target.manifest();
    write_file(&path, &toml::to_string(&manifest).expect("manifest serializes"))?;
    Ok(RunSummary { outputs, manifest: path })
}

fn arrays(cfg: &RunConfig) -> Result<(ArrayDescriptor, ArrayDescriptor)> {
    let f0 = cfg.scenario.f0;
    Ok((
        in_section("tx", cfg.tx.build(f0, cfg.mode))?,
        in_section("rx", cfg.rx.build(f0, cfg.mode))?,
    ))
}

/// Channel CSV: one row per link, time, frequency and matrix entry
/// (and polarization term in polarized mode).
pub fn simulate(cfg: &RunConfig, path: &Path) -> Result<()> {
    let links = generate_links(&cfg.scenario).map_err(runtime("param_pipeline"))?;
    let (tx, rx) = arrays(cfg)?;
    let times = cfg.grid.times();
    let freqs = cfg.grid.freqs(cfg.scenario.f0);
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io_err = |e| Error::io(path, e);
    let polarized = cfg.mode == EngineMode::Polarized;
    if polarized {
        writeln!(w, "link_id,t_index,f_index,rx,tx,pol_term,real,imag").map_err(io_err)?;
    } else {
        writeln!(w, "link_id,t_index,f_index,rx,tx,real,imag").map_err(io_err)?;
    }
    let nf = freqs.len();
    for (li, link) in links.iter().enumerate() {
        if polarized {
            let psp = precompute_polarized(link, &tx, &rx).map_err(runtime("polarized_engine"))?;
            let grid = polarized_grid(&psp, &freqs, &times).map_err(runtime("polarized_engine"))?;
            for (cell, ch) in grid.iter().enumerate() {
                for term in PolTerm::ALL {
                    let h = ch.term(term);
                    for r in 0..h.rows() {
                        for s in 0..h.cols() {
                            let z = h[(r, s)];
                            writeln!(w, "{li},{},{},{r},{s},{},{:.16e},{:.16e}", cell / nf, cell % nf, term.label(), z.re, z.im)
                                .map_err(io_err)?;
                        }
                    }
                }
            }
        } else {
            let sp = precompute_spatial(link, &tx, &rx).map_err(runtime("coeff_engine"))?;
            let grid = channel_grid(&sp, &freqs, &times).map_err(runtime("coeff_engine"))?;
            let (nt, _, nr, ns) = grid.dims();
            for ti in 0..nt {
                for fi in 0..nf {
                    let cell = grid.cell(ti, fi);
                    for r in 0..nr {
                        for s in 0..ns {
                            let z = cell[r * ns + s];
                            writeln!(w, "{li},{ti},{fi},{r},{s},{:.16e},{:.16e}", z.re, z.im).map_err(io_err)?;
                        }
                    }
                }
            }
        }
    }
    w.flush().map_err(io_err)
}

/// Covariance matrix CSV: `row,col,real,imag`.
pub fn matrix_csv(m: &CMatrix) -> String {
    let mut s = String::from("row,col,real,imag\n");
    for r in 0..m.rows() {
        for c in 0..m.cols() {
            let z = m[(r, c)];
            let _ = writeln!(s, "{r},{c},{:.16e},{:.16e}", z.re, z.im);
        }
    }
    s
}

pub fn convergence_csv(rows: &[ConvergenceRow]) -> String {
    let mut s = String::from("estimator,budget,error\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{:.16e}", r.estimator.label(), r.budget, r.frobenius_error);
    }
    s
}

fn scalar_link(cfg: &RunConfig, index: usize, module: &'static str) -> Result<(LinkMultipath, SpatialMatrices)> {
    if cfg.mode != EngineMode::Scalar {
        return Err(config_error("mode", format!("{module} runs on the scalar engine only")));
    }
    let link = crate::params::generate_link(&cfg.scenario, index).map_err(runtime("param_pipeline"))?;
    let (tx, rx) = arrays(cfg)?;
    let sp = precompute_spatial(&link, &tx, &rx).map_err(runtime("coeff_engine"))?;
    Ok((link, sp))
}

/// Theoretical, time-limit, time-sample and ensemble covariance of one link.
pub fn covariance_reports(cfg: &RunConfig) -> Result<Vec<CovarianceReport>> {
    let c = &cfg.covariance;
    let (_, sp) = scalar_link(cfg, c.link_index, "covariance")?;
    let f = c.frequency.unwrap_or(cfg.scenario.f0);
    let times: Vec<f64> = (0..c.time_samples).map(|k| k as f64 * c.sample_interval).collect();
    let wrap = runtime("covariance_lab");
    Ok(vec![
        theoretical_covariance(&sp, c.side, c.nu_tolerance),
        time_limit_covariance(&sp, f, c.side, c.nu_tolerance),
        sample_covariance_time(&sp, f, &times, c.side).map_err(&wrap)?,
        sample_covariance_ensemble(&sp, f, c.time, c.n_draws, cfg.seed, c.side).map_err(&wrap)?,
    ])
}

fn provenance_fields(p: &Provenance) -> (&'static str, usize) {
    match *p {
        Provenance::Theoretical => ("theoretical", 0),
        Provenance::TimeLimit { .. } => ("time_limit", 0),
        Provenance::TimeSample { n_samples, .. } => ("time", n_samples),
        Provenance::EnsembleSample { n_draws } => ("ensemble", n_draws),
    }
}

fn covariance(cfg: &RunConfig, dir: &Path) -> Result<Vec<PathBuf>> {
    let reports = covariance_reports(cfg)?;
    let mut outputs = Vec::new();
    let mut summary =
        String::from("estimate,side,samples,frobenius_error,hermitian_defect,min_eigen_ratio,degenerate_doppler_subpaths\n");
    for r in &reports {
        let (name, n) = provenance_fields(&r.provenance);
        let path = dir.join(format!("covariance_{name}.csv"));
        write_file(&path, &matrix_csv(&r.matrix))?;
        outputs.push(path);
        let _ = writeln!(
            summary,
            "{name},{},{n},{:.16e},{:.16e},{:.16e},{}",
            r.side.label(),
            r.frobenius_error_vs_theoretical.unwrap_or(f64::NAN),
            r.hermitian_defect(),
            r.min_eigen_ratio(),
            r.degenerate_doppler_subpaths
        );
    }
    let path = dir.join("covariance_summary.csv");
    write_file(&path, &summary)?;
    outputs.push(path);
    Ok(outputs)
}

pub fn convergence(cfg: &RunConfig) -> Result<Vec<ConvergenceRow>> {
    let v = &cfg.convergence;
    let (_, sp) = scalar_link(cfg, v.link_index, "convergence")?;
    let exp = ConvergenceConfig {
        f: v.frequency.unwrap_or(cfg.scenario.f0),
        ensemble_time: v.ensemble_time,
        sample_interval: v.sample_interval,
        time_budgets: v.time_budgets.clone(),
        ensemble_budgets: v.ensemble_budgets.clone(),
        seed: cfg.seed,
        side: v.side,
    };
    convergence_experiment(&sp, &exp).map_err(runtime("covariance_lab"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let mut cfg = RunConfig::default();
        cfg.resolve();
        let text = print_config(&cfg);
        assert_eq!(parse_config(&text).unwrap(), cfg);
    }

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = parse_config("seed = 9\n[scenario]\nf0 = 2.0e9\n[tx]\ncount = 4\n").unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.scenario.rng_seed, 9);
        assert_eq!(cfg.bench.seed, 9);
        assert_eq!(cfg.tx.count, 4);
        assert_eq!(cfg.rx, ArraySettings::default());
        assert_eq!(cfg.scenario.link_count, ScenarioConfig::default().link_count);
        let printed = print_config(&cfg);
        assert!(printed.contains("link_count"));
        assert_eq!(parse_config(&printed).unwrap(), cfg);
    }

    #[test]
    fn negative_carrier_names_f0() {
        let err = parse_config("[scenario]\nf0 = -1.0\n").unwrap_err();
        match err {
            Error::Config { key, reason } => {
                assert_eq!(key, "scenario.f0");
                assert!(reason.contains("positive"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_keys_are_rejected_with_their_path() {
        let err = parse_config("[scenario]\nf0 = 3.0e9\nbogus = 1\n").unwrap_err();
        assert!(matches!(&err, Error::Config { key, reason } if key == "scenario.bogus" && reason.contains("bogus")), "{err:?}");
        let err = parse_config("sed = 1\n").unwrap_err();
        assert!(matches!(&err, Error::Config { key, .. } if key == "sed"), "{err:?}");
        let err = parse_config("[tx]\npattern = { kind = \"cosine_power\", exponent = 2.0, gain = 2.0 }\n").unwrap_err();
        assert!(matches!(&err, Error::Config { key, .. } if key.starts_with("tx.pattern")), "{err:?}");
    }

    #[test]
    fn out_of_range_values_name_their_key() {
        for (text, key) in [
            ("[tx]\ncount = 0\n", "tx.count"),
            ("[grid]\ntimes = []\n", "grid.times"),
            ("[bench]\nrepetitions = 1\n", "bench.repetitions"),
            ("[covariance]\nlink_index = 99\n", "covariance.link_index"),
            ("[convergence]\ntime_budgets = [10, 5]\n", "convergence.time_budgets"),
        ] {
            match parse_config(text) {
                Err(Error::Config { key: k, .. }) => assert_eq!(k, key, "{text}"),
                other => panic!("{text}: {other:?}"),
            }
        }
    }

    #[test]
    fn polarized_mode_fills_polarization() {
        let cfg = parse_config("mode = \"polarized\"\n").unwrap();
        assert!(cfg.scenario.polarization.is_some());
        assert!(cfg.bench.polarized);
        assert_eq!(parse_config(&print_config(&cfg)).unwrap(), cfg);
    }

    #[test]
    fn axes_resolve() {
        let cfg = parse_config(
            "[grid]\ntimes = { count = 3, step = 0.5, start = 1.0 }\nfreqs = [1.0e9, 2.0e9]\n",
        )
        .unwrap();
        assert_eq!(cfg.grid.times(), vec![1.0, 1.5, 2.0]);
        assert_eq!(cfg.grid.freqs(3e9), vec![1e9, 2e9]);
        let cfg = parse_config("[grid]\nfreqs = { count = 2, spacing = 10.0 }\n").unwrap();
        assert_eq!(cfg.grid.freqs(100.0), vec![95.0, 105.0]);
    }

    #[test]
    fn output_target_rules() {
        let t = OutputTarget::new(Path::new("runs/report.csv"), Subcommand::Bench);
        assert_eq!(t.dir, Path::new("runs"));
        assert_eq!(t.main_file, Path::new("runs/report.csv"));
        assert_eq!(t.manifest(), Path::new("runs/report.manifest.toml"));
        let t = OutputTarget::new(Path::new("runs"), Subcommand::Simulate);
        assert_eq!(t.main_file, Path::new("runs/channel.csv"));
        let t = OutputTarget::new(Path::new("x.csv"), Subcommand::Covariance);
        assert_eq!(t.dir, Path::new("x.csv"));
    }
}
