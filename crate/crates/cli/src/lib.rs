//! Command-line runs: config parsing, CSV output and run manifests.

pub mod manifest;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use volterra_core::config::{KernelConfig, ModelConfig};
use volterra_core::experiments::{chaos_rate_exponent, chaos_study, strong_rate_study, ExponentVariant, StudyConfig, StudyReport};
use volterra_core::kernel::{hoelder_probe_tol, integrability_probe_tol, HoelderMode, ProbeReport, DEFAULT_PROBE_TOL};
use volterra_core::measure::{w2, EmpiricalMeasure};
use volterra_core::resolvent::{resolvent_sum, verify_resolvent_identity, TriGrid};
use volterra_core::rng::make_brownian;
use volterra_core::scheme::{euler_simulate, picard_simulate, Ensemble};

pub use manifest::RunManifest;

pub const OUT_DIR_ENV: &str = "VOLTERRA_OUT_DIR";

/// Failure categories; `Display` is the single line printed on exit.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("error[config]: {0}")]
    Config(String),
    #[error("error[input]: {0}")]
    Input(String),
    #[error("error[io]: {0}")]
    Io(String),
    #[error("error[numeric]: {0}")]
    Numeric(String),
    #[error("error[runtime]: {0}")]
    Runtime(String),
}

impl CliError {
    pub fn category(&self) -> &'static str {
        match self {
            Self::Config(_) => "config",
            Self::Input(_) => "input",
            Self::Io(_) => "io",
            Self::Numeric(_) => "numeric",
            Self::Runtime(_) => "runtime",
        }
    }

    /// Exit status for this category; always nonzero.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 2,
            Self::Input(_) => 3,
            Self::Io(_) => 4,
            Self::Numeric(_) => 5,
            Self::Runtime(_) => 6,
        }
    }

    /// The message flattened onto one line.
    pub fn line(&self) -> String {
        self.to_string().split_whitespace().collect::<Vec<_>>().join(" ")
    }
}

fn numeric(context: &str, e: impl std::fmt::Display) -> CliError {
    CliError::Numeric(format!("{context}: {e}"))
}

#[derive(Debug, Parser)]
#[command(name = "volterra", version, about = "Particle simulations for Volterra McKean-Vlasov equations")]
pub struct Cli {
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Overrides the seed in the config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, env = OUT_DIR_ENV, default_value = "volterra-out")]
    pub out: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct ConfigArg {
    #[arg(long, short)]
    pub config: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a particle system and write its trajectories.
    Simulate(ConfigArg),
    /// Strong error against the time-step size.
    ConvergeTime(ConfigArg),
    /// Propagation-of-chaos error against the particle count.
    ConvergeChaos(ConfigArg),
    /// Print the theoretical chaos-rate exponents.
    ChaosRate {
        #[arg(long)]
        p: f64,
        #[arg(long)]
        d: u32,
        #[arg(long)]
        q: f64,
    },
    /// Tabulate the resolvent of a kernel.
    Resolvent(ConfigArg),
    /// Integrability or Hölder probe of a kernel.
    KernelProbe(ConfigArg),
    /// W2 distance between two CSV point clouds.
    Wasserstein { first: PathBuf, second: PathBuf },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Simulate(_) => "simulate",
            Self::ConvergeTime(_) => "converge-time",
            Self::ConvergeChaos(_) => "converge-chaos",
            Self::ChaosRate { .. } => "chaos-rate",
            Self::Resolvent(_) => "resolvent",
            Self::KernelProbe(_) => "kernel-probe",
            Self::Wasserstein { .. } => "wasserstein",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Euler,
    Picard,
}

fn default_method() -> Method {
    Method::Euler
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateParams {
    pub seed: u64,
    pub level: u32,
    pub particles: usize,
    /// Level of the Brownian store; defaults to `level`.
    #[serde(default)]
    pub n_max: Option<u32>,
    #[serde(default = "default_method")]
    pub method: Method,
    /// Picard sweeps; only read by `method = "picard"`.
    #[serde(default = "one")]
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub model: ModelConfig,
    pub simulate: SimulateParams,
}

fn default_horizon() -> f64 {
    1.0
}

fn default_series_tol() -> f64 {
    1e-12
}

fn default_max_terms() -> usize {
    200
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResolventParams {
    pub level: u32,
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    #[serde(default = "default_series_tol")]
    pub tol: f64,
    #[serde(default = "default_max_terms")]
    pub max_terms: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResolventConfig {
    pub kernel: KernelConfig,
    pub resolvent: ResolventParams,
}

fn default_probe_tol() -> f64 {
    DEFAULT_PROBE_TOL
}

fn default_beta() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProbeParams {
    Integrability {
        #[serde(default = "default_beta")]
        beta: f64,
        grid_times: Vec<f64>,
        #[serde(default = "default_probe_tol")]
        tol: f64,
    },
    L1Shift {
        base_t: f64,
        lags: Vec<f64>,
        #[serde(default = "default_probe_tol")]
        tol: f64,
    },
    L2Shift {
        base_t: f64,
        lags: Vec<f64>,
        #[serde(default = "default_probe_tol")]
        tol: f64,
    },
    L2Tail {
        base_t: f64,
        lags: Vec<f64>,
        #[serde(default = "default_probe_tol")]
        tol: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeConfig {
    pub kernel: KernelConfig,
    pub probe: ProbeParams,
}

/// Reads and parses a TOML config file.
pub fn load_config<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| {
        let at = e.span().map(|r| format!(" (bytes {}..{})", r.start, r.end)).unwrap_or_default();
        CliError::Config(format!("{}: {}{at}", path.display(), e.message().trim()))
    })
}

fn echo<T: Serialize>(cfg: &T) -> Result<String, CliError> {
    toml::to_string(cfg).map_err(|e| CliError::Runtime(format!("config echo: {e}")))
}

fn prepare_out(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))
}

/// What a finished command leaves behind.
#[derive(Debug, Default)]
pub struct Outcome {
    pub stdout: String,
    pub manifest: Option<RunManifest>,
}

/// Runs a parsed command line inside a pool of the requested size.
pub fn run(cli: &Cli) -> Result<Outcome, CliError> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be at least 1".into()));
        }
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| CliError::Runtime(format!("thread pool: {e}")))?;
    pool.install(|| dispatch(cli))
}

fn dispatch(cli: &Cli) -> Result<Outcome, CliError> {
    let start = Instant::now();
    let mut outcome = match &cli.command {
        Command::Simulate(c) => simulate(&c.config, cli.seed, &cli.out)?,
        Command::ConvergeTime(c) => study(&c.config, cli.seed, &cli.out, false)?,
        Command::ConvergeChaos(c) => study(&c.config, cli.seed, &cli.out, true)?,
        Command::ChaosRate { p, d, q } => Outcome { stdout: chaos_rate_table(*p, *d, *q)?, manifest: None },
        Command::Resolvent(c) => resolvent(&c.config, &cli.out)?,
        Command::KernelProbe(c) => kernel_probe(&c.config, &cli.out)?,
        Command::Wasserstein { first, second } => {
            let d = w2(&read_points(first)?, &read_points(second)?).map_err(|e| CliError::Input(e.to_string()))?;
            Outcome { stdout: format!("{d}\n"), manifest: None }
        }
    };
    if let Some(m) = outcome.manifest.as_mut() {
        m.wall_time_s = start.elapsed().as_secs_f64();
        m.write(&cli.out)?;
    }
    Ok(outcome)
}

/// Trajectory CSV: one row per grid time and particle.
pub fn trajectories_csv(ens: &Ensemble) -> String {
    let mut s = String::from("t,particle");
    for c in 1..=ens.dim() {
        write!(s, ",x_{c}").unwrap();
    }
    s.push('\n');
    for k in 0..ens.times() {
        let t = ens.time(k);
        for i in 0..ens.particles() {
            write!(s, "{t},{i}").unwrap();
            for x in ens.state(i, k) {
                write!(s, ",{x}").unwrap();
            }
            s.push('\n');
        }
    }
    s
}

fn simulate(path: &Path, seed: Option<u64>, out: &Path) -> Result<Outcome, CliError> {
    let mut cfg: SimulateConfig = load_config(path)?;
    let p = &mut cfg.simulate;
    if let Some(s) = seed {
        p.seed = s;
    }
    let n_max = *p.n_max.get_or_insert(p.level);
    if p.iterations == 0 {
        return Err(CliError::Config("simulate.iterations must be at least 1".into()));
    }
    let model = cfg.model.build().map_err(|e| CliError::Config(e.to_string()))?;
    let store = make_brownian(p.seed, p.particles, model.m(), n_max).map_err(|e| CliError::Config(e.to_string()))?;
    let ens = match p.method {
        Method::Euler => euler_simulate(&model, p.level, p.particles, &store),
        Method::Picard => picard_simulate(&model, p.level, p.particles, &store, p.iterations),
    }
    .map_err(|e| numeric("simulate", e))?;
    prepare_out(out)?;
    let mut m = RunManifest::new("simulate", echo(&cfg)?, Some(cfg.simulate.seed));
    m.notes.push(format!("n = {}, N = {}", cfg.simulate.level, cfg.simulate.particles));
    m.emit(out, "trajectories.csv", trajectories_csv(&ens).as_bytes())?;
    let stdout = format!("wrote {} rows to {}\n", ens.times() * ens.particles(), out.join("trajectories.csv").display());
    Ok(Outcome { stdout, manifest: Some(m) })
}

pub fn report_csv(report: &StudyReport) -> String {
    let mut s = String::from("size,error,stderr\n");
    for r in &report.rows {
        writeln!(s, "{},{},{}", r.size, r.error, r.stderr).unwrap();
    }
    s
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "none".into(), |x| x.to_string())
}

fn study(path: &Path, seed: Option<u64>, out: &Path, chaos: bool) -> Result<Outcome, CliError> {
    let mut cfg: StudyConfig = load_config(path)?;
    if let Some(s) = seed {
        cfg.study.seed = s;
    }
    let report = if chaos { chaos_study(&cfg) } else { strong_rate_study(&cfg) }.map_err(|e| match e {
        volterra_core::experiments::StudyError::Config(msg) => CliError::Config(msg),
        other => numeric("study", other),
    })?;
    prepare_out(out)?;
    let name = if chaos { "converge-chaos" } else { "converge-time" };
    let mut m = RunManifest::new(name, echo(&cfg)?, Some(cfg.study.seed));
    m.emit(out, "report.csv", report_csv(&report).as_bytes())?;
    m.notes.push(format!("fitted_slope: {}", opt(report.fitted_slope)));
    m.notes.push(format!("fitted_intercept: {}", opt(report.fitted_intercept)));
    m.notes.push(format!("theory_slope: {}", opt(report.theory_slope)));
    for f in &report.flags {
        m.notes.push(format!("flag: {f}"));
    }
    for r in &report.manifest.replications {
        m.notes.push(format!(
            "replication {}: store_seed={} store_n_max={} store_particles={} runs=[{}]{}",
            r.index,
            r.store_seed,
            r.store_n_max,
            r.store_particles,
            r.runs.join("; "),
            r.failure.as_deref().map(|f| format!(" failure={f}")).unwrap_or_default()
        ));
    }
    let stdout = format!(
        "{}fitted_slope {}\ntheory_slope {}\n",
        report_csv(&report),
        opt(report.fitted_slope),
        opt(report.theory_slope)
    );
    Ok(Outcome { stdout, manifest: Some(m) })
}

/// Both exponent variants for one `(p, d, q)`, default variant first.
pub fn chaos_rate_table(p: f64, d: u32, q: f64) -> Result<String, CliError> {
    let mut s = String::new();
    for (label, variant) in [("concentration", ExponentVariant::Concentration), ("as_printed", ExponentVariant::AsPrinted)] {
        let r = chaos_rate_exponent(p, d, q, variant).map_err(|e| CliError::Config(e.to_string()))?;
        if s.is_empty() {
            writeln!(s, "case {} (p={p}, d={d}, q={q})", r.case).unwrap();
            if r.excluded_q {
                writeln!(s, "note: q lies on the excluded value for this case; the bound does not cover it").unwrap();
            }
            s.push_str("variant,term_1,term_2,decay,log_modified,non_decaying\n");
        }
        writeln!(s, "{label},{},{},{},{},{}", r.terms[0], r.terms[1], r.decay, r.log_modified, r.non_decaying).unwrap();
    }
    Ok(s)
}

fn resolvent(path: &Path, out: &Path) -> Result<Outcome, CliError> {
    let cfg: ResolventConfig = load_config(path)?;
    let p = &cfg.resolvent;
    let kernel = cfg
        .kernel
        .build()
        .and_then(|k| k.with_horizon(p.horizon))
        .map_err(|e| CliError::Config(e.to_string()))?;
    let grid = TriGrid::dyadic(p.level, p.horizon).map_err(|e| CliError::Config(e.to_string()))?;
    let r = resolvent_sum(&kernel, &grid, p.tol, p.max_terms).map_err(|e| numeric("resolvent", e))?;
    let res = verify_resolvent_identity(&kernel, &r).map_err(|e| numeric("resolvent identity", e))?;
    let mut csv = String::from("t,s,R\n");
    for (t, s, v) in r.table.cells() {
        writeln!(csv, "{t},{s},{v}").unwrap();
    }
    let mut diag = String::new();
    writeln!(diag, "kernel: {}", kernel.describe()).unwrap();
    writeln!(diag, "terms_used: {}", r.terms_used).unwrap();
    let norms: Vec<String> = r.term_norms.iter().map(f64::to_string).collect();
    writeln!(diag, "term_norms: {}", norms.join(",")).unwrap();
    writeln!(diag, "tail_norm: {}", r.tail_norm).unwrap();
    writeln!(diag, "residual_left: {}", res.left).unwrap();
    writeln!(diag, "residual_right: {}", res.right).unwrap();
    prepare_out(out)?;
    let mut m = RunManifest::new("resolvent", echo(&cfg)?, None);
    m.emit(out, "resolvent.csv", csv.as_bytes())?;
    m.emit(out, "diagnostics.txt", diag.as_bytes())?;
    Ok(Outcome { stdout: diag, manifest: Some(m) })
}

fn probe_csv(header: &str, report: &ProbeReport) -> String {
    let mut s = format!("{header}\n");
    for (x, y) in &report.samples {
        writeln!(s, "{x},{y}").unwrap();
    }
    s
}

fn kernel_probe(path: &Path, out: &Path) -> Result<Outcome, CliError> {
    let cfg: ProbeConfig = load_config(path)?;
    let kernel = cfg.kernel.build().map_err(|e| CliError::Config(e.to_string()))?;
    let hoelder = |mode, base_t: f64, lags: &[f64], tol| hoelder_probe_tol(&kernel, mode, base_t, lags, tol);
    let (header, report) = match &cfg.probe {
        ProbeParams::Integrability { beta, grid_times, tol } => {
            ("t,integral", integrability_probe_tol(&kernel, *beta, grid_times, *tol))
        }
        ProbeParams::L1Shift { base_t, lags, tol } => ("lag,modulus", hoelder(HoelderMode::L1Shift, *base_t, lags, *tol)),
        ProbeParams::L2Shift { base_t, lags, tol } => ("lag,modulus", hoelder(HoelderMode::L2Shift, *base_t, lags, *tol)),
        ProbeParams::L2Tail { base_t, lags, tol } => ("lag,modulus", hoelder(HoelderMode::L2Tail, *base_t, lags, *tol)),
    };
    let report = report.map_err(|e| CliError::Config(e.to_string()))?;
    prepare_out(out)?;
    let mut m = RunManifest::new("kernel-probe", echo(&cfg)?, None);
    m.emit(out, "probe.csv", probe_csv(header, &report).as_bytes())?;
    let stdout = format!(
        "exponent_estimate {}\nconstant_estimate {}\nr_squared {}\n",
        opt(report.exponent_estimate),
        report.constant_estimate,
        opt(report.r_squared)
    );
    m.notes.push(stdout.trim_end().replace('\n', ", "));
    Ok(Outcome { stdout, manifest: Some(m) })
}

/// Reads a point cloud: one row per point, one column per coordinate.
/// A first row that does not parse as numbers is taken as a header.
pub fn read_points(path: &Path) -> Result<EmpiricalMeasure, CliError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let mut rows = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        let parsed: Result<Vec<f64>, _> = record.iter().map(str::parse::<f64>).collect();
        match parsed {
            Ok(row) => rows.push(row),
            Err(_) if line == 0 => continue,
            Err(e) => return Err(CliError::Input(format!("{} row {}: {e}", path.display(), line + 1))),
        }
    }
    EmpiricalMeasure::new(&rows).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}
