//! Convergence studies: strong self-convergence in the time step,
//! propagation of chaos in the particle number, moment boundedness across
//! levels, plus log-log rate fitting and the theoretical chaos exponents.

use crate::config::ModelConfig;
use crate::measure::{norm_pow, w2, EmpiricalMeasure};
use crate::model::{ou_oracle, separable_model, CoefficientMap, Model, ModelError};
use crate::rng::{derive_seed, make_brownian, BrownianError, BrownianStore};
use crate::scheme::{coupled_difference, euler_simulate, Ensemble, SchemeError};
use crate::stats::{mean_stderr, ols, pairwise_sum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StudyError {
    #[error("invalid study configuration: {0}")]
    Config(String),
    #[error("rate fit: {0}")]
    Fit(String),
    #[error("every replication failed; first failure: {0}")]
    AllReplicationsFailed(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Scheme(#[from] SchemeError),
    #[error(transparent)]
    Brownian(#[from] BrownianError),
}

/// Log-log least squares with the exclusions that were needed to make it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub slope: Option<f64>,
    pub intercept: Option<f64>,
    pub r_squared: Option<f64>,
    /// Indices whose error was not strictly positive.
    pub excluded: Vec<usize>,
    /// Every error was exactly zero; no fit was attempted.
    pub exact_scheme: bool,
}

/// Fits `ln error = intercept + slope ln size`.
pub fn fit_rate(sizes: &[f64], errors: &[f64]) -> Result<RateFit, StudyError> {
    if sizes.len() != errors.len() {
        return Err(StudyError::Fit(format!("{} sizes but {} errors", sizes.len(), errors.len())));
    }
    if let Some(s) = sizes.iter().find(|s| !(**s > 0.0 && s.is_finite())) {
        return Err(StudyError::Fit(format!("sizes must be positive, got {s}")));
    }
    if errors.iter().any(|e| e.is_nan()) {
        return Err(StudyError::Fit("error values contain NaN".into()));
    }
    if !errors.is_empty() && errors.iter().all(|e| *e == 0.0) {
        return Ok(RateFit { slope: None, intercept: None, r_squared: None, excluded: vec![], exact_scheme: true });
    }
    let excluded: Vec<usize> = (0..errors.len()).filter(|&i| !(errors[i] > 0.0)).collect();
    let pts: Vec<(f64, f64)> = sizes
        .iter()
        .zip(errors)
        .filter(|(_, e)| **e > 0.0)
        .map(|(s, e)| (s.ln(), e.ln()))
        .collect();
    let fit = ols(&pts).ok_or_else(|| StudyError::Fit("need two distinct sizes with positive errors".into()))?;
    Ok(RateFit {
        slope: Some(fit.slope),
        intercept: Some(fit.intercept),
        r_squared: Some(fit.r_squared),
        excluded,
        exact_scheme: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ExponentVariant {
    /// The second exponent exactly as displayed, `-(p - q)/q`.
    AsPrinted,
    /// The decaying moment-tail form `-(q - p)/q`.
    #[default]
    Concentration,
}

impl FromStr for ExponentVariant {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "as_printed" => Ok(Self::AsPrinted),
            "concentration" => Ok(Self::Concentration),
            other => Err(format!("unknown exponent variant `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ChaosCase {
    /// `p > d/2`
    Above,
    /// `p = d/2`
    Critical,
    /// `p < d/2`
    Below,
}

impl fmt::Display for ChaosCase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Above => "p>d/2",
            Self::Critical => "p=d/2",
            Self::Below => "p<d/2",
        })
    }
}

/// One term `N^{-decay}`, possibly times `log(1 + N)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateTerm {
    pub decay: f64,
    pub log_factor: bool,
}

impl fmt::Display for RateTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "N^{}", -self.decay)?;
        if self.log_factor {
            f.write_str(" log(1+N)")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChaosRate {
    pub case: ChaosCase,
    pub variant: ExponentVariant,
    pub terms: [RateTerm; 2],
    /// The slowest of the two decay exponents; negative means the bound grows.
    pub decay: f64,
    pub log_modified: bool,
    pub non_decaying: bool,
    /// `q` sits on the case's excluded value (`2p`, or `d/(d-p)` below
    /// `d/2`); the formula is still evaluated there but the bound it
    /// comes from does not cover this `q`.
    pub excluded_q: bool,
}

fn near(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1.0)
}

/// Decay exponents of the two-term chaos bound for the `p`-th moment in
/// dimension `d` with an initial law having `q` finite moments.
pub fn chaos_rate_exponent(p: f64, d: u32, q: f64, variant: ExponentVariant) -> Result<ChaosRate, StudyError> {
    if !(p >= 1.0 && p.is_finite()) {
        return Err(StudyError::Config(format!("p must be at least 1, got {p}")));
    }
    if d == 0 {
        return Err(StudyError::Config("d must be at least 1".into()));
    }
    if !(q > p && q.is_finite()) {
        return Err(StudyError::Config(format!("q must exceed p = {p}, got {q}")));
    }
    let half_d = d as f64 / 2.0;
    let case = if near(p, half_d) {
        ChaosCase::Critical
    } else if p > half_d {
        ChaosCase::Above
    } else {
        ChaosCase::Below
    };
    let first = match case {
        ChaosCase::Above => RateTerm { decay: 0.5, log_factor: false },
        ChaosCase::Critical => RateTerm { decay: 0.5, log_factor: true },
        ChaosCase::Below => RateTerm { decay: p / d as f64, log_factor: false },
    };
    let excluded_q = match case {
        ChaosCase::Above | ChaosCase::Critical => near(q, 2.0 * p),
        ChaosCase::Below => near(q, d as f64 / (d as f64 - p)),
    };
    let second_decay = match variant {
        ExponentVariant::AsPrinted => (p - q) / q,
        ExponentVariant::Concentration => (q - p) / q,
    };
    let second = RateTerm { decay: second_decay, log_factor: false };
    let decay = first.decay.min(second.decay);
    Ok(ChaosRate {
        case,
        variant,
        terms: [first, second],
        decay,
        log_modified: first.log_factor,
        non_decaying: decay <= 0.0,
        excluded_q,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reference {
    /// Time study: the finest level of the shared store.
    FinestLevel,
    /// Chaos study: the analytic mean-field Ornstein–Uhlenbeck law.
    OuOracle,
    /// Chaos study: one interacting run with `n_ref` particles.
    LargeN,
}

fn default_p() -> f64 {
    2.0
}
fn default_particles() -> usize {
    256
}
fn default_n_max() -> u32 {
    10
}
fn default_replications() -> usize {
    16
}

/// Numeric parameters of a study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyParams {
    pub seed: u64,
    #[serde(default = "default_p")]
    pub p: f64,
    /// Time study: coarse levels.
    #[serde(default)]
    pub levels: Vec<u32>,
    /// Chaos study: particle numbers.
    #[serde(default)]
    pub ns: Vec<usize>,
    /// Time study: particles per run.
    #[serde(default = "default_particles")]
    pub particles: usize,
    /// Finest level of the Brownian store (the reference level of the time
    /// study, the simulation level of the chaos study).
    #[serde(default = "default_n_max")]
    pub n_max: u32,
    pub reference: Reference,
    /// Particles in the large-N reference run.
    #[serde(default)]
    pub n_ref: Option<usize>,
    #[serde(default = "default_replications")]
    pub replications: usize,
}

/// A study: the model and its parameters. Serializes as a file with
/// `[model]` and `[study]` sections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    pub model: ModelConfig,
    pub study: StudyParams,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    pub size: f64,
    pub error: f64,
    pub stderr: f64,
}

/// One replication: which store drove it and which levels or sizes shared it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub index: usize,
    pub store_seed: u64,
    pub store_n_max: u32,
    pub store_particles: usize,
    pub runs: Vec<String>,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyManifest {
    pub study: String,
    pub seed: u64,
    pub config: String,
    pub replications: Vec<ReplicationRecord>,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub rows: Vec<StudyRow>,
    pub fitted_slope: Option<f64>,
    pub fitted_intercept: Option<f64>,
    pub theory_slope: Option<f64>,
    /// Max/min ratio of the row values (moment study).
    pub ratio: Option<f64>,
    pub flags: Vec<String>,
    pub manifest: StudyManifest,
}

impl StudyConfig {
    pub fn validate(&self) -> Result<(), StudyError> {
        let s = &self.study;
        if !(s.p >= 2.0 && s.p.is_finite()) {
            return Err(StudyError::Config(format!("p must be at least 2, got {}", s.p)));
        }
        if s.replications == 0 {
            return Err(StudyError::Config("replications must be at least 1".into()));
        }
        if !s.levels.windows(2).all(|w| w[0] < w[1]) {
            return Err(StudyError::Config("levels must be strictly increasing".into()));
        }
        if !s.ns.windows(2).all(|w| w[0] < w[1]) || s.ns.contains(&0) {
            return Err(StudyError::Config("ns must be positive and strictly increasing".into()));
        }
        Ok(())
    }

    fn echo(&self) -> String {
        toml::to_string(self).unwrap_or_default()
    }
}

struct Aggregate {
    rows: Vec<StudyRow>,
    flags: Vec<String>,
    records: Vec<ReplicationRecord>,
}

/// Means and standard errors over the replications that succeeded.
fn aggregate(sizes: &[f64], outcomes: Vec<(ReplicationRecord, Option<Vec<f64>>)>) -> Result<Aggregate, StudyError> {
    let mut flags = Vec::new();
    let mut ok = Vec::new();
    let mut records = Vec::new();
    for (rec, errs) in outcomes {
        match errs {
            Some(e) => ok.push(e),
            None => flags.push(format!(
                "replication {} excluded: {}",
                rec.index,
                rec.failure.clone().unwrap_or_default()
            )),
        }
        records.push(rec);
    }
    if ok.is_empty() {
        let first = records.iter().find_map(|r| r.failure.clone()).unwrap_or_default();
        return Err(StudyError::AllReplicationsFailed(first));
    }
    let rows = sizes
        .iter()
        .enumerate()
        .map(|(col, &size)| {
            let xs: Vec<f64> = ok.iter().map(|e| e[col]).collect();
            let (error, stderr) = mean_stderr(&xs);
            StudyRow { size, error, stderr }
        })
        .collect();
    Ok(Aggregate { rows, flags, records })
}

fn finish(
    name: &str,
    cfg: &StudyConfig,
    agg: Aggregate,
    theory_slope: Option<f64>,
    started: Instant,
) -> Result<StudyReport, StudyError> {
    let sizes: Vec<f64> = agg.rows.iter().map(|r| r.size).collect();
    let errors: Vec<f64> = agg.rows.iter().map(|r| r.error).collect();
    let fit = fit_rate(&sizes, &errors)?;
    let mut flags = agg.flags;
    if fit.exact_scheme {
        flags.push("exact_scheme: every error is zero".into());
    }
    for i in &fit.excluded {
        flags.push(format!("row {i} excluded from the fit: nonpositive error"));
    }
    Ok(StudyReport {
        rows: agg.rows,
        fitted_slope: fit.slope,
        fitted_intercept: fit.intercept,
        theory_slope,
        ratio: None,
        flags,
        manifest: StudyManifest {
            study: name.into(),
            seed: cfg.study.seed,
            config: cfg.echo(),
            replications: agg.records,
            wall_time_s: started.elapsed().as_secs_f64(),
        },
    })
}

fn record(index: usize, store: &BrownianStore, runs: Vec<String>, failure: Option<String>) -> ReplicationRecord {
    ReplicationRecord {
        index,
        store_seed: store.master_seed(),
        store_n_max: store.n_max(),
        store_particles: store.particles(),
        runs,
        failure,
    }
}

/// Coupled error of each level against the finest level, one shared store
/// per replication; rows are keyed by the step `2^-n`, so the fitted slope
/// estimates the strong order times `p`.
pub fn strong_rate_study(cfg: &StudyConfig) -> Result<StudyReport, StudyError> {
    cfg.validate()?;
    let started = Instant::now();
    let model = cfg.model.build()?;
    let s = &cfg.study;
    if s.reference != Reference::FinestLevel {
        return Err(StudyError::Config("the time study compares against the finest level".into()));
    }
    if s.levels.is_empty() || *s.levels.last().unwrap() >= s.n_max {
        return Err(StudyError::Config(format!("levels must be nonempty and below n_max = {}", s.n_max)));
    }
    let outcomes: Vec<_> = (0..s.replications)
        .into_par_iter()
        .map(|r| -> Result<_, StudyError> {
            let store = make_brownian(derive_seed(s.seed, r as u64), s.particles, model.m(), s.n_max)?;
            let mut runs = vec![format!("level {}", s.n_max)];
            runs.extend(s.levels.iter().map(|n| format!("level {n}")));
            let errs = (|| -> Result<Vec<f64>, SchemeError> {
                let fine = euler_simulate(&model, s.n_max, s.particles, &store)?;
                s.levels
                    .iter()
                    .map(|&n| coupled_difference(&euler_simulate(&model, n, s.particles, &store)?, &fine, s.p))
                    .collect()
            })();
            Ok(match errs {
                Ok(e) => (record(r, &store, runs, None), Some(e)),
                Err(e) => (record(r, &store, runs, Some(e.to_string())), None),
            })
        })
        .collect::<Result<_, _>>()?;
    let sizes: Vec<f64> = s.levels.iter().map(|&n| (-(n as f64)).exp2()).collect();
    let agg = aggregate(&sizes, outcomes)?;
    finish("converge-time", cfg, agg, None, started)
}

/// The model driven by the exact limit law instead of the particle mean.
fn ou_limit_model(model: &Model) -> Result<Model, StudyError> {
    let ou = model
        .ou_params()
        .ok_or_else(|| StudyError::Config("oracle mode needs a mean-field Ornstein-Uhlenbeck model".into()))?;
    let (m0, v0) = model.x0().moments();
    // The limit mean does not move, so the frozen drift is a (m0 - x).
    let (mean, _) = ou_oracle(ou.a, ou.sigma0, m0, v0, 1.0)?;
    let one = crate::kernel::constant_kernel(1.0).map_err(ModelError::from)?;
    Ok(separable_model(
        one.clone(),
        one,
        CoefficientMap::affine(-ou.a, 0.0, ou.a * mean)?,
        CoefficientMap::constant(vec![ou.sigma0])?,
        model.x0().clone(),
    )?)
}

/// `max_k (1/N) Σ_i |X^N_i(t_k) - Y_i(t_k)|^p` over the first `N` particles
/// of the limit ensemble.
fn oracle_gap(system: &Ensemble, limit: &Ensemble, p: f64) -> f64 {
    let n = system.particles();
    let mut worst = 0.0f64;
    for k in 0..system.times() {
        let terms: Vec<f64> = (0..n)
            .map(|i| {
                let diff: Vec<f64> = system.state(i, k).iter().zip(limit.state(i, k)).map(|(a, b)| a - b).collect();
                norm_pow(&diff, p)
            })
            .collect();
        worst = worst.max(pairwise_sum(&terms) / n as f64);
    }
    worst
}

/// `μ` with every atom repeated `times` times; the measure is unchanged.
fn replicate(mu: &EmpiricalMeasure, times: usize) -> EmpiricalMeasure {
    let mut flat = Vec::with_capacity(mu.coords().len() * times);
    for _ in 0..times {
        flat.extend_from_slice(mu.coords());
    }
    EmpiricalMeasure::from_flat(mu.dim(), flat).expect("replicated measure is valid")
}

fn reference_gap(system: &Ensemble, reference: &Ensemble, p: f64) -> Result<f64, StudyError> {
    let times = reference.particles() / system.particles();
    let mut worst = 0.0f64;
    for k in 0..system.times() {
        let mu = replicate(system.measure(k), times);
        let d = w2(&mu, reference.measure(k)).map_err(|e| StudyError::Config(e.to_string()))?;
        worst = worst.max(d.powf(p));
    }
    Ok(worst)
}

/// Distance between the `N`-particle system and its mean-field limit for
/// each `N`; rows are keyed by `N`.
pub fn chaos_study(cfg: &StudyConfig) -> Result<StudyReport, StudyError> {
    cfg.validate()?;
    let started = Instant::now();
    let model = cfg.model.build()?;
    let s = &cfg.study;
    let n_max_particles = *s.ns.last().ok_or_else(|| StudyError::Config("ns must not be empty".into()))?;
    let (limit, store_particles) = match s.reference {
        Reference::OuOracle => (Some(ou_limit_model(&model)?), n_max_particles),
        Reference::LargeN => {
            let n_ref = s.n_ref.ok_or_else(|| StudyError::Config("large_n reference needs n_ref".into()))?;
            if let Some(n) = s.ns.iter().find(|n| n_ref % **n != 0) {
                return Err(StudyError::Config(format!("n_ref = {n_ref} must be a multiple of every N (got {n})")));
            }
            (None, n_ref.max(n_max_particles))
        }
        Reference::FinestLevel => {
            return Err(StudyError::Config("the chaos study needs an ou_oracle or large_n reference".into()))
        }
    };
    let outcomes: Vec<_> = (0..s.replications)
        .into_par_iter()
        .map(|r| -> Result<_, StudyError> {
            let store = make_brownian(derive_seed(s.seed, r as u64), store_particles, model.m(), s.n_max)?;
            let mut runs: Vec<String> = s.ns.iter().map(|n| format!("N = {n}")).collect();
            let errs = (|| -> Result<Vec<f64>, StudyError> {
                match &limit {
                    Some(lm) => {
                        runs.push(format!("limit law, N = {n_max_particles}"));
                        let proxy = euler_simulate(lm, s.n_max, n_max_particles, &store)?;
                        s.ns.iter()
                            .map(|&n| Ok(oracle_gap(&euler_simulate(&model, s.n_max, n, &store)?, &proxy, s.p)))
                            .collect()
                    }
                    None => {
                        let n_ref = s.n_ref.unwrap();
                        runs.push(format!("reference, N = {n_ref}"));
                        let reference = euler_simulate(&model, s.n_max, n_ref, &store)?;
                        s.ns.iter()
                            .map(|&n| reference_gap(&euler_simulate(&model, s.n_max, n, &store)?, &reference, s.p))
                            .collect()
                    }
                }
            })();
            Ok(match errs {
                Ok(e) => (record(r, &store, runs, None), Some(e)),
                Err(e) => (record(r, &store, runs, Some(e.to_string())), None),
            })
        })
        .collect::<Result<_, _>>()?;
    let sizes: Vec<f64> = s.ns.iter().map(|&n| n as f64).collect();
    let agg = aggregate(&sizes, outcomes)?;
    let d = model.d() as f64;
    // First term of the bound; the second depends on the initial law's moments.
    let theory = if s.p >= d / 2.0 { -0.5 } else { -s.p / d };
    finish("converge-chaos", cfg, agg, Some(theory), started)
}

/// Supremum over grid times of the ensemble `p`-th moment on each level,
/// with the max/min ratio across levels as the boundedness witness.
pub fn moment_study(
    model: &Model,
    levels: &[u32],
    particles: usize,
    p: f64,
    store: &BrownianStore,
) -> Result<StudyReport, StudyError> {
    let started = Instant::now();
    if !(p >= 2.0 && p.is_finite()) {
        return Err(StudyError::Config(format!("p must be at least 2, got {p}")));
    }
    if levels.is_empty() || !levels.windows(2).all(|w| w[0] < w[1]) {
        return Err(StudyError::Config("levels must be nonempty and strictly increasing".into()));
    }
    let mut rows = Vec::with_capacity(levels.len());
    for &n in levels {
        let e = euler_simulate(model, n, particles, store)?;
        let mut best = StudyRow { size: (-(n as f64)).exp2(), error: f64::NEG_INFINITY, stderr: 0.0 };
        for mu in e.measures() {
            let terms: Vec<f64> = mu.points().map(|x| norm_pow(x, p)).collect();
            let (mean, se) = mean_stderr(&terms);
            if mean > best.error {
                best.error = mean;
                best.stderr = se;
            }
        }
        rows.push(best);
    }
    let hi = rows.iter().map(|r| r.error).fold(f64::NEG_INFINITY, f64::max);
    let lo = rows.iter().map(|r| r.error).fold(f64::INFINITY, f64::min);
    let ratio = if hi == lo { 1.0 } else { hi / lo };
    Ok(StudyReport {
        rows,
        fitted_slope: None,
        fitted_intercept: None,
        theory_slope: None,
        ratio: Some(ratio),
        flags: vec![],
        manifest: StudyManifest {
            study: "moments".into(),
            seed: store.master_seed(),
            config: format!("levels = {levels:?}, particles = {particles}, p = {p}"),
            replications: vec![record(0, store, levels.iter().map(|n| format!("level {n}")).collect(), None)],
            wall_time_s: started.elapsed().as_secs_f64(),
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synthetic_fits() {
        let sizes: Vec<f64> = (2..=6).map(|n| (-(n as f64)).exp2()).collect();
        let errs: Vec<f64> = sizes.iter().map(|h| 3.0 * h).collect();
        assert!((fit_rate(&sizes, &errs).unwrap().slope.unwrap() - 1.0).abs() < 1e-12);
        let flat = vec![0.7; 5];
        assert!(fit_rate(&sizes, &flat).unwrap().slope.unwrap().abs() < 1e-12);
        let ns = [8.0, 32.0, 128.0, 512.0];
        let e: Vec<f64> = ns.iter().map(|n: &f64| 2.0 / n.sqrt()).collect();
        assert!((fit_rate(&ns, &e).unwrap().slope.unwrap() + 0.5).abs() < 1e-12);
        let zero = fit_rate(&ns, &[0.0; 4]).unwrap();
        assert!(zero.exact_scheme && zero.slope.is_none());
        let partial = fit_rate(&ns, &[1.0, 0.0, 0.25, 0.125]).unwrap();
        assert_eq!(partial.excluded, vec![1]);
        assert!(fit_rate(&ns, &[1.0, 0.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn chaos_exponent_examples() {
        let r = chaos_rate_exponent(2.0, 1, 4.0, ExponentVariant::Concentration).unwrap();
        assert_eq!(r.case, ChaosCase::Above);
        assert_eq!(r.decay, 0.5);
        assert_eq!(r.terms[0].decay, 0.5);
        assert_eq!(r.terms[1].decay, 0.5);
        assert!(!r.non_decaying);

        let r = chaos_rate_exponent(2.0, 4, 5.0, ExponentVariant::Concentration).unwrap();
        assert_eq!(r.case, ChaosCase::Critical);
        assert!(r.log_modified && r.terms[0].log_factor);
        assert!((r.terms[1].decay - 0.6).abs() < 1e-15);

        let r = chaos_rate_exponent(2.0, 1, 4.0, ExponentVariant::AsPrinted).unwrap();
        assert_eq!(r.terms[1].decay, -0.5);
        assert!(r.non_decaying);

        let r = chaos_rate_exponent(1.0, 4, 3.0, ExponentVariant::Concentration).unwrap();
        assert_eq!(r.case, ChaosCase::Below);
        assert_eq!(r.terms[0].decay, 0.25);

        assert!(chaos_rate_exponent(2.0, 1, 4.0, ExponentVariant::Concentration).unwrap().excluded_q);
        assert!(!chaos_rate_exponent(2.0, 1, 5.0, ExponentVariant::Concentration).unwrap().excluded_q);
        assert!(chaos_rate_exponent(1.0, 4, 4.0 / 3.0, ExponentVariant::Concentration).unwrap().excluded_q);
        assert!(!chaos_rate_exponent(1.0, 4, 3.0, ExponentVariant::Concentration).unwrap().excluded_q);
        assert!(chaos_rate_exponent(2.0, 1, 1.5, ExponentVariant::Concentration).is_err());
    }
}
