//! Python bindings for kernels, models, simulation and the studies.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use volterra_core::config::KernelConfig;
use volterra_core::experiments::{self, ExponentVariant, StudyConfig, StudyReport};
use volterra_core::kernel::{self as core_kernel, HoelderMode};
use volterra_core::measure::{self, EmpiricalMeasure};
use volterra_core::model::{self as core_model, CoefficientMap, InitialCondition};
use volterra_core::resolvent::{resolvent_sum, verify_resolvent_identity, TriGrid};
use volterra_core::rng::make_brownian;
use volterra_core::scheme;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn runtime_err(e: impl std::fmt::Display) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

#[pyclass(name = "Kernel", module = "volterra", frozen, skip_from_py_object)]
#[derive(Clone)]
pub struct PyKernel {
    inner: core_kernel::Kernel,
}

#[pymethods]
impl PyKernel {
    #[staticmethod]
    fn constant(c: f64) -> PyResult<Self> {
        Self::build(KernelConfig::Constant { c })
    }

    #[staticmethod]
    fn power(alpha: f64) -> PyResult<Self> {
        Self::build(KernelConfig::Power { alpha })
    }

    #[staticmethod]
    fn exp_conv(lam: f64, rho: f64) -> PyResult<Self> {
        Self::build(KernelConfig::ExpConv { lambda: lam, rho })
    }

    #[staticmethod]
    #[pyo3(signature = (hurst, quad_tol = 1e-10))]
    fn fbm(hurst: f64, quad_tol: f64) -> PyResult<Self> {
        Self::build(KernelConfig::Fbm { hurst, quad_tol })
    }

    fn __call__(&self, t: f64, s: f64) -> PyResult<f64> {
        self.inner.try_eval(t, s).map_err(value_err)
    }

    /// Fitted exponent of a Hölder modulus over `lags` at `base_t`.
    fn hoelder_exponent(&self, mode: &str, base_t: f64, lags: Vec<f64>) -> PyResult<Option<f64>> {
        let mode: HoelderMode = mode.parse().map_err(PyValueError::new_err)?;
        let r = core_kernel::hoelder_probe(&self.inner, mode, base_t, &lags).map_err(value_err)?;
        Ok(r.exponent_estimate)
    }

    /// Resolvent on the level-`level` dyadic grid: `(nodes, rows, terms_used, residuals)`.
    #[pyo3(signature = (level, horizon = 1.0, tol = 1e-12, max_terms = 200))]
    fn resolvent(&self, level: u32, horizon: f64, tol: f64, max_terms: usize) -> PyResult<ResolventOut> {
        let k = self.inner.clone().with_horizon(horizon).map_err(value_err)?;
        let grid = TriGrid::dyadic(level, horizon).map_err(value_err)?;
        let r = resolvent_sum(&k, &grid, tol, max_terms).map_err(runtime_err)?;
        let res = verify_resolvent_identity(&k, &r).map_err(runtime_err)?;
        let nodes = grid.nodes().to_vec();
        let rows = (1..nodes.len()).map(|i| (0..i).map(|j| r.get(i, j)).collect()).collect();
        Ok((nodes, rows, r.terms_used, (res.left, res.right)))
    }

    fn __repr__(&self) -> String {
        format!("Kernel({})", self.inner.describe())
    }
}

type ResolventOut = (Vec<f64>, Vec<Vec<f64>>, usize, (f64, f64));

impl PyKernel {
    fn build(cfg: KernelConfig) -> PyResult<Self> {
        Ok(Self { inner: cfg.build().map_err(value_err)? })
    }
}

#[pyclass(name = "Model", module = "volterra", frozen)]
pub struct PyModel {
    inner: core_model::Model,
}

fn initial(x0: Vec<f64>, std: f64) -> PyResult<InitialCondition> {
    if std > 0.0 {
        InitialCondition::gaussian(x0, std)
    } else {
        InitialCondition::deterministic(x0)
    }
    .map_err(value_err)
}

#[pymethods]
impl PyModel {
    #[staticmethod]
    #[pyo3(signature = (a, sigma0, x0, x0_std = 0.0))]
    fn mean_field_ou(a: f64, sigma0: f64, x0: f64, x0_std: f64) -> PyResult<Self> {
        let inner = core_model::mean_field_ou(a, sigma0, initial(vec![x0], x0_std)?).map_err(value_err)?;
        Ok(Self { inner })
    }

    /// One-dimensional `b = kb (a x + b mean + c)`, `σ = ks (a x + b mean + c)`.
    #[staticmethod]
    #[pyo3(signature = (kernel_b, kernel_s, drift, diffusion, x0, x0_std = 0.0))]
    fn separable(
        kernel_b: &PyKernel,
        kernel_s: &PyKernel,
        drift: (f64, f64, f64),
        diffusion: (f64, f64, f64),
        x0: f64,
        x0_std: f64,
    ) -> PyResult<Self> {
        let f = CoefficientMap::affine(drift.0, drift.1, drift.2).map_err(value_err)?;
        let g = CoefficientMap::affine(diffusion.0, diffusion.1, diffusion.2).map_err(value_err)?;
        let inner = core_model::separable_model(kernel_b.inner.clone(), kernel_s.inner.clone(), f, g, initial(vec![x0], x0_std)?)
            .map_err(value_err)?;
        Ok(Self { inner })
    }

    /// Euler ensemble as `[time][particle][component]`.
    #[pyo3(signature = (level, particles, seed, n_max = None, picard_iterations = None))]
    fn simulate(
        &self,
        level: u32,
        particles: usize,
        seed: u64,
        n_max: Option<u32>,
        picard_iterations: Option<usize>,
    ) -> PyResult<(Vec<f64>, Vec<Vec<Vec<f64>>>)> {
        let store = make_brownian(seed, particles, self.inner.m(), n_max.unwrap_or(level)).map_err(value_err)?;
        let ens = match picard_iterations {
            Some(it) => scheme::picard_simulate(&self.inner, level, particles, &store, it),
            None => scheme::euler_simulate(&self.inner, level, particles, &store),
        }
        .map_err(runtime_err)?;
        let times = (0..ens.times()).map(|k| ens.time(k)).collect();
        let states = (0..ens.times())
            .map(|k| (0..ens.particles()).map(|i| ens.state(i, k).to_vec()).collect())
            .collect();
        Ok((times, states))
    }

    #[getter]
    fn d(&self) -> usize {
        self.inner.d()
    }

    #[getter]
    fn m(&self) -> usize {
        self.inner.m()
    }
}

/// Exact W2 distance between two equal-size point clouds.
#[pyfunction]
fn w2(a: Vec<Vec<f64>>, b: Vec<Vec<f64>>) -> PyResult<f64> {
    let mu = EmpiricalMeasure::new(&a).map_err(value_err)?;
    let nu = EmpiricalMeasure::new(&b).map_err(value_err)?;
    measure::w2(&mu, &nu).map_err(value_err)
}

/// Mean and variance of the limiting OU law at time `t`.
#[pyfunction]
fn ou_oracle(a: f64, sigma0: f64, m0: f64, v0: f64, t: f64) -> PyResult<(f64, f64)> {
    core_model::ou_oracle(a, sigma0, m0, v0, t).map_err(value_err)
}

/// `(case, term exponents, decay)` of the chaos bound.
#[pyfunction]
#[pyo3(signature = (p, d, q, variant = "concentration"))]
fn chaos_rate_exponent(p: f64, d: u32, q: f64, variant: &str) -> PyResult<(String, (f64, f64), f64)> {
    let variant: ExponentVariant = variant.parse().map_err(PyValueError::new_err)?;
    let r = experiments::chaos_rate_exponent(p, d, q, variant).map_err(value_err)?;
    Ok((r.case.to_string(), (-r.terms[0].decay, -r.terms[1].decay), r.decay))
}

type StudyOut = (Vec<(f64, f64, f64)>, Option<f64>, Option<f64>);

fn study_out(r: StudyReport) -> StudyOut {
    (r.rows.iter().map(|row| (row.size, row.error, row.stderr)).collect(), r.fitted_slope, r.theory_slope)
}

fn parse_study(config: &str) -> PyResult<StudyConfig> {
    toml::from_str(config).map_err(value_err)
}

/// Strong-rate study from a TOML config: `(rows, fitted_slope, theory_slope)`.
#[pyfunction]
fn strong_rate_study(config: &str) -> PyResult<StudyOut> {
    experiments::strong_rate_study(&parse_study(config)?).map(study_out).map_err(runtime_err)
}

/// Chaos study from a TOML config: `(rows, fitted_slope, theory_slope)`.
#[pyfunction]
fn chaos_study(config: &str) -> PyResult<StudyOut> {
    experiments::chaos_study(&parse_study(config)?).map(study_out).map_err(runtime_err)
}

#[pymodule]
fn volterra(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyKernel>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(w2, m)?)?;
    m.add_function(wrap_pyfunction!(ou_oracle, m)?)?;
    m.add_function(wrap_pyfunction!(chaos_rate_exponent, m)?)?;
    m.add_function(wrap_pyfunction!(strong_rate_study, m)?)?;
    m.add_function(wrap_pyfunction!(chaos_study, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
