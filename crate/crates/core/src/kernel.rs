//! Two-time Volterra kernels `K(t, s)` on `{0 <= s <= t <= T}`, the built-in
//! singular families, and numerical probes of their integrability and
//! Hölder regularity.

use std::fmt;
use std::sync::Arc;

use statrs::function::gamma::gamma;
use thiserror::Error;

use crate::quadrature::{integrate, QuadError, Singular};
use crate::stats::ols;

/// Default absolute tolerance for the inner integral of the fBm kernel.
pub const DEFAULT_FBM_QUAD_TOL: f64 = 1e-8;
/// Default absolute tolerance of the probe quadratures.
pub const DEFAULT_PROBE_TOL: f64 = 1e-10;
/// Moduli below this are treated as exact zeros by the exponent fit.
pub const ZERO_MODULUS: f64 = 1e-14;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum KernelError {
    #[error("invalid kernel parameter {name} = {value}: {reason}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },
    #[error("fBm kernel quadrature at (t={t}, s={s}) failed: {source}")]
    Quadrature {
        t: f64,
        s: f64,
        #[source]
        source: QuadError,
    },
    #[error("kernel^{beta} is not integrable on [0, {t}]")]
    NonIntegrable { t: f64, beta: f64 },
    #[error("probe input rejected: {0}")]
    InvalidProbe(String),
}

/// Regularity metadata carried by every kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelMeta {
    pub horizon: f64,
    pub singular_at_diagonal: bool,
    pub singular_at_zero: bool,
    /// Hölder exponent of the time-shift bounds, in `(0, 1]`.
    pub declared_gamma: Option<f64>,
    /// An exponent `> 1` for which `∫_0^t K^a(t, s) ds` stays bounded.
    pub declared_alpha: Option<f64>,
    pub nonnegative: bool,
}

impl KernelMeta {
    fn regular(horizon: f64) -> Self {
        Self {
            horizon,
            singular_at_diagonal: false,
            singular_at_zero: false,
            declared_gamma: None,
            declared_alpha: None,
            nonnegative: true,
        }
    }

    fn validate(&self) -> Result<(), KernelError> {
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return Err(KernelError::InvalidParameter {
                name: "horizon",
                value: self.horizon,
                reason: "must be positive and finite",
            });
        }
        if let Some(g) = self.declared_gamma {
            if !(g > 0.0 && g <= 1.0) {
                return Err(KernelError::InvalidParameter {
                    name: "declared_gamma",
                    value: g,
                    reason: "must lie in (0, 1]",
                });
            }
        }
        if let Some(a) = self.declared_alpha {
            if a.is_nan() || a <= 1.0 {
                return Err(KernelError::InvalidParameter {
                    name: "declared_alpha",
                    value: a,
                    reason: "must exceed 1",
                });
            }
        }
        Ok(())
    }
}

type KernelFn = dyn Fn(f64, f64) -> f64 + Send + Sync;

#[derive(Clone)]
enum Kind {
    Constant(f64),
    Power { alpha: f64 },
    ExpConv { lambda: f64, rho: f64 },
    Fbm(FbmParams),
    Scaled { inner: Arc<Kernel>, factor: f64 },
    Squared(Arc<Kernel>),
    Custom(Arc<KernelFn>),
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct FbmParams {
    hurst: f64,
    c_h: f64,
    quad_tol: f64,
}

/// An immutable two-time kernel. Evaluation is pure and thread-safe.
#[derive(Clone)]
pub struct Kernel {
    kind: Kind,
    meta: KernelMeta,
}

impl fmt::Debug for Kernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Kernel")
            .field("kind", &self.describe())
            .field("meta", &self.meta)
            .finish()
    }
}

/// `K(t, s) = c`.
pub fn constant_kernel(c: f64) -> Result<Kernel, KernelError> {
    if !(c.is_finite() && c >= 0.0) {
        return Err(KernelError::InvalidParameter {
            name: "c",
            value: c,
            reason: "must be finite and nonnegative",
        });
    }
    Ok(Kernel {
        kind: Kind::Constant(c),
        meta: KernelMeta::regular(1.0),
    })
}

/// `K(t, s) = (t - s)^{-alpha}` for `alpha` in `(0, 1/2)`.
pub fn power_kernel(alpha: f64) -> Result<Kernel, KernelError> {
    if !(alpha > 0.0 && alpha < 0.5) {
        return Err(KernelError::InvalidParameter {
            name: "alpha",
            value: alpha,
            reason: "must lie in (0, 1/2)",
        });
    }
    Ok(Kernel {
        kind: Kind::Power { alpha },
        meta: KernelMeta {
            singular_at_diagonal: true,
            declared_gamma: Some(0.5 - alpha),
            declared_alpha: Some(0.5 * (1.0 + 1.0 / alpha)),
            ..KernelMeta::regular(1.0)
        },
    })
}

/// `K(t, s) = exp(-lambda (t - s)) (t - s)^{-rho}` for `rho` in `(0, 1/2)`.
pub fn exp_conv_kernel(lambda: f64, rho: f64) -> Result<Kernel, KernelError> {
    if !lambda.is_finite() {
        return Err(KernelError::InvalidParameter {
            name: "lambda",
            value: lambda,
            reason: "must be finite",
        });
    }
    if !(rho > 0.0 && rho < 0.5) {
        return Err(KernelError::InvalidParameter {
            name: "rho",
            value: rho,
            reason: "must lie in (0, 1/2)",
        });
    }
    Ok(Kernel {
        kind: Kind::ExpConv { lambda, rho },
        meta: KernelMeta {
            singular_at_diagonal: true,
            declared_gamma: Some(0.5 - rho),
            declared_alpha: Some(0.5 * (1.0 + 1.0 / rho)),
            ..KernelMeta::regular(1.0)
        },
    })
}

/// Normalising constant of the fBm kernel,
/// `c_H = (2H Γ(3/2 - H) / (Γ(H + 1/2) Γ(2 - 2H)))^{1/2}`.
pub fn fbm_constant(hurst: f64) -> f64 {
    (2.0 * hurst * gamma(1.5 - hurst) / (gamma(hurst + 0.5) * gamma(2.0 - 2.0 * hurst))).sqrt()
}

/// The square-integrable kernel representing fractional Brownian motion of
/// Hurst index `hurst` as a Wiener integral:
///
/// `K(t,s) = c_H (t-s)^{H-1/2} + c_H (1/2-H) ∫_s^t (θ-s)^{H-3/2} (1 - (s/θ)^{1/2-H}) dθ`.
///
/// The inner integral is evaluated in the shifted variable `u = θ - s` on a
/// mesh graded toward `u = 0`, where `1 - (s/θ)^{1/2-H}` is formed as
/// `-expm1(-(1/2-H) ln1p(u/s))` to avoid cancellation.
pub fn fbm_kernel(hurst: f64, quad_tol: f64) -> Result<Kernel, KernelError> {
    if !(hurst > 0.0 && hurst < 1.0) {
        return Err(KernelError::InvalidParameter {
            name: "H",
            value: hurst,
            reason: "must lie in (0, 1)",
        });
    }
    if !(quad_tol > 0.0 && quad_tol.is_finite()) {
        return Err(KernelError::InvalidParameter {
            name: "quad_tol",
            value: quad_tol,
            reason: "must be positive",
        });
    }
    let dev = (hurst - 0.5).abs();
    let gamma_decl = (2.0 * hurst).min(1.0);
    Ok(Kernel {
        kind: Kind::Fbm(FbmParams {
            hurst,
            c_h: fbm_constant(hurst),
            quad_tol,
        }),
        meta: KernelMeta {
            singular_at_diagonal: hurst < 0.5,
            singular_at_zero: hurst != 0.5,
            declared_gamma: Some(gamma_decl),
            declared_alpha: (dev > 0.0).then(|| 0.5 * (1.0 + 1.0 / dev)),
            ..KernelMeta::regular(1.0)
        },
    })
}

/// Wraps an arbitrary function as a kernel with caller-declared metadata.
pub fn custom_kernel<F>(f: F, meta: KernelMeta) -> Result<Kernel, KernelError>
where
    F: Fn(f64, f64) -> f64 + Send + Sync + 'static,
{
    meta.validate()?;
    Ok(Kernel {
        kind: Kind::Custom(Arc::new(f)),
        meta,
    })
}

impl FbmParams {
    fn try_eval(&self, t: f64, s: f64) -> Result<f64, KernelError> {
        let h = self.hurst;
        let lag = t - s;
        let lead = self.c_h * lag.powf(h - 0.5);
        if h == 0.5 {
            return Ok(lead);
        }
        if s <= 0.0 {
            return Ok(f64::INFINITY);
        }
        let q = 0.5 - h;
        let integrand = |u: f64| {
            if u <= 0.0 {
                return 0.0;
            }
            let factor = -(-(q) * (u / s).ln_1p()).exp_m1();
            u.powf(h - 1.5) * factor
        };
        let scale = (self.c_h * q).abs();
        let tol = if scale > 0.0 { self.quad_tol / scale } else { self.quad_tol };
        let wrap = |source| KernelError::Quadrature { t, s, source };
        // Graded part near u = 0, then the range u > s in log coordinates where
        // the integrand decays like u^{H-3/2} over many decades.
        let split = lag.min(s);
        let near = integrate(integrand, 0.0, split, Singular::Left, 0.5 * tol).map_err(wrap)?;
        let far = if lag > s {
            integrate(
                |v: f64| {
                    let u = v.exp();
                    integrand(u) * u
                },
                s.ln(),
                lag.ln(),
                Singular::None,
                0.5 * tol,
            )
            .map_err(wrap)?
            .value
        } else {
            0.0
        };
        let inner_value = near.value + far;
        Ok(lead + self.c_h * q * inner_value)
    }
}

impl Kernel {
    pub fn meta(&self) -> &KernelMeta {
        &self.meta
    }

    pub fn horizon(&self) -> f64 {
        self.meta.horizon
    }

    /// Same kernel on a different horizon.
    pub fn with_horizon(mut self, horizon: f64) -> Result<Self, KernelError> {
        self.meta.horizon = horizon;
        self.meta.validate()?;
        Ok(self)
    }

    /// Short human-readable name with parameters.
    pub fn describe(&self) -> String {
        match &self.kind {
            Kind::Constant(c) => format!("constant(c={c})"),
            Kind::Power { alpha } => format!("power(alpha={alpha})"),
            Kind::ExpConv { lambda, rho } => format!("exp_conv(lambda={lambda}, rho={rho})"),
            Kind::Fbm(p) => format!("fbm(H={}, quad_tol={})", p.hurst, p.quad_tol),
            Kind::Scaled { inner, factor } => format!("{factor}*{}", inner.describe()),
            Kind::Squared(inner) => format!("({})^2", inner.describe()),
            Kind::Custom(_) => "custom".to_string(),
        }
    }

    /// True when `K(t, s)` depends on `t - s` only.
    pub fn is_convolution(&self) -> bool {
        match &self.kind {
            Kind::Constant(_) | Kind::Power { .. } | Kind::ExpConv { .. } => true,
            Kind::Fbm(p) => p.hurst == 0.5,
            Kind::Scaled { inner, .. } | Kind::Squared(inner) => inner.is_convolution(),
            Kind::Custom(_) => false,
        }
    }

    /// True for the identically zero kernel.
    pub fn is_zero(&self) -> bool {
        match &self.kind {
            Kind::Constant(c) => *c == 0.0,
            Kind::Scaled { inner, factor } => *factor == 0.0 || inner.is_zero(),
            Kind::Squared(inner) => inner.is_zero(),
            _ => false,
        }
    }

    /// Evaluates `K(t, s)`; zero above the diagonal (`s > t`).
    pub fn try_eval(&self, t: f64, s: f64) -> Result<f64, KernelError> {
        if s > t {
            return Ok(0.0);
        }
        Ok(match &self.kind {
            Kind::Constant(c) => *c,
            Kind::Power { alpha } => (t - s).powf(-alpha),
            Kind::ExpConv { lambda, rho } => {
                let lag = t - s;
                (-lambda * lag).exp() * lag.powf(-rho)
            }
            Kind::Fbm(p) => p.try_eval(t, s)?,
            Kind::Scaled { inner, factor } => factor * inner.try_eval(t, s)?,
            Kind::Squared(inner) => {
                let v = inner.try_eval(t, s)?;
                v * v
            }
            Kind::Custom(f) => f(t, s),
        })
    }

    /// Evaluates `K(t, s)`, returning NaN if an internal quadrature fails.
    #[inline]
    pub fn eval(&self, t: f64, s: f64) -> f64 {
        self.try_eval(t, s).unwrap_or(f64::NAN)
    }

    /// `factor * K`.
    pub fn scaled(&self, factor: f64) -> Result<Kernel, KernelError> {
        if !(factor.is_finite()) {
            return Err(KernelError::InvalidParameter {
                name: "factor",
                value: factor,
                reason: "must be finite",
            });
        }
        let mut meta = self.meta.clone();
        meta.nonnegative = self.meta.nonnegative && factor >= 0.0;
        Ok(Kernel {
            kind: Kind::Scaled {
                inner: Arc::new(self.clone()),
                factor,
            },
            meta,
        })
    }

    /// `K^2`.
    pub fn squared(&self) -> Kernel {
        Kernel {
            kind: Kind::Squared(Arc::new(self.clone())),
            meta: KernelMeta {
                declared_gamma: None,
                declared_alpha: self.meta.declared_alpha.map(|a| 0.5 * a).filter(|a| *a > 1.0),
                nonnegative: true,
                ..self.meta.clone()
            },
        }
    }

    /// Endpoints of `∫_a^b K(t, s) ds` that may be singular, given which of
    /// `a = 0` and `b = t` hold.
    fn s_singularity(&self, from_zero: bool, to_diagonal: bool) -> Singular {
        // Every interval is graded at both ends unless the kernel is known to be
        // regular there; grading a regular end costs only a few extra levels.
        let left = from_zero && self.meta.singular_at_zero;
        let right = to_diagonal && self.meta.singular_at_diagonal;
        match (left, right) {
            (true, true) => Singular::Both,
            (true, false) => Singular::Left,
            (false, true) => Singular::Right,
            (false, false) => Singular::Both,
        }
    }
}

/// Numerical witness for an integrability or Hölder bound.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeReport {
    /// Fitted power of the modulus in the lag; `None` when not identifiable.
    pub exponent_estimate: Option<f64>,
    pub constant_estimate: f64,
    /// `(lag, modulus)` pairs, or `(t, integral)` for integrability probes.
    pub samples: Vec<(f64, f64)>,
    pub r_squared: Option<f64>,
}

impl ProbeReport {
    pub fn identifiable(&self) -> bool {
        self.exponent_estimate.is_some()
    }
}

/// Reports `sup_t ∫_0^t K(t, s)^beta ds` over `grid_times`.
pub fn integrability_probe(k: &Kernel, beta: f64, grid_times: &[f64]) -> Result<ProbeReport, KernelError> {
    integrability_probe_tol(k, beta, grid_times, DEFAULT_PROBE_TOL)
}

pub fn integrability_probe_tol(
    k: &Kernel,
    beta: f64,
    grid_times: &[f64],
    tol: f64,
) -> Result<ProbeReport, KernelError> {
    if !(beta >= 1.0 && beta.is_finite()) {
        return Err(KernelError::InvalidProbe(format!("beta must be >= 1, got {beta}")));
    }
    if grid_times.is_empty() {
        return Err(KernelError::InvalidProbe("no grid times".into()));
    }
    let horizon = k.horizon();
    let mut samples = Vec::with_capacity(grid_times.len());
    for &t in grid_times {
        if !(t > 0.0 && t <= horizon * (1.0 + 1e-12)) {
            return Err(KernelError::InvalidProbe(format!("time {t} outside (0, {horizon}]")));
        }
        let out = integrate(
            |s| k.eval(t, s).powf(beta),
            0.0,
            t,
            k.s_singularity(true, true),
            tol,
        )
        .map_err(|e| match e {
            QuadError::Divergent { .. } => KernelError::NonIntegrable { t, beta },
            source => KernelError::Quadrature { t, s: 0.0, source },
        })?;
        samples.push((t, out.value));
    }
    let sup = samples.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    Ok(ProbeReport {
        exponent_estimate: None,
        constant_estimate: sup,
        samples,
        r_squared: None,
    })
}

/// The three time-shift moduli of the Hölder-type kernel assumptions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HoelderMode {
    /// `∫_0^t |K(t', s) - K(t, s)| ds`
    L1Shift,
    /// `∫_0^t |K(t', s) - K(t, s)|^2 ds`
    L2Shift,
    /// `∫_t^{t'} K(t', s)^2 ds`
    L2Tail,
}

impl std::str::FromStr for HoelderMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "l1_shift" => Ok(Self::L1Shift),
            "l2_shift" => Ok(Self::L2Shift),
            "l2_tail" => Ok(Self::L2Tail),
            other => Err(format!("unknown probe mode {other:?}")),
        }
    }
}

/// Modulus of `k` for one lag, `t' = base_t + lag`.
pub fn hoelder_modulus(k: &Kernel, mode: HoelderMode, base_t: f64, lag: f64, tol: f64) -> Result<f64, KernelError> {
    let t = base_t;
    let tp = base_t + lag;
    let wrap = |source: QuadError| match source {
        QuadError::Divergent { .. } => KernelError::NonIntegrable {
            t: tp,
            beta: if mode == HoelderMode::L1Shift { 1.0 } else { 2.0 },
        },
        source => KernelError::Quadrature { t: tp, s: t, source },
    };
    let out = match mode {
        HoelderMode::L1Shift => integrate(
            |s| (k.eval(tp, s) - k.eval(t, s)).abs(),
            0.0,
            t,
            k.s_singularity(true, true),
            tol,
        ),
        HoelderMode::L2Shift => integrate(
            |s| {
                let d = k.eval(tp, s) - k.eval(t, s);
                d * d
            },
            0.0,
            t,
            k.s_singularity(true, true),
            tol,
        ),
        HoelderMode::L2Tail => integrate(
            |s| {
                let v = k.eval(tp, s);
                v * v
            },
            t,
            tp,
            k.s_singularity(t == 0.0, true),
            tol,
        ),
    }
    .map_err(wrap)?;
    Ok(out.value)
}

/// Computes the modulus at every lag and fits `log(modulus)` against
/// `log(lag)` by least squares.
pub fn hoelder_probe(k: &Kernel, mode: HoelderMode, base_t: f64, lags: &[f64]) -> Result<ProbeReport, KernelError> {
    hoelder_probe_tol(k, mode, base_t, lags, DEFAULT_PROBE_TOL)
}

pub fn hoelder_probe_tol(
    k: &Kernel,
    mode: HoelderMode,
    base_t: f64,
    lags: &[f64],
    tol: f64,
) -> Result<ProbeReport, KernelError> {
    if lags.len() < 2 {
        return Err(KernelError::InvalidProbe("at least two lags are required".into()));
    }
    if lags.iter().any(|l| !(*l > 0.0 && l.is_finite())) {
        return Err(KernelError::InvalidProbe("lags must be positive".into()));
    }
    let max_lag = lags.iter().cloned().fold(0.0, f64::max);
    if !(base_t >= 0.0 && base_t + max_lag <= k.horizon() * (1.0 + 1e-12)) {
        return Err(KernelError::InvalidProbe(format!(
            "base_t + max lag = {} exceeds horizon {}",
            base_t + max_lag,
            k.horizon()
        )));
    }
    if base_t == 0.0 && mode != HoelderMode::L2Tail {
        return Err(KernelError::InvalidProbe("shift moduli need base_t > 0".into()));
    }
    let mut samples = Vec::with_capacity(lags.len());
    for &lag in lags {
        samples.push((lag, hoelder_modulus(k, mode, base_t, lag, tol)?));
    }
    let pts: Vec<(f64, f64)> = samples
        .iter()
        .filter(|(_, m)| *m >= ZERO_MODULUS)
        .map(|(l, m)| (l.ln(), m.ln()))
        .collect();
    let fit = ols(&pts);
    Ok(ProbeReport {
        exponent_estimate: fit.map(|f| f.slope),
        constant_estimate: fit.map(|f| f.intercept.exp()).unwrap_or(0.0),
        samples,
        r_squared: fit.map(|f| f.r_squared),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b} (tol {tol})");
    }

    #[test]
    fn constant_kernel_values() {
        close(constant_kernel(0.0).unwrap().eval(1.0, 0.3), 0.0, 0.0);
        close(constant_kernel(1.0).unwrap().eval(0.7, 0.2), 1.0, 0.0);
        let k = constant_kernel(2.5).unwrap();
        let r = integrability_probe(&k, 1.0, &[1.0]).unwrap();
        close(r.constant_estimate, 2.5, 1e-10);
        assert!(constant_kernel(-1.0).is_err());
        assert!(constant_kernel(f64::NAN).is_err());
    }

    #[test]
    fn power_kernel_values() {
        let k = power_kernel(0.25).unwrap();
        close(k.eval(1.0, 0.75), 0.25f64.powf(-0.25), 1e-15);
        close(k.eval(1.0, 0.75), 1.41421, 1e-5);
        assert!(k.meta().singular_at_diagonal);
        close(k.meta().declared_gamma.unwrap(), 0.25, 1e-15);
        assert!(power_kernel(0.0).is_err());
        assert!(power_kernel(0.5).is_err());
        assert!(power_kernel(-0.1).is_err());
        // ∫_0^1 K(1,s)^2 ds = ∫_0^1 (1-s)^{-1/2} ds = 2
        let r = integrability_probe(&k, 2.0, &[1.0]).unwrap();
        close(r.constant_estimate, 2.0, 1e-8);
    }

    #[test]
    fn exp_conv_values() {
        let k = exp_conv_kernel(1.0, 0.25).unwrap();
        close(k.eval(1.0, 0.75), 1.10139, 1e-5);
        let k0 = exp_conv_kernel(0.0, 0.3).unwrap();
        let p = power_kernel(0.3).unwrap();
        for &(t, s) in &[(1.0, 0.2), (0.5, 0.49), (0.9, 0.0)] {
            close(k0.eval(t, s), p.eval(t, s), 1e-15);
        }
        let lo = exp_conv_kernel(0.5, 0.25).unwrap().eval(0.8, 0.3);
        let hi = exp_conv_kernel(2.0, 0.25).unwrap().eval(0.8, 0.3);
        assert!(hi < lo);
        assert!(exp_conv_kernel(1.0, 0.5).is_err());
    }

    #[test]
    fn fbm_half_is_brownian() {
        close(fbm_constant(0.5), 1.0, 1e-14);
        let k = fbm_kernel(0.5, DEFAULT_FBM_QUAD_TOL).unwrap();
        for &(t, s) in &[(1.0, 0.0), (0.7, 0.2), (0.3, 0.299)] {
            close(k.eval(t, s), 1.0, 1e-14);
        }
        assert!(!k.meta().singular_at_diagonal);
    }

    #[test]
    fn fbm_parameter_checks() {
        assert!(fbm_kernel(0.0, 1e-8).is_err());
        assert!(fbm_kernel(1.0, 1e-8).is_err());
        assert!(fbm_kernel(0.3, 0.0).is_err());
        let k = fbm_kernel(0.3, 1e-8).unwrap();
        assert!(k.meta().singular_at_diagonal);
        close(k.meta().declared_gamma.unwrap(), 0.6, 1e-15);
        assert!(!fbm_kernel(0.7, 1e-8).unwrap().meta().singular_at_diagonal);
    }

    #[test]
    fn fbm_matches_molchan_golosov_form() {
        // For H > 1/2 the kernel also equals
        // c_H (H - 1/2) s^{1/2-H} ∫_s^t (u-s)^{H-3/2} u^{H-1/2} du (independent oracle).
        let h = 0.7;
        let k = fbm_kernel(h, 1e-11).unwrap();
        let c = fbm_constant(h);
        for &(t, s) in &[(1.0, 0.3), (0.6, 0.5), (0.9, 0.05)] {
            let inner = integrate(
                |v| v.powf(h - 1.5) * (v + s).powf(h - 0.5),
                0.0,
                t - s,
                Singular::Left,
                1e-12,
            )
            .unwrap()
            .value;
            let oracle = c * (h - 0.5) * s.powf(0.5 - h) * inner;
            close(k.eval(t, s), oracle, 1e-7);
        }
    }

    #[test]
    fn fbm_covariance_oracle() {
        // ∫_0^{min} K(t,s) K(u,s) ds = (t^{2H} + u^{2H} - |t-u|^{2H}) / 2
        for &h in &[0.3, 0.7] {
            let k = fbm_kernel(h, 1e-10).unwrap();
            let t: f64 = 0.8;
            let var = integrate(
                |s| {
                    let v = k.eval(t, s);
                    v * v
                },
                0.0,
                t,
                Singular::Both,
                1e-9,
            )
            .unwrap()
            .value;
            close(var, t.powf(2.0 * h), 1e-6);
        }
    }

    #[test]
    fn integrability_divergence_reported() {
        let k = power_kernel(0.25).unwrap();
        let r = integrability_probe(&k, 4.0, &[1.0]);
        assert!(matches!(r, Err(KernelError::NonIntegrable { .. })), "{r:?}");
        let ok = integrability_probe(&k, 1.0, &[1.0]).unwrap();
        close(ok.constant_estimate, 4.0 / 3.0, 1e-9);
    }

    #[test]
    fn constant_shift_not_identifiable() {
        let k = constant_kernel(1.0).unwrap();
        let r = hoelder_probe(&k, HoelderMode::L1Shift, 0.5, &[0.1, 0.01, 0.001]).unwrap();
        assert!(!r.identifiable());
        assert!(r.samples.iter().all(|(_, m)| *m == 0.0));
    }

    #[test]
    fn probe_rejects_single_lag() {
        let k = constant_kernel(1.0).unwrap();
        assert!(hoelder_probe(&k, HoelderMode::L2Tail, 0.5, &[0.1]).is_err());
        assert!(hoelder_probe(&k, HoelderMode::L2Tail, 0.5, &[0.1, 0.6]).is_err());
    }

    #[test]
    fn power_tail_exponent() {
        let k = power_kernel(0.25).unwrap();
        let lags: Vec<f64> = (2..=8).map(|i| 2f64.powi(-i)).collect();
        let r = hoelder_probe(&k, HoelderMode::L2Tail, 0.5, &lags).unwrap();
        close(r.exponent_estimate.unwrap(), 0.5, 1e-6);
        // closed form constant 1/(1-2α) = 2
        close(r.constant_estimate, 2.0, 1e-6);
    }

    #[test]
    fn squared_and_scaled() {
        let k = power_kernel(0.2).unwrap();
        close(k.squared().eval(1.0, 0.5), 0.5f64.powf(-0.4), 1e-14);
        close(k.scaled(3.0).unwrap().eval(1.0, 0.5), 3.0 * 0.5f64.powf(-0.2), 1e-14);
        assert!(k.scaled(-1.0).unwrap().meta().nonnegative == false);
    }

    #[test]
    fn custom_kernel_validates_meta() {
        let bad = KernelMeta {
            declared_gamma: Some(1.5),
            ..KernelMeta::regular(1.0)
        };
        assert!(custom_kernel(|_, _| 1.0, bad).is_err());
        let ok = custom_kernel(|t, s| t + s, KernelMeta::regular(2.0)).unwrap();
        close(ok.eval(1.0, 0.5), 1.5, 0.0);
        close(ok.eval(0.5, 1.0), 0.0, 0.0);
    }
}
