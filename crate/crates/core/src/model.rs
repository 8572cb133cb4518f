//! Coefficient pairs `(b, σ)` with their declared regularity, the built-in
//! benchmark models and the mean-field Ornstein–Uhlenbeck law.

use crate::kernel::{constant_kernel, Kernel, KernelError};
use crate::measure::EmpiricalMeasure;
use crate::rng::{Domain, NormalStream};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid parameter {name} = {value}: {reason}")]
    InvalidParameter { name: &'static str, value: f64, reason: &'static str },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error(transparent)]
    Kernel(#[from] KernelError),
}

/// `(x, mean) ↦ value` written into an output slice of fixed length,
/// together with its declared Lipschitz and linear-growth constants.
#[derive(Clone)]
pub struct CoefficientMap {
    out_len: usize,
    lipschitz: f64,
    growth: f64,
    func: Arc<dyn Fn(&[f64], &[f64], &mut [f64]) + Send + Sync>,
}

impl fmt::Debug for CoefficientMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CoefficientMap")
            .field("out_len", &self.out_len)
            .field("lipschitz", &self.lipschitz)
            .field("growth", &self.growth)
            .finish()
    }
}

impl CoefficientMap {
    /// `lipschitz` bounds the Euclidean Lipschitz constant in `x` and in the
    /// mean separately; `growth` bounds `|f(x, m)| / (1 + |x| + |m|)`.
    pub fn new<F>(out_len: usize, lipschitz: f64, growth: f64, func: F) -> Result<Self, ModelError>
    where
        F: Fn(&[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
    {
        if out_len == 0 {
            return Err(ModelError::Dimension("coefficient map with empty output".into()));
        }
        for (name, v) in [("lipschitz", lipschitz), ("growth", growth)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(ModelError::InvalidParameter { name, value: v, reason: "must be finite and nonnegative" });
            }
        }
        Ok(Self { out_len, lipschitz, growth, func: Arc::new(func) })
    }

    /// The constant map `x ↦ c` (one output per entry of `c`).
    pub fn constant(c: Vec<f64>) -> Result<Self, ModelError> {
        let growth = c.iter().map(|v| v * v).sum::<f64>().sqrt();
        Self::new(c.len(), 0.0, growth, move |_, _, out| out.copy_from_slice(&c))
    }

    /// Scalar affine map `a x + b m + c`.
    pub fn affine(a: f64, b: f64, c: f64) -> Result<Self, ModelError> {
        let lip = a.abs().max(b.abs());
        let growth = a.abs().max(b.abs()).max(c.abs());
        Self::new(1, lip, growth, move |x, m, out| out[0] = a * x[0] + b * m[0] + c)
    }

    pub fn out_len(&self) -> usize {
        self.out_len
    }

    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    pub fn growth(&self) -> f64 {
        self.growth
    }

    #[inline]
    pub fn apply(&self, x: &[f64], mean: &[f64], out: &mut [f64]) {
        (self.func)(x, mean, out)
    }
}

/// Declared structure of a model: the kernels of the Lipschitz and growth
/// bounds and the exponents of the time-shift bounds.
#[derive(Debug, Clone)]
pub struct RegularityDecl {
    /// Drift Lipschitz kernel.
    pub k1: Kernel,
    /// Squared diffusion Lipschitz kernel.
    pub k2: Kernel,
    /// Drift growth kernel.
    pub k3: Kernel,
    /// Squared diffusion growth kernel.
    pub k4: Kernel,
    /// Hölder exponent of the `t`-shift bound.
    pub gamma: Option<f64>,
    /// Exponent of the `s`-shift bound.
    pub delta: Option<f64>,
    pub lipschitz_f: f64,
    pub growth_f: f64,
}

impl RegularityDecl {
    fn validate(&self) -> Result<(), ModelError> {
        for (name, v) in [("gamma", self.gamma), ("delta", self.delta)] {
            if let Some(v) = v {
                if !(v > 0.0) {
                    return Err(ModelError::InvalidParameter { name, value: v, reason: "must be positive" });
                }
            }
        }
        Ok(())
    }
}

/// Initial law: a fixed point or i.i.d. Gaussian draws.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialCondition {
    Deterministic { value: Vec<f64> },
    /// Independent `N(mean_c, std^2)` coordinates.
    Gaussian { mean: Vec<f64>, std: f64 },
}

impl InitialCondition {
    pub fn deterministic(value: Vec<f64>) -> Result<Self, ModelError> {
        let ic = Self::Deterministic { value };
        ic.validate()?;
        Ok(ic)
    }

    pub fn gaussian(mean: Vec<f64>, std: f64) -> Result<Self, ModelError> {
        let ic = Self::Gaussian { mean, std };
        ic.validate()?;
        Ok(ic)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let (v, std) = match self {
            Self::Deterministic { value } => (value, 0.0),
            Self::Gaussian { mean, std } => (mean, *std),
        };
        if v.is_empty() {
            return Err(ModelError::Dimension("initial condition has dimension 0".into()));
        }
        if let Some(x) = v.iter().find(|x| !x.is_finite()) {
            return Err(ModelError::InvalidParameter { name: "x0", value: *x, reason: "must be finite" });
        }
        if !(std.is_finite() && std >= 0.0) {
            return Err(ModelError::InvalidParameter { name: "std", value: std, reason: "must be finite and nonnegative" });
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Deterministic { value } => value.len(),
            Self::Gaussian { mean, .. } => mean.len(),
        }
    }

    /// `X_0^i`, a pure function of `(master_seed, i)`.
    pub fn sample(&self, master_seed: u64, particle: usize) -> Vec<f64> {
        match self {
            Self::Deterministic { value } => value.clone(),
            Self::Gaussian { mean, std } => {
                let mut z = NormalStream::new(master_seed, Domain::Initial, particle as u64);
                mean.iter().map(|m| m + std * z.next_normal()).collect()
            }
        }
    }

    /// Mean and variance of the first coordinate.
    pub fn moments(&self) -> (f64, f64) {
        match self {
            Self::Deterministic { value } => (value[0], 0.0),
            Self::Gaussian { mean, std } => (mean[0], std * std),
        }
    }
}

pub type DriftFn = dyn Fn(f64, f64, &[f64], &EmpiricalMeasure) -> Vec<f64> + Send + Sync;

#[derive(Clone)]
pub(crate) enum Coefficients {
    Separable { kb: Kernel, ks: Kernel, f: CoefficientMap, g: CoefficientMap },
    General { drift: Arc<DriftFn>, diffusion: Arc<DriftFn> },
}

/// Parameters of a mean-field Ornstein–Uhlenbeck model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OuParams {
    pub a: f64,
    pub sigma0: f64,
}

/// `b(t, s, x, μ)` and `σ(t, s, x, μ)` on `[0, 1]`, with state dimension
/// `d` and noise dimension `m`. The diffusion is a row-major `d x m` matrix.
#[derive(Clone)]
pub struct Model {
    d: usize,
    m: usize,
    pub(crate) coeffs: Coefficients,
    regularity: RegularityDecl,
    x0: InitialCondition,
    ou: Option<OuParams>,
}

impl fmt::Debug for Model {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match &self.coeffs {
            Coefficients::Separable { kb, ks, .. } => format!("separable({}, {})", kb.describe(), ks.describe()),
            Coefficients::General { .. } => "general".to_string(),
        };
        f.debug_struct("Model")
            .field("d", &self.d)
            .field("m", &self.m)
            .field("kind", &kind)
            .field("x0", &self.x0)
            .field("ou", &self.ou)
            .finish()
    }
}

impl Model {
    /// A model with arbitrary measure dependence. The caller declares the
    /// regularity; nothing about it is checked beyond the exponents.
    pub fn general<B, S>(
        d: usize,
        m: usize,
        drift: B,
        diffusion: S,
        regularity: RegularityDecl,
        x0: InitialCondition,
    ) -> Result<Self, ModelError>
    where
        B: Fn(f64, f64, &[f64], &EmpiricalMeasure) -> Vec<f64> + Send + Sync + 'static,
        S: Fn(f64, f64, &[f64], &EmpiricalMeasure) -> Vec<f64> + Send + Sync + 'static,
    {
        if d == 0 || m == 0 {
            return Err(ModelError::Dimension("d and m must be positive".into()));
        }
        check_x0(&x0, d)?;
        regularity.validate()?;
        Ok(Self {
            d,
            m,
            coeffs: Coefficients::General { drift: Arc::new(drift), diffusion: Arc::new(diffusion) },
            regularity,
            x0,
            ou: None,
        })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn x0(&self) -> &InitialCondition {
        &self.x0
    }

    pub fn regularity(&self) -> &RegularityDecl {
        &self.regularity
    }

    /// Set for models built by [`mean_field_ou`].
    pub fn ou_params(&self) -> Option<OuParams> {
        self.ou
    }

    pub fn is_separable(&self) -> bool {
        matches!(self.coeffs, Coefficients::Separable { .. })
    }

    pub fn with_x0(mut self, x0: InitialCondition) -> Result<Self, ModelError> {
        check_x0(&x0, self.d)?;
        self.x0 = x0;
        Ok(self)
    }

    pub fn drift(&self, t: f64, s: f64, x: &[f64], mu: &EmpiricalMeasure) -> Vec<f64> {
        match &self.coeffs {
            Coefficients::Separable { kb, f, .. } => {
                let mut out = vec![0.0; self.d];
                f.apply(x, &mu.mean(), &mut out);
                let k = kb.eval(t, s);
                out.iter_mut().for_each(|v| *v *= k);
                out
            }
            Coefficients::General { drift, .. } => drift(t, s, x, mu),
        }
    }

    pub fn diffusion(&self, t: f64, s: f64, x: &[f64], mu: &EmpiricalMeasure) -> Vec<f64> {
        match &self.coeffs {
            Coefficients::Separable { ks, g, .. } => {
                let mut out = vec![0.0; self.d * self.m];
                g.apply(x, &mu.mean(), &mut out);
                let k = ks.eval(t, s);
                out.iter_mut().for_each(|v| *v *= k);
                out
            }
            Coefficients::General { diffusion, .. } => diffusion(t, s, x, mu),
        }
    }
}

fn check_x0(x0: &InitialCondition, d: usize) -> Result<(), ModelError> {
    x0.validate()?;
    if x0.dim() != d {
        return Err(ModelError::Dimension(format!("initial condition has dimension {}, model has {d}", x0.dim())));
    }
    Ok(())
}

/// `b = kb(t, s) f(x, mean μ)` and `σ = ks(t, s) g(x, mean μ)`.
///
/// With `L` and `G` the larger of the declared Lipschitz and growth
/// constants of `f` and `g`, the declared kernels are `K1 = L kb`,
/// `K2 = L² ks²`, `K3 = G kb` and `K4 = G² ks²`; the shift exponents are
/// the smaller of the kernels' declared Hölder exponents.
pub fn separable_model(
    kb: Kernel,
    ks: Kernel,
    f: CoefficientMap,
    g: CoefficientMap,
    x0: InitialCondition,
) -> Result<Model, ModelError> {
    let d = f.out_len();
    if g.out_len() % d != 0 {
        return Err(ModelError::Dimension(format!(
            "diffusion map has {} outputs, not a multiple of d = {d}",
            g.out_len()
        )));
    }
    let m = g.out_len() / d;
    check_x0(&x0, d)?;
    let l = f.lipschitz().max(g.lipschitz());
    let gr = f.growth().max(g.growth());
    let gamma = match (kb.meta().declared_gamma, ks.meta().declared_gamma) {
        (Some(a), Some(b)) => Some(a.min(b)),
        _ => None,
    };
    let regularity = RegularityDecl {
        k1: kb.scaled(l)?,
        k2: ks.squared().scaled(l * l)?,
        k3: kb.scaled(gr)?,
        k4: ks.squared().scaled(gr * gr)?,
        gamma,
        delta: gamma,
        lipschitz_f: l,
        growth_f: gr,
    };
    Ok(Model { d, m, coeffs: Coefficients::Separable { kb, ks, f, g }, regularity, x0, ou: None })
}

/// `d = m = 1`, `K ≡ 1`, `b = a (mean μ - x)`, `σ ≡ sigma0`.
pub fn mean_field_ou(a: f64, sigma0: f64, x0: InitialCondition) -> Result<Model, ModelError> {
    for (name, v) in [("a", a), ("sigma0", sigma0)] {
        if !v.is_finite() {
            return Err(ModelError::InvalidParameter { name, value: v, reason: "must be finite" });
        }
    }
    let one = constant_kernel(1.0)?;
    let f = CoefficientMap::affine(-a, a, 0.0)?;
    let g = CoefficientMap::constant(vec![sigma0])?;
    let mut model = separable_model(one.clone(), one, f, g, x0)?;
    model.ou = Some(OuParams { a, sigma0 });
    Ok(model)
}

/// Mean and variance at time `t` of the McKean–Vlasov limit of
/// [`mean_field_ou`] started from a law with mean `m0` and variance `v0`.
pub fn ou_oracle(a: f64, sigma0: f64, m0: f64, v0: f64, t: f64) -> Result<(f64, f64), ModelError> {
    if !(v0 >= 0.0 && v0.is_finite()) {
        return Err(ModelError::InvalidParameter { name: "v0", value: v0, reason: "must be finite and nonnegative" });
    }
    if !(t >= 0.0 && t.is_finite()) {
        return Err(ModelError::InvalidParameter { name: "t", value: t, reason: "must be finite and nonnegative" });
    }
    let s2 = sigma0 * sigma0;
    let var = if a == 0.0 {
        v0 + s2 * t
    } else {
        // v0 e^{-2at} + σ²(1 - e^{-2at}) / (2a), stable as a → 0.
        let e = (-2.0 * a * t).exp();
        v0 * e - s2 * (-2.0 * a * t).exp_m1() / (2.0 * a)
    };
    Ok((m0, var))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mu(xs: &[f64]) -> EmpiricalMeasure {
        EmpiricalMeasure::from_scalars(xs).unwrap()
    }

    #[test]
    fn ou_drift_examples() {
        let x0 = InitialCondition::deterministic(vec![0.0]).unwrap();
        let m = mean_field_ou(1.0, 1.0, x0.clone()).unwrap();
        assert_eq!(m.drift(0.5, 0.2, &[0.0], &mu(&[2.0, 2.0])), vec![2.0]);
        assert_eq!(m.drift(0.5, 0.2, &[1.5], &mu(&[1.0, 2.0])), vec![0.0]);
        assert_eq!(m.diffusion(0.5, 0.2, &[3.0], &mu(&[1.0])), vec![1.0]);
        let z = mean_field_ou(0.0, 1.0, x0).unwrap();
        assert_eq!(z.drift(0.5, 0.2, &[7.0], &mu(&[-3.0])), vec![0.0]);
    }

    #[test]
    fn additive_noise_reduction() {
        let kb = crate::kernel::power_kernel(0.25).unwrap();
        let ks = crate::kernel::exp_conv_kernel(1.0, 0.3).unwrap();
        let m = separable_model(
            kb,
            ks.clone(),
            CoefficientMap::constant(vec![0.0]).unwrap(),
            CoefficientMap::constant(vec![1.0]).unwrap(),
            InitialCondition::deterministic(vec![0.0]).unwrap(),
        )
        .unwrap();
        assert_eq!(m.drift(0.7, 0.1, &[2.0], &mu(&[1.0])), vec![0.0]);
        assert_eq!(m.diffusion(0.7, 0.1, &[2.0], &mu(&[1.0])), vec![ks.eval(0.7, 0.1)]);
    }

    #[test]
    fn oracle_examples() {
        assert_eq!(ou_oracle(0.0, 1.0, 0.3, 0.0, 1.0).unwrap(), (0.3, 1.0));
        for t in [0.0, 0.2, 1.0, 5.0] {
            let (m, v) = ou_oracle(1.0, 2f64.sqrt(), -1.0, 1.0, t).unwrap();
            assert_eq!(m, -1.0);
            assert!((v - 1.0).abs() < 1e-14);
        }
        assert_eq!(ou_oracle(0.7, 0.4, 2.0, 0.25, 0.0).unwrap(), (2.0, 0.25));
        assert!(ou_oracle(1.0, 1.0, 0.0, -1.0, 1.0).is_err());
    }

    #[test]
    fn dimension_checks() {
        let one = constant_kernel(1.0).unwrap();
        let bad = separable_model(
            one.clone(),
            one,
            CoefficientMap::constant(vec![0.0, 0.0]).unwrap(),
            CoefficientMap::constant(vec![1.0, 0.0, 0.0]).unwrap(),
            InitialCondition::deterministic(vec![0.0, 0.0]).unwrap(),
        );
        assert!(matches!(bad, Err(ModelError::Dimension(_))));
        assert!(InitialCondition::gaussian(vec![0.0], -1.0).is_err());
        assert!(InitialCondition::deterministic(vec![f64::INFINITY]).is_err());
    }
}
