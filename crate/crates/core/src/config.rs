//! Serializable descriptions of kernels and models, as read from run
//! configuration files.

use crate::kernel::{constant_kernel, exp_conv_kernel, fbm_kernel, power_kernel, Kernel, KernelError};
use crate::model::{mean_field_ou, separable_model, CoefficientMap, InitialCondition, Model, ModelError};
use serde::{Deserialize, Serialize};

pub const DEFAULT_QUAD_TOL: f64 = 1e-10;

fn default_quad_tol() -> f64 {
    DEFAULT_QUAD_TOL
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum KernelConfig {
    Constant { c: f64 },
    Power { alpha: f64 },
    ExpConv { lambda: f64, rho: f64 },
    Fbm {
        #[serde(rename = "H", alias = "hurst")]
        hurst: f64,
        #[serde(default = "default_quad_tol")]
        quad_tol: f64,
    },
}

impl KernelConfig {
    pub fn build(&self) -> Result<Kernel, KernelError> {
        match *self {
            Self::Constant { c } => constant_kernel(c),
            Self::Power { alpha } => power_kernel(alpha),
            Self::ExpConv { lambda, rho } => exp_conv_kernel(lambda, rho),
            Self::Fbm { hurst, quad_tol } => fbm_kernel(hurst, quad_tol),
        }
    }
}

/// Scalar map `x * state + mean * mean(μ) + constant`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AffineConfig {
    #[serde(default)]
    pub x: f64,
    #[serde(default)]
    pub mean: f64,
    #[serde(default)]
    pub constant: f64,
}

impl AffineConfig {
    pub fn build(&self) -> Result<CoefficientMap, ModelError> {
        CoefficientMap::affine(self.x, self.mean, self.constant)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelConfig {
    MeanFieldOu {
        a: f64,
        sigma0: f64,
        x0: InitialCondition,
    },
    /// One-dimensional `b = kb f`, `σ = ks g` with affine `f` and `g`.
    Separable {
        kernel_b: KernelConfig,
        kernel_s: KernelConfig,
        drift: AffineConfig,
        diffusion: AffineConfig,
        x0: InitialCondition,
    },
}

impl ModelConfig {
    pub fn build(&self) -> Result<Model, ModelError> {
        match self {
            Self::MeanFieldOu { a, sigma0, x0 } => mean_field_ou(*a, *sigma0, x0.clone()),
            Self::Separable { kernel_b, kernel_s, drift, diffusion, x0 } => separable_model(
                kernel_b.build()?,
                kernel_s.build()?,
                drift.build()?,
                diffusion.build()?,
                x0.clone(),
            ),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn model_round_trip() {
        let text = r#"
kind = "separable"
drift = { x = -1.0, mean = 0.5 }
diffusion = { constant = 1.0 }
kernel_b = { kind = "fbm", hurst = 0.6 }
kernel_s = { kind = "power", alpha = 0.25 }
x0 = { kind = "gaussian", mean = [0.0], std = 0.5 }
"#;
        let cfg: ModelConfig = toml::from_str(text).unwrap();
        let echo = toml::to_string(&cfg).unwrap();
        assert!(echo.contains("quad_tol") && echo.contains("H = 0.6"));
        assert_eq!(toml::from_str::<ModelConfig>(&echo).unwrap(), cfg);
        let m = cfg.build().unwrap();
        assert_eq!((m.d(), m.m()), (1, 1));
    }

    #[test]
    fn fbm_accepts_short_name() {
        let k: KernelConfig = toml::from_str("kind = \"fbm\"\nH = 0.3\n").unwrap();
        assert_eq!(k, KernelConfig::Fbm { hurst: 0.3, quad_tol: DEFAULT_QUAD_TOL });
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let text = "kind = \"constant\"\nc = 1.0\nextra = 2\n";
        assert!(toml::from_str::<KernelConfig>(text).is_err());
    }
}
