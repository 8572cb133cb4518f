//! Numerical toolkit for Volterra-type McKean–Vlasov SDEs with singular
//! kernels.

pub mod config;
pub mod experiments;
pub mod kernel;
pub mod measure;
pub mod model;
pub mod quadrature;
pub mod resolvent;
pub mod rng;
pub mod scheme;
pub mod stats;
