//! The dyadic Euler scheme for the interacting particle system, the
//! particle-level Picard iteration and coupled level-to-level errors.
//!
//! On level `n` the grid is `t_k = k 2^-n`. Coefficients are frozen on each
//! subinterval `(t_j, t_{j+1})`, so for every output time
//!
//! ```text
//! X_k = X_0 + Σ_{j<k} b(t̃_k, s̃_j, X_j, μ_j) 2^-n + Σ_{j<k} σ(t̃_k, s̃_j, X_j, μ_j) ΔW_j
//! ```
//!
//! with `s̃_0 = 2^{-n-1}` and `s̃_j = t_j` otherwise. The kernel is therefore
//! never evaluated closer than `2^{-n-1}` to the diagonal. Because `t̃_k`
//! enters every summand, each output time recomputes its full sum.

use crate::kernel::Kernel;
use crate::measure::{norm_pow, EmpiricalMeasure, MeasureError};
use crate::model::{Coefficients, Model};
use crate::rng::{coarsen, BrownianError, BrownianStore, Increments};
use crate::stats::pairwise_sum;
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SchemeError {
    #[error("time {value} outside {domain}")]
    TimeOutOfRange { value: f64, domain: &'static str },
    #[error("non-finite state at step {step} for particle {particle}")]
    BlowUp { step: usize, particle: usize },
    #[error("kernel is not finite at (t, s) = ({t}, {s})")]
    KernelNonFinite { t: f64, s: f64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Brownian(#[from] BrownianError),
    #[error(transparent)]
    Measure(#[from] MeasureError),
}

/// `t̃ = t` for `t ≥ 2^-n`, else `2^-n`.
pub fn tilde_t(t: f64, n: u32) -> Result<f64, SchemeError> {
    if !(0.0..=1.0).contains(&t) {
        return Err(SchemeError::TimeOutOfRange { value: t, domain: "[0, 1]" });
    }
    let h = step(n);
    Ok(if t >= h { t } else { h })
}

/// `s̃ = [2^n s] / 2^n` for `s ≥ 2^-n`, else `2^{-n-1}`.
pub fn tilde_s(s: f64, n: u32) -> Result<f64, SchemeError> {
    if !(s > 0.0 && s < 1.0) {
        return Err(SchemeError::TimeOutOfRange { value: s, domain: "(0, 1)" });
    }
    let h = step(n);
    Ok(if s >= h { (s / h).floor() * h } else { 0.5 * h })
}

fn step(n: u32) -> f64 {
    (-(n as f64)).exp2()
}

/// Particle states on the level-`n` grid. Column `k` is the empirical
/// measure of all particles at `t_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    level: u32,
    columns: Vec<EmpiricalMeasure>,
}

impl Ensemble {
    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn particles(&self) -> usize {
        self.columns[0].len()
    }

    pub fn dim(&self) -> usize {
        self.columns[0].dim()
    }

    /// Number of grid times, `2^n + 1`.
    pub fn times(&self) -> usize {
        self.columns.len()
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * step(self.level)
    }

    pub fn state(&self, particle: usize, k: usize) -> &[f64] {
        self.columns[k].point(particle)
    }

    pub fn measure(&self, k: usize) -> &EmpiricalMeasure {
        &self.columns[k]
    }

    pub fn measures(&self) -> &[EmpiricalMeasure] {
        &self.columns
    }

    pub fn trajectory(&self, particle: usize) -> Vec<Vec<f64>> {
        self.columns.iter().map(|c| c.point(particle).to_vec()).collect()
    }
}

/// `K(t_k, s_j)` for one output time; convolution kernels are tabulated by
/// lag once. Grid differences are exact, so both routes give identical bits.
struct KernelRows<'a> {
    kernel: &'a Kernel,
    by_lag: Option<Vec<f64>>,
    half: f64,
}

impl<'a> KernelRows<'a> {
    fn new(kernel: &'a Kernel, level: u32) -> Self {
        let half = 0.5 * step(level);
        let by_lag = kernel.is_convolution().then(|| {
            let n = 2usize << level;
            (0..=n).map(|l| kernel.eval(l as f64 * half, 0.0)).collect()
        });
        Self { kernel, by_lag, half }
    }

    fn fill(&self, t: f64, s: &[f64], out: &mut Vec<f64>) -> Result<(), SchemeError> {
        out.clear();
        for &sj in s {
            let v = match &self.by_lag {
                Some(tab) => tab[((t - sj) / self.half).round() as usize],
                None => self.kernel.eval(t, sj),
            };
            if !v.is_finite() {
                return Err(SchemeError::KernelNonFinite { t, s: sj });
            }
            out.push(v);
        }
        Ok(())
    }
}

enum Frozen<'a> {
    /// Explicit scheme: column `j` is the one just computed.
    Own,
    /// Picard sweep: columns come from the previous sweep.
    Previous(&'a Ensemble),
}

struct Run<'a> {
    model: &'a Model,
    level: u32,
    particles: usize,
    incr: Increments,
    /// Kernel time for output `k`.
    t_of: Vec<f64>,
    /// Kernel integration time for subinterval `j`.
    s_of: Vec<f64>,
}

fn check_inputs(model: &Model, level: u32, particles: usize, store: &BrownianStore) -> Result<(), SchemeError> {
    if particles == 0 {
        return Err(SchemeError::InvalidArgument("need at least one particle".into()));
    }
    if particles > store.particles() {
        return Err(BrownianError::NotEnoughParticles { requested: particles, available: store.particles() }.into());
    }
    if store.noise_dim() != model.m() {
        return Err(SchemeError::InvalidArgument(format!(
            "store has noise dimension {}, model needs {}",
            store.noise_dim(),
            model.m()
        )));
    }
    if level > store.n_max() {
        return Err(BrownianError::LevelTooFine { level, n_max: store.n_max() }.into());
    }
    Ok(())
}

fn initial_column(model: &Model, particles: usize, seed: u64) -> Result<EmpiricalMeasure, SchemeError> {
    let mut flat = Vec::with_capacity(particles * model.d());
    for i in 0..particles {
        flat.extend(model.x0().sample(seed, i));
    }
    Ok(EmpiricalMeasure::from_flat(model.d(), flat)?)
}

impl<'a> Run<'a> {
    fn new(model: &'a Model, level: u32, particles: usize, store: &BrownianStore, tilde: bool) -> Result<Self, SchemeError> {
        check_inputs(model, level, particles, store)?;
        let steps = 1usize << level;
        let h = step(level);
        let t_of = (0..=steps)
            .map(|k| if tilde { tilde_t(k as f64 * h, level) } else { Ok(k as f64 * h) })
            .collect::<Result<_, _>>()?;
        let s_of = (0..steps)
            .map(|j| if tilde { tilde_s((j as f64 + 0.5) * h, level) } else { Ok(j as f64 * h) })
            .collect::<Result<_, _>>()?;
        Ok(Self { model, level, particles, incr: coarsen(store, level)?, t_of, s_of })
    }

    fn integrate(&self, x0: EmpiricalMeasure, frozen: Frozen<'_>) -> Result<Ensemble, SchemeError> {
        match &self.model.coeffs {
            Coefficients::Separable { kb, ks, f, g } => self.separable(x0, frozen, kb, ks, f, g),
            Coefficients::General { .. } => self.general(x0, frozen),
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn separable(
        &self,
        x0: EmpiricalMeasure,
        frozen: Frozen<'_>,
        kb: &Kernel,
        ks: &Kernel,
        f: &crate::model::CoefficientMap,
        g: &crate::model::CoefficientMap,
    ) -> Result<Ensemble, SchemeError> {
        let (d, m) = (self.model.d(), self.model.m());
        let steps = 1usize << self.level;
        let h = step(self.level);
        let p = self.particles;
        // Per particle: f(X_j, mean_j) and g(X_j, mean_j) ΔW_j, step-major.
        let mut fx = vec![vec![0.0; steps * d]; p];
        let mut gw = vec![vec![0.0; steps * d]; p];
        let (rows_b, rows_s) = (KernelRows::new(kb, self.level), KernelRows::new(ks, self.level));
        let (mut kb_row, mut ks_row) = (Vec::with_capacity(steps), Vec::with_capacity(steps));
        let mut columns = Vec::with_capacity(steps + 1);
        columns.push(x0);
        for k in 1..=steps {
            let j = k - 1;
            let src = match frozen {
                Frozen::Own => &columns[j],
                Frozen::Previous(e) => &e.columns[j],
            };
            let mean = src.mean();
            fx.par_iter_mut().zip(gw.par_iter_mut()).enumerate().for_each(|(i, (fi, gi))| {
                let x = src.point(i);
                f.apply(x, &mean, &mut fi[j * d..(j + 1) * d]);
                let mut gm = vec![0.0; d * m];
                g.apply(x, &mean, &mut gm);
                let dw = self.incr.get(i, j);
                for (c, out) in gi[j * d..(j + 1) * d].iter_mut().enumerate() {
                    *out = gm[c * m..(c + 1) * m].iter().zip(dw).map(|(a, b)| a * b).sum();
                }
            });
            let t = self.t_of[k];
            rows_b.fill(t, &self.s_of[..k], &mut kb_row)?;
            rows_s.fill(t, &self.s_of[..k], &mut ks_row)?;
            let x0 = &columns[0];
            let (kb_row, ks_row) = (&kb_row, &ks_row);
            let col: Vec<f64> = (0..p)
                .into_par_iter()
                .with_min_len(8)
                .flat_map_iter(|i| {
                    let (fi, gi) = (&fx[i], &gw[i]);
                    let start = x0.point(i);
                    (0..d).map(move |c| {
                        let mut acc = 0.0;
                        for jj in 0..k {
                            acc += kb_row[jj] * h * fi[jj * d + c] + ks_row[jj] * gi[jj * d + c];
                        }
                        start[c] + acc
                    })
                })
                .collect();
            columns.push(finite_column(d, col, k)?);
        }
        Ok(Ensemble { level: self.level, columns })
    }

    fn general(&self, x0: EmpiricalMeasure, frozen: Frozen<'_>) -> Result<Ensemble, SchemeError> {
        let d = self.model.d();
        let m = self.model.m();
        let steps = 1usize << self.level;
        let h = step(self.level);
        let mut columns = Vec::with_capacity(steps + 1);
        columns.push(x0);
        for k in 1..=steps {
            let t = self.t_of[k];
            let src: &[EmpiricalMeasure] = match frozen {
                Frozen::Own => &columns,
                Frozen::Previous(e) => &e.columns,
            };
            let col: Vec<f64> = (0..self.particles)
                .into_par_iter()
                .flat_map_iter(|i| {
                    let mut x = columns[0].point(i).to_vec();
                    for (j, mu) in src.iter().enumerate().take(k) {
                        let y = mu.point(i);
                        let s = self.s_of[j];
                        let b = self.model.drift(t, s, y, mu);
                        let sg = self.model.diffusion(t, s, y, mu);
                        let dw = self.incr.get(i, j);
                        for c in 0..d {
                            let noise: f64 = sg[c * m..(c + 1) * m].iter().zip(dw).map(|(a, b)| a * b).sum();
                            x[c] += b[c] * h + noise;
                        }
                    }
                    x
                })
                .collect();
            columns.push(finite_column(d, col, k)?);
        }
        Ok(Ensemble { level: self.level, columns })
    }
}

fn finite_column(d: usize, col: Vec<f64>, step: usize) -> Result<EmpiricalMeasure, SchemeError> {
    if let Some(pos) = col.iter().position(|v| !v.is_finite()) {
        return Err(SchemeError::BlowUp { step, particle: pos / d });
    }
    Ok(EmpiricalMeasure::from_flat(d, col)?)
}

/// Runs the explicit scheme on level `n` for the first `particles` particles
/// of `store`. The result does not depend on the number of worker threads.
pub fn euler_simulate(model: &Model, n: u32, particles: usize, store: &BrownianStore) -> Result<Ensemble, SchemeError> {
    let run = Run::new(model, n, particles, store, true)?;
    let x0 = initial_column(model, particles, store.master_seed())?;
    run.integrate(x0, Frozen::Own)
}

/// Every Picard sweep up to `iterations`; sweep 1 is the constant `X_0`
/// path. Kernel arguments are `(t_k, t_j)` without the tilde maps.
pub fn picard_sweeps(
    model: &Model,
    n: u32,
    particles: usize,
    store: &BrownianStore,
    iterations: usize,
) -> Result<Vec<Ensemble>, SchemeError> {
    if iterations == 0 {
        return Err(SchemeError::InvalidArgument("iterations must be at least 1".into()));
    }
    let run = Run::new(model, n, particles, store, false)?;
    let x0 = initial_column(model, particles, store.master_seed())?;
    let first = Ensemble { level: n, columns: vec![x0.clone(); (1usize << n) + 1] };
    let mut out = vec![first];
    for _ in 1..iterations {
        let next = run.integrate(x0.clone(), Frozen::Previous(out.last().unwrap()))?;
        out.push(next);
    }
    Ok(out)
}

/// The ensemble after `iterations` Picard sweeps.
pub fn picard_simulate(
    model: &Model,
    n: u32,
    particles: usize,
    store: &BrownianStore,
    iterations: usize,
) -> Result<Ensemble, SchemeError> {
    Ok(picard_sweeps(model, n, particles, store, iterations)?.pop().unwrap())
}

/// `max_{i,k} |X_k^i - Y_k^i|` for two ensembles on the same grid.
pub fn sup_gap(a: &Ensemble, b: &Ensemble) -> Result<f64, SchemeError> {
    if a.level != b.level || a.particles() != b.particles() || a.dim() != b.dim() {
        return Err(SchemeError::InvalidArgument("ensembles live on different grids".into()));
    }
    let mut gap = 0.0f64;
    for (ca, cb) in a.columns.iter().zip(&b.columns) {
        for (x, y) in ca.coords().iter().zip(cb.coords()) {
            gap = gap.max((x - y).abs());
        }
    }
    Ok(gap)
}

/// `max_k (1/N) Σ_i |X_fine(t_k) - X_coarse(t_k)|^p` over the coarse grid.
pub fn coupled_difference(coarse: &Ensemble, fine: &Ensemble, p: f64) -> Result<f64, SchemeError> {
    if coarse.level >= fine.level {
        return Err(SchemeError::InvalidArgument(format!(
            "coarse level {} must be below fine level {}",
            coarse.level, fine.level
        )));
    }
    if coarse.particles() != fine.particles() || coarse.dim() != fine.dim() {
        return Err(SchemeError::InvalidArgument("ensembles differ in size or dimension".into()));
    }
    let stride = 1usize << (fine.level - coarse.level);
    let mut worst = 0.0f64;
    for (k, cc) in coarse.columns.iter().enumerate() {
        let cf = &fine.columns[k * stride];
        let terms: Vec<f64> = cc
            .points()
            .zip(cf.points())
            .map(|(x, y)| {
                let diff: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
                norm_pow(&diff, p)
            })
            .collect();
        worst = worst.max(pairwise_sum(&terms) / terms.len() as f64);
    }
    Ok(worst)
}

/// Coupled error of level `n_coarse` against `n_fine`, both driven by
/// `store`.
pub fn coupled_error(
    model: &Model,
    particles: usize,
    n_coarse: u32,
    n_fine: u32,
    store: &BrownianStore,
    p: f64,
) -> Result<f64, SchemeError> {
    if n_coarse >= n_fine {
        return Err(SchemeError::InvalidArgument(format!(
            "n_coarse = {n_coarse} must be below n_fine = {n_fine}"
        )));
    }
    if !(p >= 2.0 && p.is_finite()) {
        return Err(SchemeError::InvalidArgument(format!("p must be at least 2, got {p}")));
    }
    let fine = euler_simulate(model, n_fine, particles, store)?;
    let coarse = euler_simulate(model, n_coarse, particles, store)?;
    coupled_difference(&coarse, &fine, p)
}
