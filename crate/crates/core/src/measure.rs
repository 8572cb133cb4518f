//! Equal-weight empirical measures on `R^d` and their exact Wasserstein-2
//! distances.
//!
//! Between two measures with the same number of atoms an optimal coupling
//! can always be taken to be a permutation, so `W2` reduces to a sort in one
//! dimension and to a minimum-cost assignment otherwise.

use crate::stats::pairwise_sum;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest size accepted by [`w2_bruteforce`].
pub const BRUTEFORCE_MAX: usize = 8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeasureError {
    #[error("empirical measure needs at least one point")]
    Empty,
    #[error("dimension must be at least 1")]
    ZeroDimension,
    #[error("point {index} has dimension {got}, expected {expected}")]
    Ragged { index: usize, expected: usize, got: usize },
    #[error("point {index} has a non-finite coordinate")]
    NonFinite { index: usize },
    #[error("measures have {left} and {right} atoms; only equal sizes are supported")]
    SizeMismatch { left: usize, right: usize },
    #[error("measures live in dimensions {left} and {right}")]
    DimMismatch { left: usize, right: usize },
    #[error("brute force is limited to {max} atoms, got {n}")]
    TooLarge { n: usize, max: usize },
    #[error("moment order must be at least 1, got {0}")]
    MomentOrder(f64),
}

/// `(1/N) Σ δ_{x_i}` with points stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalMeasure {
    dim: usize,
    coords: Vec<f64>,
}

impl EmpiricalMeasure {
    pub fn new(points: &[Vec<f64>]) -> Result<Self, MeasureError> {
        let dim = points.first().ok_or(MeasureError::Empty)?.len();
        let mut coords = Vec::with_capacity(dim * points.len());
        for (index, p) in points.iter().enumerate() {
            if p.len() != dim {
                return Err(MeasureError::Ragged { index, expected: dim, got: p.len() });
            }
            coords.extend_from_slice(p);
        }
        Self::from_flat(dim, coords)
    }

    /// Builds a measure from `N * dim` row-major coordinates.
    pub fn from_flat(dim: usize, coords: Vec<f64>) -> Result<Self, MeasureError> {
        if dim == 0 {
            return Err(MeasureError::ZeroDimension);
        }
        if coords.is_empty() {
            return Err(MeasureError::Empty);
        }
        if coords.len() % dim != 0 {
            return Err(MeasureError::Ragged {
                index: coords.len() / dim,
                expected: dim,
                got: coords.len() % dim,
            });
        }
        if let Some(k) = coords.iter().position(|c| !c.is_finite()) {
            return Err(MeasureError::NonFinite { index: k / dim });
        }
        Ok(Self { dim, coords })
    }

    pub fn from_scalars(xs: &[f64]) -> Result<Self, MeasureError> {
        Self::from_flat(1, xs.to_vec())
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> {
        self.coords.chunks_exact(self.dim)
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    /// Barycentre `∫ x μ(dx)`.
    pub fn mean(&self) -> Vec<f64> {
        let n = self.len() as f64;
        (0..self.dim)
            .map(|c| {
                let col: Vec<f64> = self.points().map(|p| p[c]).collect();
                pairwise_sum(&col) / n
            })
            .collect()
    }

    /// The push-forward under `x ↦ c x`.
    pub fn scaled(&self, c: f64) -> Result<Self, MeasureError> {
        Self::from_flat(self.dim, self.coords.iter().map(|x| c * x).collect())
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn check_pair(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure) -> Result<(), MeasureError> {
    if mu.len() != nu.len() {
        return Err(MeasureError::SizeMismatch { left: mu.len(), right: nu.len() });
    }
    if mu.dim() != nu.dim() {
        return Err(MeasureError::DimMismatch { left: mu.dim(), right: nu.dim() });
    }
    Ok(())
}

/// Root mean cost of a coupling. Costs are summed in sorted order so the
/// value depends only on their multiset, which makes it exactly symmetric.
fn matched_value(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure, perm: &[usize]) -> f64 {
    let mut costs: Vec<f64> = perm
        .iter()
        .enumerate()
        .map(|(i, &j)| sq_dist(mu.point(i), nu.point(j)))
        .collect();
    costs.sort_by(f64::total_cmp);
    (pairwise_sum(&costs) / mu.len() as f64).sqrt()
}

/// Exact `W2`. Sorts in one dimension and solves the assignment problem in
/// higher dimensions.
pub fn w2(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure) -> Result<f64, MeasureError> {
    check_pair(mu, nu)?;
    if mu.dim() == 1 {
        return Ok(w2_sorted(mu.coords(), nu.coords()));
    }
    w2_matching(mu, nu)
}

fn w2_sorted(a: &[f64], b: &[f64]) -> f64 {
    let order = |xs: &[f64]| {
        let mut idx: Vec<usize> = (0..xs.len()).collect();
        idx.sort_by(|&i, &j| xs[i].total_cmp(&xs[j]).then(i.cmp(&j)));
        idx
    };
    let (ia, ib) = (order(a), order(b));
    let mut costs: Vec<f64> = ia
        .iter()
        .zip(&ib)
        .map(|(&i, &j)| (a[i] - b[j]) * (a[i] - b[j]))
        .collect();
    costs.sort_by(f64::total_cmp);
    (pairwise_sum(&costs) / a.len() as f64).sqrt()
}

/// `W2` through the general assignment solver, in any dimension.
pub fn w2_matching(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure) -> Result<f64, MeasureError> {
    check_pair(mu, nu)?;
    let n = mu.len();
    let mut cost = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            cost[i * n + j] = sq_dist(mu.point(i), nu.point(j));
        }
    }
    let perm = assignment(n, &cost);
    Ok(matched_value(mu, nu, &perm))
}

/// Minimum-cost perfect matching on a dense `n x n` matrix (shortest
/// augmenting paths with row and column potentials, `O(n^3)`).
/// Returns `perm` with row `i` assigned to column `perm[i]`.
pub fn assignment(n: usize, cost: &[f64]) -> Vec<usize> {
    assert_eq!(cost.len(), n * n);
    // 1-based with a virtual column 0 holding the row being inserted.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut row_of = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    let mut minv = vec![0.0; n + 1];
    let mut used = vec![false; n + 1];
    for i in 1..=n {
        row_of[0] = i;
        let mut j0 = 0;
        minv.fill(f64::INFINITY);
        used.fill(false);
        loop {
            used[j0] = true;
            let i0 = row_of[j0];
            let row = &cost[(i0 - 1) * n..i0 * n];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = row[j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[row_of[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of[j0] = row_of[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut perm = vec![0; n];
    for j in 1..=n {
        perm[row_of[j] - 1] = j - 1;
    }
    perm
}

/// Minimum over all `N!` permutations (Heap's algorithm). Only meant as a
/// test oracle.
pub fn w2_bruteforce(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure) -> Result<f64, MeasureError> {
    check_pair(mu, nu)?;
    let n = mu.len();
    if n > BRUTEFORCE_MAX {
        return Err(MeasureError::TooLarge { n, max: BRUTEFORCE_MAX });
    }
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best = matched_value(mu, nu, &perm);
    let mut c = vec![0usize; n];
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            best = best.min(matched_value(mu, nu, &perm));
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    Ok(best)
}

/// `W2(μ, δ_0) = sqrt((1/N) Σ |x_i|^2)`.
pub fn w2_to_dirac0(mu: &EmpiricalMeasure) -> f64 {
    let sq: Vec<f64> = mu.points().map(|p| p.iter().map(|x| x * x).sum()).collect();
    (pairwise_sum(&sq) / mu.len() as f64).sqrt()
}

/// `|x|^q` for the Euclidean norm, exact squaring when `q = 2`.
pub fn norm_pow(x: &[f64], q: f64) -> f64 {
    let r2: f64 = x.iter().map(|v| v * v).sum();
    if q == 2.0 {
        r2
    } else {
        r2.sqrt().powf(q)
    }
}

/// `M_q(μ) = (1/N) Σ |x_i|^q`.
pub fn moment(mu: &EmpiricalMeasure, q: f64) -> Result<f64, MeasureError> {
    if !(q >= 1.0) || !q.is_finite() {
        return Err(MeasureError::MomentOrder(q));
    }
    let terms: Vec<f64> = mu.points().map(|p| norm_pow(p, q)).collect();
    Ok(pairwise_sum(&terms) / mu.len() as f64)
}
