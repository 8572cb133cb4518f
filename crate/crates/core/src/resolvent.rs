//! Lower-triangular tabulation of two-time kernels, their Volterra convolution
//! powers `R_n`, the resolvent series `R = Σ R_n` and the Volterra Gronwall
//! bound.
//!
//! Each column `s = t_j` of a table is a one-dimensional Volterra problem
//! `f_{n+1}(t) = ∫_s^t K(t, u) f_n(u) du`. Close to `u = s` a column is carried
//! on a band of Gauss points: geometrically graded cells inside the first grid
//! cell (a power-law fit covers the innermost piece), followed by a few plain
//! grid cells. This resolves the power-type behaviour of the iterates at the
//! column start. Beyond the band a column is represented by its grid values
//! with piecewise quadratic interpolation. Kernel moments against the
//! interpolation basis do not depend on the column, so they are computed once
//! per grid and each application reduces to triangular dot products.
//! Singular kernel values are never sampled: every quadrature node lies
//! strictly inside its cell.

use rayon::prelude::*;
use thiserror::Error;

use crate::kernel::{constant_kernel, Kernel};
use crate::quadrature::{lagrange, lagrange3, GAUSS3, GAUSS4, GAUSS8};

const CELLS_PER_OCTAVE: usize = 2;
const OCTAVES: usize = 12;
const GEO_CELLS: usize = CELLS_PER_OCTAVE * OCTAVES;
/// Grid cells covered by a column band, the first one included.
const BAND_CELLS: usize = 16;
/// Grid targets past the band whose band contribution is integrated directly.
const NEAR_TARGETS: usize = 4;
const SINGULAR_LEVELS: usize = 24;
const PTS: usize = 4;
const MAX_LEVEL: u32 = 16;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ResolventError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("tables are defined on different grids")]
    GridMismatch,
    #[error("kernel value at (t={t}, s={s}) is not finite")]
    NonFinite { t: f64, s: f64 },
    #[error("smallness check failed: one-cell kernel integral {value} >= 1 ending at t={t}")]
    Smallness { value: f64, t: f64 },
    #[error("resolvent series did not settle after {terms} terms (last term norm {last_norm:e})")]
    Divergent { terms: usize, last_norm: f64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("weight function is negative ({value}) at t={t}")]
    NegativeWeight { t: f64, value: f64 },
}

/// Time grid `0 = t_0 < ... < t_M = T` discretising the triangle `{s < t}`.
#[derive(Debug, Clone, PartialEq)]
pub struct TriGrid {
    nodes: Vec<f64>,
    level: Option<u32>,
}

impl TriGrid {
    /// Uniform grid with `2^level` cells on `[0, horizon]`.
    pub fn dyadic(level: u32, horizon: f64) -> Result<Self, ResolventError> {
        if level > MAX_LEVEL {
            return Err(ResolventError::InvalidGrid(format!("level {level} exceeds {MAX_LEVEL}")));
        }
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(ResolventError::InvalidGrid(format!("horizon {horizon} must be positive")));
        }
        let m = 1usize << level;
        let nodes = (0..=m).map(|k| k as f64 * horizon / m as f64).collect();
        Ok(Self {
            nodes,
            level: Some(level),
        })
    }

    /// Explicit nodes; they must start at 0 and increase strictly.
    pub fn from_nodes(nodes: Vec<f64>) -> Result<Self, ResolventError> {
        if nodes.len() < 2 {
            return Err(ResolventError::InvalidGrid("at least two nodes are required".into()));
        }
        if nodes[0] != 0.0 {
            return Err(ResolventError::InvalidGrid("first node must be 0".into()));
        }
        if nodes.iter().any(|t| !t.is_finite()) {
            return Err(ResolventError::InvalidGrid("nodes must be finite".into()));
        }
        if let Some(w) = nodes.windows(2).find(|w| w[1] <= w[0]) {
            return Err(ResolventError::InvalidGrid(format!(
                "nodes not strictly increasing at {} -> {}",
                w[0], w[1]
            )));
        }
        Ok(Self { nodes, level: None })
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    /// Number of cells `M`.
    pub fn cells(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn level(&self) -> Option<u32> {
        self.level
    }

    pub fn horizon(&self) -> f64 {
        self.nodes[self.cells()]
    }

    pub fn is_uniform(&self) -> bool {
        if self.level.is_some() {
            return true;
        }
        let h = self.width(0);
        (0..self.cells()).all(|m| (self.width(m) - h).abs() <= 1e-12 * h)
    }

    #[inline]
    fn width(&self, m: usize) -> f64 {
        self.nodes[m + 1] - self.nodes[m]
    }

    #[inline]
    fn gauss3(&self, m: usize) -> [f64; 3] {
        let (a, h) = (self.nodes[m], self.width(m));
        [
            a + h * GAUSS3.nodes[0],
            a + h * GAUSS3.nodes[1],
            a + h * GAUSS3.nodes[2],
        ]
    }

    #[inline]
    fn triple_nodes(&self, m: usize) -> [f64; 3] {
        let b = m.saturating_sub(1);
        [self.nodes[b], self.nodes[b + 1], self.nodes[b + 2]]
    }
}

/// A kernel tabulated on a grid: values `T(t_i, t_j)` for `j < i`, plus the
/// band data that resolves each column near its start.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelTable {
    grid: TriGrid,
    cols: Vec<Column>,
}

#[derive(Debug, Clone, PartialEq)]
struct Column {
    /// Values at `t_{j+1}, ..., t_M`.
    vals: Vec<f64>,
    band: Vec<f64>,
}

impl KernelTable {
    pub fn grid(&self) -> &TriGrid {
        &self.grid
    }

    /// `T(t_i, t_j)`; panics unless `j < i <= M`.
    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        assert!(j < i, "table defined for j < i only (i={i}, j={j})");
        self.cols[j].vals[i - j - 1]
    }

    /// Values of column `j` at `t_{j+1}, ..., t_M`.
    pub fn column(&self, j: usize) -> &[f64] {
        &self.cols[j].vals
    }

    /// `(t_i, s_j, value)` for all cells, ordered by `i` then `j`.
    pub fn cells(&self) -> Vec<(f64, f64, f64)> {
        let t = self.grid.nodes();
        let m = self.grid.cells();
        let mut out = Vec::with_capacity(m * (m + 1) / 2);
        for i in 1..=m {
            for j in 0..i {
                out.push((t[i], t[j], self.get(i, j)));
            }
        }
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.cols
            .iter()
            .flat_map(|c| c.vals.iter())
            .fold(0.0, |a, v| a.max(v.abs()))
    }

    fn all_finite(&self) -> bool {
        self.cols
            .iter()
            .all(|c| c.vals.iter().chain(&c.band).all(|v| v.is_finite()))
    }

    fn add_assign(&mut self, other: &KernelTable) {
        for (a, b) in self.cols.iter_mut().zip(&other.cols) {
            for (x, y) in a.vals.iter_mut().zip(&b.vals) {
                *x += y;
            }
            for (x, y) in a.band.iter_mut().zip(&b.band) {
                *x += y;
            }
        }
    }
}

/// Truncated resolvent series on a grid with its diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolventTable {
    pub table: KernelTable,
    pub terms_used: usize,
    pub tail_norm: f64,
    /// `max_i |∫_0^{t_i} R_n(t_i, s) ds|` for each computed term.
    pub term_norms: Vec<f64>,
}

impl ResolventTable {
    pub fn grid(&self) -> &TriGrid {
        self.table.grid()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.table.get(i, j)
    }
}

/// Residuals of the two one-sided resolvent identities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IdentityResiduals {
    /// `max |R - K - K*R|` over grid cells.
    pub left: f64,
    /// `max |R - K - R*K|` over grid cells.
    pub right: f64,
}

impl IdentityResiduals {
    pub fn max(&self) -> f64 {
        self.left.max(self.right)
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 4];
    let chunks = n / 4;
    for c in 0..chunks {
        for l in 0..4 {
            acc[l] += a[4 * c + l] * b[4 * c + l];
        }
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for k in 4 * chunks..n {
        s += a[k] * b[k];
    }
    s
}

/// Gauss-4 nodes and weights of a graded rule on `[a, b]` refined toward `b`
/// (or `a`), with weights multiplied by `kf`. The second value is the mass of
/// the untouched end piece, extrapolated geometrically from the last two
/// levels; callers place it at the singular end.
fn singular_rule<F: Fn(f64) -> f64>(
    a: f64,
    b: f64,
    toward_b: bool,
    breaks: &[f64],
    kf: F,
) -> (Vec<(f64, f64)>, f64) {
    let w = b - a;
    let mut out = Vec::with_capacity(SINGULAR_LEVELS * PTS + 8);
    let (mut prev, mut last) = (0.0, 0.0);
    let mut edges = Vec::with_capacity(breaks.len() + 2);
    for level in 0..SINGULAR_LEVELS {
        let outer = w * 0.5f64.powi(level as i32);
        let inner = 0.5 * outer;
        let (lo, hi) = if toward_b {
            (b - outer, b - inner)
        } else {
            (a + inner, a + outer)
        };
        edges.clear();
        edges.push(lo);
        edges.extend(breaks.iter().copied().filter(|&x| x > lo && x < hi));
        edges.push(hi);
        let mut piece = 0.0;
        for e in edges.windows(2) {
            let len = e[1] - e[0];
            for (x, wt) in GAUSS4.nodes.iter().zip(&GAUSS4.weights) {
                let y = e[0] + len * x;
                let v = wt * len * kf(y);
                piece += v;
                out.push((y, v));
            }
        }
        prev = last;
        last = piece;
    }
    let tail = if prev != 0.0 {
        let r = last / prev;
        if r > 0.0 && r < 1.0 {
            last * r / (1.0 - r)
        } else {
            0.0
        }
    } else {
        0.0
    };
    (out, tail)
}

#[derive(Debug, Clone, Copy)]
struct Cell {
    lo: f64,
    hi: f64,
    log: bool,
    var_nodes: [f64; PTS],
}

impl Cell {
    fn new(lo: f64, hi: f64, log: bool) -> Self {
        let (a, b) = if log { (lo.ln(), hi.ln()) } else { (lo, hi) };
        let var_nodes = std::array::from_fn(|p| a + (b - a) * GAUSS4.nodes[p]);
        Self {
            lo,
            hi,
            log,
            var_nodes,
        }
    }

    fn points(&self) -> [(f64, f64); PTS] {
        let (a, b) = if self.log {
            (self.lo.ln(), self.hi.ln())
        } else {
            (self.lo, self.hi)
        };
        std::array::from_fn(|p| {
            let v = self.var_nodes[p];
            let w = (b - a) * GAUSS4.weights[p];
            if self.log {
                let y = v.exp();
                (y, w * y)
            } else {
                (v, w)
            }
        })
    }

    #[inline]
    fn basis(&self, y: f64) -> [f64; PTS] {
        let v = if self.log { y.ln() } else { y };
        lagrange(&self.var_nodes, v)
    }
}

/// Band layout of one column, as lags `y = u - s`.
struct BandGeom {
    s: f64,
    h: f64,
    cells: Vec<Cell>,
    pts: Vec<f64>,
    wts: Vec<f64>,
    y_min: f64,
    /// Lags of the grid targets `t_{j+r} - s`, `r = 1, 2, ...`.
    tops: Vec<f64>,
    /// Grid cells of the band after the first one.
    grid_cells: usize,
    /// Gauss-3 nodes (as lags) of each grid cell covered by the band.
    cell_nodes: Vec<[f64; 3]>,
}

fn band_geom(grid: &TriGrid, j: usize) -> BandGeom {
    let t = grid.nodes();
    let m_total = grid.cells();
    let s = t[j];
    let h = grid.width(j);
    let q = CELLS_PER_OCTAVE as f64;
    let mut cells = Vec::with_capacity(GEO_CELLS + BAND_CELLS);
    for k in 0..GEO_CELLS {
        let lo = h * 2f64.powf(-((GEO_CELLS - k) as f64) / q);
        let hi = if k + 1 == GEO_CELLS {
            h
        } else {
            h * 2f64.powf(-((GEO_CELLS - k - 1) as f64) / q)
        };
        cells.push(Cell::new(lo, hi, true));
    }
    let grid_cells = (BAND_CELLS - 1).min(m_total - j - 1);
    for m in j + 1..=j + grid_cells {
        cells.push(Cell::new(t[m] - s, t[m + 1] - s, false));
    }
    let mut pts = Vec::with_capacity(cells.len() * PTS);
    let mut wts = Vec::with_capacity(cells.len() * PTS);
    for c in &cells {
        for (y, w) in c.points() {
            pts.push(y);
            wts.push(w);
        }
    }
    let n_targets = (BAND_CELLS + NEAR_TARGETS).min(m_total - j);
    let tops = (1..=n_targets).map(|r| t[j + r] - s).collect();
    let cell_nodes = (j..=j + grid_cells)
        .map(|m| grid.gauss3(m).map(|u| u - s))
        .collect();
    BandGeom {
        s,
        h,
        y_min: cells[0].lo,
        cells,
        pts,
        wts,
        tops,
        grid_cells,
        cell_nodes,
    }
}

impl BandGeom {
    fn locate(&self, y: f64, from: usize, to: usize) -> usize {
        (from..to).find(|&c| y <= self.cells[c].hi).unwrap_or(to)
    }

    /// Weights over band points (and the innermost-piece weight) for
    /// `∫ kf(y) f(y) dy` from the start of cell `from` up to `y_hi`, which lies
    /// in cell `c_hi`. With `singular` set, the last stretch is graded toward
    /// `y_hi`.
    fn row<F: Fn(f64) -> f64>(&self, kf: F, c_hi: usize, y_hi: f64, from: usize, singular: bool) -> (Vec<f64>, f64) {
        let mut row = vec![0.0; self.pts.len()];
        let near = if singular {
            c_hi.saturating_sub(1).max(from)
        } else {
            c_hi + 1
        };
        for c in from..near {
            for p in 0..PTS {
                let k = c * PTS + p;
                row[k] += self.wts[k] * kf(self.pts[k]);
            }
        }
        if singular {
            let breaks: Vec<f64> = self.cells[near..c_hi].iter().map(|c| c.hi).collect();
            let (nodes, tail) = singular_rule(self.cells[near].lo, y_hi, true, &breaks, &kf);
            for (y, wk) in nodes {
                let c = self.locate(y, near, c_hi);
                let b = self.cells[c].basis(y);
                for p in 0..PTS {
                    row[c * PTS + p] += wk * b[p];
                }
            }
            let b = self.cells[c_hi].basis(y_hi);
            for p in 0..PTS {
                row[c_hi * PTS + p] += tail * b[p];
            }
        }
        let seg = if from == 0 { kf(0.5 * self.y_min) } else { 0.0 };
        (row, seg)
    }
}

/// Linear maps from a column's band values to its next iterate near the
/// column start, and to the moments used elsewhere.
struct BandOp {
    nb: usize,
    pts: Vec<f64>,
    y_min: f64,
    w_band: Vec<f64>,
    seg_band: Vec<f64>,
    ng: usize,
    w_grid: Vec<f64>,
    seg_grid: Vec<f64>,
    /// `∫_{cell} Λ_p f` for each band grid cell (3 rows per cell).
    mu: Vec<f64>,
    mu_seg: Vec<f64>,
    /// `∫_0^h f(x) Λ_p(t_{j+1} - x) dx` (3 rows).
    prof: Vec<f64>,
    prof_seg: [f64; 3],
    /// `∫_0^h f(x) K(s + h - x, s) dx`.
    diag: Vec<f64>,
    diag_seg: f64,
}

fn check_row(row: &[f64], seg: f64, t: f64, s: f64) -> Result<(), ResolventError> {
    if row.iter().all(|v| v.is_finite()) && seg.is_finite() {
        Ok(())
    } else {
        Err(ResolventError::NonFinite { t, s })
    }
}

fn build_band(k: &Kernel, g: &BandGeom) -> Result<BandOp, ResolventError> {
    let nb = g.pts.len();
    let s = g.s;
    let mut w_band = Vec::with_capacity(nb * nb);
    let mut seg_band = Vec::with_capacity(nb);
    for r in 0..nb {
        let y_star = g.pts[r];
        let (row, seg) = g.row(|y| k.eval(s + y_star, s + y), r / PTS, y_star, 0, true);
        check_row(&row, seg, s + y_star, s)?;
        w_band.extend(row);
        seg_band.push(seg);
    }
    let ng = g.tops.len();
    let n_cells = g.cells.len();
    let mut w_grid = Vec::with_capacity(ng * nb);
    let mut seg_grid = Vec::with_capacity(ng);
    for (ri, &y_star) in g.tops.iter().enumerate() {
        let (row, seg) = if ri <= g.grid_cells {
            let c_hi = GEO_CELLS - 1 + ri;
            g.row(|y| k.eval(s + y_star, s + y), c_hi, y_star, 0, true)
        } else {
            let c_hi = n_cells - 1;
            g.row(|y| k.eval(s + y_star, s + y), c_hi, g.cells[c_hi].hi, 0, false)
        };
        check_row(&row, seg, s + y_star, s)?;
        w_grid.extend(row);
        seg_grid.push(seg);
    }
    let mut mu = Vec::with_capacity(3 * (g.grid_cells + 1) * nb);
    let mut mu_seg = Vec::with_capacity(3 * (g.grid_cells + 1));
    for (c, nodes) in g.cell_nodes.iter().enumerate() {
        for p in 0..3 {
            let basis = |y: f64| lagrange3(*nodes, y)[p];
            let (row, seg) = if c == 0 {
                g.row(basis, GEO_CELLS - 1, g.h, 0, false)
            } else {
                let cc = GEO_CELLS - 1 + c;
                g.row(basis, cc, g.cells[cc].hi, cc, false)
            };
            mu.extend(row);
            mu_seg.push(seg);
        }
    }
    let first = g.cell_nodes[0];
    let mut prof = Vec::with_capacity(3 * nb);
    let mut prof_seg = [0.0; 3];
    for (p, ps) in prof_seg.iter_mut().enumerate() {
        let (row, seg) = g.row(|x| lagrange3(first, g.h - x)[p], GEO_CELLS - 1, g.h, 0, false);
        prof.extend(row);
        *ps = seg;
    }
    let (diag, diag_seg) = g.row(|x| k.eval(s + g.h - x, s), GEO_CELLS - 1, g.h, 0, true);
    check_row(&diag, diag_seg, s + g.h, s)?;
    Ok(BandOp {
        nb,
        pts: g.pts.clone(),
        y_min: g.y_min,
        w_band,
        seg_band,
        ng,
        w_grid,
        seg_grid,
        mu,
        mu_seg,
        prof,
        prof_seg,
        diag,
        diag_seg,
    })
}

impl BandOp {
    /// `∫_0^{y_min} f` from a power law through the two innermost points.
    fn segment(&self, band: &[f64]) -> f64 {
        let (y0, y1) = (self.pts[0], self.pts[1]);
        let (f0, f1) = (band[0], band[1]);
        if f0 > 0.0 && f1 > 0.0 {
            let b = (f1 / f0).ln() / (y1 / y0).ln();
            if b.is_finite() && b > -0.95 {
                return f0 * (self.y_min / y0).powf(b) * self.y_min / (b + 1.0);
            }
        }
        f0 * self.y_min
    }

    fn profile(&self, band: &[f64]) -> [f64; 3] {
        let seg = self.segment(band);
        let n = GEO_CELLS * PTS;
        std::array::from_fn(|p| dot(&self.prof[p * self.nb..p * self.nb + n], &band[..n]) + self.prof_seg[p] * seg)
    }

    fn diagonal(&self, band: &[f64]) -> f64 {
        let n = GEO_CELLS * PTS;
        dot(&self.diag[..n], &band[..n]) + self.diag_seg * self.segment(band)
    }
}

/// Column-independent data for applying `f -> ∫ K(t, u) f(u) du`.
struct Operator<'k> {
    kernel: &'k Kernel,
    grid: TriGrid,
    shared: Option<BandOp>,
    per_col: Vec<BandOp>,
    /// `a[i][k]`: weight of node `k` in `∫_{t_1}^{t_i} K(t_i, u) f(u) du`.
    a: Vec<Vec<f64>>,
    /// Weight of cell `m` on its left (`cl`) and right (`cr`) node in row `i`.
    cl: Vec<Vec<f64>>,
    cr: Vec<Vec<f64>>,
    /// `K(t_i, ·)` at the Gauss-3 nodes of cell `m`, for `m <= i - 2`.
    ks: Vec<Vec<[f64; 3]>>,
}

fn uniform_convolution(k: &Kernel, grid: &TriGrid) -> bool {
    k.is_convolution() && grid.is_uniform()
}

/// Moments of `K(t_i, ·)` against the quadratic basis on the node triple of
/// cell `m >= 1`.
fn cell_moments(k: &Kernel, grid: &TriGrid, i: usize, m: usize) -> [f64; 3] {
    let t = grid.nodes();
    let ti = t[i];
    let nodes = grid.triple_nodes(m);
    let mut mom = [0.0; 3];
    if m + 1 == i {
        let (pts, tail) = singular_rule(t[m], ti, true, &[], |u| k.eval(ti, u));
        for (u, wk) in pts {
            let b = lagrange3(nodes, u);
            for q in 0..3 {
                mom[q] += wk * b[q];
            }
        }
        let b = lagrange3(nodes, ti);
        for q in 0..3 {
            mom[q] += tail * b[q];
        }
    } else {
        let (a, h) = (t[m], grid.width(m));
        for (x, w) in GAUSS8.nodes.iter().zip(&GAUSS8.weights) {
            let u = a + h * x;
            let kv = w * h * k.eval(ti, u);
            let b = lagrange3(nodes, u);
            for q in 0..3 {
                mom[q] += kv * b[q];
            }
        }
    }
    mom
}

impl<'k> Operator<'k> {
    fn new(kernel: &'k Kernel, grid: &TriGrid) -> Result<Self, ResolventError> {
        let m_total = grid.cells();
        if grid.horizon() > kernel.horizon() * (1.0 + 1e-12) {
            return Err(ResolventError::InvalidGrid(format!(
                "grid horizon {} exceeds kernel horizon {}",
                grid.horizon(),
                kernel.horizon()
            )));
        }
        let t = grid.nodes();
        let conv = uniform_convolution(kernel, grid);

        let (shared, per_col) = if conv {
            (Some(build_band(kernel, &band_geom(grid, 0))?), Vec::new())
        } else {
            let ops: Result<Vec<_>, _> = (0..m_total)
                .into_par_iter()
                .map(|j| build_band(kernel, &band_geom(grid, j)))
                .collect();
            (None, ops?)
        };

        // Cell moments and Gauss-node kernel values, by row.
        let conv_moments: Vec<[f64; 3]> = if conv && m_total >= 2 {
            (1..m_total)
                .into_par_iter()
                .map(|d| cell_moments(kernel, grid, m_total, m_total - d))
                .collect()
        } else {
            Vec::new()
        };
        let conv_ks: Vec<[f64; 3]> = if conv {
            (0..=m_total)
                .into_par_iter()
                .map(|d| {
                    if d < 2 {
                        return [0.0; 3];
                    }
                    let m = m_total - d;
                    grid.gauss3(m).map(|u| kernel.eval(t[m_total], u))
                })
                .collect()
        } else {
            Vec::new()
        };

        let rows: Vec<(Vec<f64>, Vec<f64>, Vec<f64>, Vec<[f64; 3]>)> = (0..=m_total)
            .into_par_iter()
            .map(|i| {
                let mut a = vec![0.0; i + 1];
                let mut cl = vec![0.0; i];
                let mut cr = vec![0.0; i];
                for m in 1..i {
                    let mom = if conv {
                        conv_moments[i - m - 1]
                    } else {
                        cell_moments(kernel, grid, i, m)
                    };
                    a[m - 1] += mom[0];
                    a[m] += mom[1];
                    a[m + 1] += mom[2];
                    cl[m] = mom[0];
                    cr[m] = mom[2];
                }
                let ks = (0..i.saturating_sub(1))
                    .map(|m| {
                        if conv {
                            conv_ks[i - m]
                        } else {
                            grid.gauss3(m).map(|u| kernel.eval(t[i], u))
                        }
                    })
                    .collect();
                (a, cl, cr, ks)
            })
            .collect();
        let mut a = Vec::with_capacity(rows.len());
        let mut cl = Vec::with_capacity(rows.len());
        let mut cr = Vec::with_capacity(rows.len());
        let mut ks = Vec::with_capacity(rows.len());
        for (i, (ra, rl, rr, rk)) in rows.into_iter().enumerate() {
            let finite = ra.iter().all(|v| v.is_finite()) && rk.iter().flatten().all(|v| v.is_finite());
            if !finite {
                return Err(ResolventError::NonFinite { t: t[i], s: 0.0 });
            }
            a.push(ra);
            cl.push(rl);
            cr.push(rr);
            ks.push(rk);
        }
        Ok(Self {
            kernel,
            grid: grid.clone(),
            shared,
            per_col,
            a,
            cl,
            cr,
            ks,
        })
    }

    #[inline]
    fn band(&self, j: usize) -> &BandOp {
        match &self.shared {
            Some(op) => op,
            None => &self.per_col[j],
        }
    }

    fn band_len(&self, j: usize) -> usize {
        let m_total = self.grid.cells();
        PTS * (GEO_CELLS + (BAND_CELLS - 1).min(m_total - j - 1))
    }

    /// The kernel itself as a table.
    fn initial(&self) -> Result<KernelTable, ResolventError> {
        let t = self.grid.nodes();
        let m_total = self.grid.cells();
        let cols: Result<Vec<Column>, ResolventError> = (0..m_total)
            .into_par_iter()
            .map(|j| {
                let s = t[j];
                let nb = self.band_len(j);
                let op = self.band(j);
                let band: Vec<f64> = op.pts[..nb].iter().map(|y| self.kernel.eval(s + y, s)).collect();
                let vals: Vec<f64> = (j + 1..=m_total).map(|i| self.kernel.eval(t[i], s)).collect();
                if let Some(i) = vals.iter().position(|v| !v.is_finite()) {
                    return Err(ResolventError::NonFinite { t: t[j + 1 + i], s });
                }
                if let Some(p) = band.iter().position(|v| !v.is_finite()) {
                    return Err(ResolventError::NonFinite { t: s + op.pts[p], s });
                }
                Ok(Column { vals, band })
            })
            .collect();
        Ok(KernelTable {
            grid: self.grid.clone(),
            cols: cols?,
        })
    }

    /// Grid contribution of cells `m >= j + BAND_CELLS` to target row `i`.
    #[inline]
    fn far(&self, i: usize, j: usize, vals: &[f64]) -> f64 {
        let start = j + BAND_CELLS;
        let row = &self.a[i];
        let off = j + 1;
        let mut v = dot(&row[start + 1..=i], &vals[start + 1 - off..=i - off]);
        v += (row[start] - self.cr[i][start - 1]) * vals[start - off];
        v += self.cl[i][start] * vals[start - 1 - off];
        v
    }

    fn apply_column(&self, j: usize, prev: &Column) -> Column {
        let m_total = self.grid.cells();
        let op = self.band(j);
        let nb = self.band_len(j);
        let nbf = op.nb;
        let band_in = &prev.band[..nb];
        let seg = op.segment(band_in);

        let band: Vec<f64> = (0..nb)
            .map(|r| dot(&op.w_band[r * nbf..r * nbf + nb], band_in) + op.seg_band[r] * seg)
            .collect();

        let mut vals = vec![0.0; m_total - j];
        let ng = (BAND_CELLS + NEAR_TARGETS).min(m_total - j).min(op.ng);
        for r in 1..=ng {
            let i = j + r;
            let mut v = dot(&op.w_grid[(r - 1) * nbf..(r - 1) * nbf + nb], band_in) + op.seg_grid[r - 1] * seg;
            if r > BAND_CELLS {
                v += self.far(i, j, &prev.vals);
            }
            vals[r - 1] = v;
        }
        if m_total - j > BAND_CELLS + NEAR_TARGETS {
            let mut mu = [[0.0; 3]; BAND_CELLS];
            for (c, mc) in mu.iter_mut().enumerate() {
                for (p, v) in mc.iter_mut().enumerate() {
                    let r = 3 * c + p;
                    *v = dot(&op.mu[r * nbf..r * nbf + nb], band_in) + op.mu_seg[r] * seg;
                }
            }
            for i in j + BAND_CELLS + NEAR_TARGETS + 1..=m_total {
                let ks = &self.ks[i][j..j + BAND_CELLS];
                let mut v = 0.0;
                for (kc, mc) in ks.iter().zip(&mu) {
                    v += kc[0] * mc[0] + kc[1] * mc[1] + kc[2] * mc[2];
                }
                vals[i - j - 1] = v + self.far(i, j, &prev.vals);
            }
        }
        Column { vals, band }
    }

    fn apply(&self, f: &KernelTable) -> KernelTable {
        let cols = f
            .cols
            .par_iter()
            .enumerate()
            .map(|(j, c)| self.apply_column(j, c))
            .collect();
        KernelTable {
            grid: self.grid.clone(),
            cols,
        }
    }

    /// Values of `T(t_i, ·)` at the Gauss-3 nodes of cell `m <= i - 2`.
    fn row_at_gauss(&self, f: &KernelTable, i: usize, m: usize) -> [f64; 3] {
        let t = self.grid.nodes();
        let u = self.grid.gauss3(m);
        if m >= 1 || i >= 3 {
            let b = m.saturating_sub(1);
            let nodes = [t[b], t[b + 1], t[b + 2]];
            let v = [f.get(i, b), f.get(i, b + 1), f.get(i, b + 2)];
            u.map(|x| {
                let l = lagrange3(nodes, x);
                l[0] * v[0] + l[1] * v[1] + l[2] * v[2]
            })
        } else {
            let (v0, v1) = (f.get(i, 0), f.get(i, 1));
            u.map(|x| v0 + (v1 - v0) * (x - t[0]) / (t[1] - t[0]))
        }
    }

    /// `∫_0^{t_i} T(t_i, u) g(u) du` for every `i` (index 0 holds 0). The
    /// last cell uses the band profile of column `i - 1`.
    fn row_integrals<G: Fn(f64) -> f64 + Sync>(&self, f: &KernelTable, g: G) -> Vec<f64> {
        let m_total = self.grid.cells();
        let mut out = vec![0.0; m_total + 1];
        out[1..].par_iter_mut().enumerate().for_each(|(idx, o)| {
            let i = idx + 1;
            let mut acc = 0.0;
            for m in 0..i.saturating_sub(1) {
                let v = self.row_at_gauss(f, i, m);
                let u = self.grid.gauss3(m);
                let h = self.grid.width(m);
                for p in 0..3 {
                    acc += GAUSS3.weights[p] * h * g(u[p]) * v[p];
                }
            }
            let prof = self.band(i - 1).profile(&f.cols[i - 1].band);
            let u = self.grid.gauss3(i - 1);
            for p in 0..3 {
                acc += g(u[p]) * prof[p];
            }
            *o = acc;
        });
        out
    }

    fn term_norm(&self, f: &KernelTable) -> f64 {
        self.row_integrals(f, |_| 1.0)
            .iter()
            .fold(0.0, |a: f64, v| a.max(v.abs()))
    }

    /// `max_i ∫_{t_{i-1}}^{t_i} K(t_i, u) du`, with its location.
    fn one_cell_sup(&self) -> (f64, f64) {
        let t = self.grid.nodes();
        let k = self.kernel;
        let one = |i: usize| {
            let ti = t[i];
            let (pts, tail) = singular_rule(t[i - 1], ti, true, &[], |u| k.eval(ti, u));
            pts.iter().map(|p| p.1).sum::<f64>() + tail
        };
        let m_total = self.grid.cells();
        if uniform_convolution(k, &self.grid) {
            return (one(m_total), t[m_total]);
        }
        (1..=m_total)
            .map(|i| (one(i), t[i]))
            .fold((f64::NEG_INFINITY, 0.0), |a, b| if b.0 > a.0 { b } else { a })
    }
}

/// The kernel as a table on `grid` (the first series term `R_1 = K`).
pub fn tabulate(k: &Kernel, grid: &TriGrid) -> Result<KernelTable, ResolventError> {
    Operator::new(k, grid)?.initial()
}

/// `(left * right)(t_i, s_j) = ∫_{s_j}^{t_i} left(t_i, u) right(u, s_j) du`
/// for every grid cell.
pub fn convolve(left: &Kernel, right: &KernelTable, grid: &TriGrid) -> Result<KernelTable, ResolventError> {
    if right.grid() != grid {
        return Err(ResolventError::GridMismatch);
    }
    Ok(Operator::new(left, grid)?.apply(right))
}

/// The convolution powers `R_1 = K, R_{n+1} = K * R_n` for `n < count`.
pub fn kernel_powers(k: &Kernel, grid: &TriGrid, count: usize) -> Result<Vec<KernelTable>, ResolventError> {
    let op = Operator::new(k, grid)?;
    let mut out = Vec::with_capacity(count);
    if count == 0 {
        return Ok(out);
    }
    out.push(op.initial()?);
    while out.len() < count {
        let next = op.apply(out.last().expect("nonempty"));
        out.push(next);
    }
    Ok(out)
}

/// Sums `R_n` until the term norm is below `tol` after three consecutive
/// decreases (or is exactly zero).
pub fn resolvent_sum(k: &Kernel, grid: &TriGrid, tol: f64, max_terms: usize) -> Result<ResolventTable, ResolventError> {
    if !(tol > 0.0 && tol.is_finite()) {
        return Err(ResolventError::InvalidArgument(format!("tol must be positive, got {tol}")));
    }
    if max_terms < 2 {
        return Err(ResolventError::InvalidArgument("max_terms must be at least 2".into()));
    }
    let op = Operator::new(k, grid)?;
    let (sup, at) = op.one_cell_sup();
    if !(sup < 1.0) {
        return Err(ResolventError::Smallness { value: sup, t: at });
    }
    let mut term = op.initial()?;
    let mut sum = term.clone();
    let mut norms = vec![op.term_norm(&term)];
    loop {
        let n = norms.len();
        let last = norms[n - 1];
        if !last.is_finite() || !term.all_finite() {
            return Err(ResolventError::Divergent {
                terms: n,
                last_norm: last,
            });
        }
        let decreasing = n >= 4 && (n - 3..n).all(|q| norms[q] < norms[q - 1]);
        if last == 0.0 || (last < tol && decreasing) {
            break;
        }
        if n >= max_terms {
            return Err(ResolventError::Divergent {
                terms: n,
                last_norm: last,
            });
        }
        term = op.apply(&term);
        sum.add_assign(&term);
        norms.push(op.term_norm(&term));
    }
    let n = norms.len();
    let last = norms[n - 1];
    let tail_norm = if last == 0.0 {
        0.0
    } else {
        let ratio = norms[n - 1] / norms[n - 2];
        if ratio < 1.0 {
            last / (1.0 - ratio)
        } else {
            f64::INFINITY
        }
    };
    Ok(ResolventTable {
        table: sum,
        terms_used: n,
        tail_norm,
        term_norms: norms,
    })
}

/// Residuals of `R - K = K*R` and `R - K = R*K` on the grid of `r`.
pub fn verify_resolvent_identity(k: &Kernel, r: &ResolventTable) -> Result<IdentityResiduals, ResolventError> {
    let grid = r.grid();
    let op = Operator::new(k, grid)?;
    let kt = op.initial()?;
    let kr = op.apply(&r.table);
    let m_total = grid.cells();
    let mut left: f64 = 0.0;
    for j in 0..m_total {
        for (idx, ((rv, kv), krv)) in r.table.cols[j]
            .vals
            .iter()
            .zip(&kt.cols[j].vals)
            .zip(&kr.cols[j].vals)
            .enumerate()
        {
            let _ = idx;
            left = left.max((rv - kv - krv).abs());
        }
    }
    let rk = right_convolution(&op, &r.table)?;
    let mut right: f64 = 0.0;
    for i in 1..=m_total {
        for j in 0..i {
            right = right.max((r.get(i, j) - kt.get(i, j) - rk[i][j]).abs());
        }
    }
    Ok(IdentityResiduals { left, right })
}

/// `(T * K)(t_i, s_j) = ∫_{s_j}^{t_i} T(t_i, u) K(u, s_j) du`, row by row.
fn right_convolution(op: &Operator<'_>, f: &KernelTable) -> Result<Vec<Vec<f64>>, ResolventError> {
    let grid = &op.grid;
    let k = op.kernel;
    let t = grid.nodes();
    let m_total = grid.cells();
    let conv = uniform_convolution(k, grid);

    // First-cell moments of K(·, s_j) against the row interpolation basis.
    let first_moments = |j: usize, linear: bool| -> [f64; 3] {
        let (a, b) = (t[j], t[j + 1]);
        let (pts, tail) = singular_rule(a, b, false, &[], |u| k.eval(u, a));
        let basis = |u: f64| -> [f64; 3] {
            if linear {
                let x = (u - a) / (b - a);
                [1.0 - x, x, 0.0]
            } else {
                lagrange3(grid.triple_nodes(j), u)
            }
        };
        let mut mom = [0.0; 3];
        for (u, wk) in pts {
            let l = basis(u);
            for q in 0..3 {
                mom[q] += wk * l[q];
            }
        }
        let l = basis(a);
        for q in 0..3 {
            mom[q] += tail * l[q];
        }
        mom
    };
    let e0: Vec<[f64; 3]> = if conv && m_total >= 2 {
        let e = first_moments(1, false);
        (0..m_total).map(|j| if j == 0 { first_moments(0, false) } else { e }).collect()
    } else {
        (0..m_total).into_par_iter().map(|j| first_moments(j, false)).collect()
    };
    let e0_lin = first_moments(0, true);

    // K(u, s_j) at the Gauss-3 nodes of cells m > j, weights folded in.
    let kt_row = |j: usize| -> Vec<[f64; 3]> {
        (j + 1..m_total)
            .map(|m| {
                let h = grid.width(m);
                let u = grid.gauss3(m);
                std::array::from_fn(|p| k.eval(u[p], t[j]) * GAUSS3.weights[p] * h)
            })
            .collect()
    };
    let kt: Vec<Vec<[f64; 3]>> = if conv {
        let full = kt_row(0);
        (0..m_total).map(|j| full[..m_total - 1 - j].to_vec()).collect()
    } else {
        (0..m_total).into_par_iter().map(kt_row).collect()
    };
    if kt.iter().flatten().flatten().any(|v| !v.is_finite()) || e0.iter().flatten().any(|v| !v.is_finite()) {
        return Err(ResolventError::NonFinite { t: t[1], s: 0.0 });
    }

    let rows: Vec<Vec<f64>> = (0..=m_total)
        .into_par_iter()
        .map(|i| {
            let mut out = vec![0.0; i];
            if i == 0 {
                return out;
            }
            let gauss_vals: Vec<[f64; 3]> = (0..i.saturating_sub(1)).map(|m| op.row_at_gauss(f, i, m)).collect();
            let last = i - 1;
            let prof = op.band(last).profile(&f.cols[last].band);
            out[last] = op.band(last).diagonal(&f.cols[last].band);
            for (j, o) in out.iter_mut().enumerate().take(last) {
                let ktj = &kt[j];
                let first = if j >= 1 || i >= 3 {
                    let b = j.saturating_sub(1);
                    let e = e0[j];
                    e[0] * f.get(i, b) + e[1] * f.get(i, b + 1) + e[2] * f.get(i, b + 2)
                } else {
                    e0_lin[0] * f.get(i, 0) + e0_lin[1] * f.get(i, 1)
                };
                let mut mid = 0.0;
                for m in j + 1..last {
                    let w = ktj[m - j - 1];
                    let v = gauss_vals[m];
                    mid += w[0] * v[0] + w[1] * v[1] + w[2] * v[2];
                }
                let w = ktj[last - j - 1];
                let h = grid.width(last);
                let tail = (0..3).map(|p| w[p] / (GAUSS3.weights[p] * h) * prof[p]).sum::<f64>();
                *o = first + mid + tail;
            }
            out
        })
        .collect();
    Ok(rows)
}

/// `g(t_i) + ∫_0^{t_i} R(t_i, s) g(s) ds` at every grid node.
pub fn gronwall_bound<G: Fn(f64) -> f64 + Sync>(r: &ResolventTable, g: G) -> Result<Vec<f64>, ResolventError> {
    let grid = r.grid();
    for m in 0..grid.cells() {
        for u in grid.gauss3(m).into_iter().chain([grid.nodes()[m], grid.nodes()[m + 1]]) {
            let v = g(u);
            if !(v >= 0.0) {
                return Err(ResolventError::NegativeWeight { t: u, value: v });
            }
        }
    }
    // The row rule only needs the band layout, which does not depend on the kernel.
    let zero = constant_kernel(0.0)
        .and_then(|z| z.with_horizon(grid.horizon()))
        .map_err(|e| ResolventError::InvalidArgument(e.to_string()))?;
    let op = Operator::new(&zero, grid)?;
    let integrals = op.row_integrals(&r.table, &g);
    Ok(grid
        .nodes()
        .iter()
        .zip(integrals)
        .map(|(&t, v)| g(t) + v)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::power_kernel;

    #[test]
    fn grid_validation() {
        assert!(TriGrid::from_nodes(vec![0.0]).is_err());
        assert!(TriGrid::from_nodes(vec![0.1, 0.5]).is_err());
        assert!(TriGrid::from_nodes(vec![0.0, 0.5, 0.5]).is_err());
        let g = TriGrid::dyadic(3, 1.0).unwrap();
        assert_eq!(g.cells(), 8);
        assert!(g.is_uniform());
        assert!(!TriGrid::from_nodes(vec![0.0, 0.1, 0.5, 1.0]).unwrap().is_uniform());
    }

    #[test]
    fn singular_rule_integrates_power() {
        let (pts, tail) = singular_rule(0.0, 1.0, true, &[0.3], |u| (1.0 - u).powf(-0.25));
        let v: f64 = pts.iter().map(|p| p.1).sum::<f64>() + tail;
        assert!((v - 4.0 / 3.0).abs() < 1e-7, "{v}");
    }

    #[test]
    fn constant_one_convolution() {
        let g = TriGrid::dyadic(4, 1.0).unwrap();
        let one = constant_kernel(1.0).unwrap();
        let t1 = tabulate(&one, &g).unwrap();
        let c = convolve(&one, &t1, &g).unwrap();
        assert!((c.get(16, 0) - 1.0).abs() < 1e-12);
        for (t, s, v) in c.cells() {
            assert!((v - (t - s)).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_annihilates() {
        let g = TriGrid::dyadic(4, 1.0).unwrap();
        let zero = constant_kernel(0.0).unwrap();
        let p = tabulate(&power_kernel(0.25).unwrap(), &g).unwrap();
        assert_eq!(convolve(&zero, &p, &g).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn grid_mismatch_rejected() {
        let g = TriGrid::dyadic(4, 1.0).unwrap();
        let g2 = TriGrid::dyadic(5, 1.0).unwrap();
        let one = constant_kernel(1.0).unwrap();
        let t1 = tabulate(&one, &g).unwrap();
        assert_eq!(convolve(&one, &t1, &g2), Err(ResolventError::GridMismatch));
    }
}
