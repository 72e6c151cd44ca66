//! Convex quadratic programs of the form
//!
//! ```text
//!     minimize     xᵀ Q x + cᵀ x
//!     subject to   aᵀ x = b            (optional)
//!                  G x ≤ h
//!                  l ≤ x ≤ u
//! ```
//!
//! with `Q` symmetric positive semidefinite. [`solve_qp`] runs a Mehrotra
//! predictor-corrector interior-point method and reports a KKT residual
//! computed from the returned point, so `Optimal` is a checked claim rather
//! than a solver flag. [`brute_force_qp`] enumerates a grid and is only
//! meant as a test oracle for tiny instances.
//!
//! Variables whose row of `Q` is empty and that appear in at most one row of
//! `G` are eliminated from the Newton system analytically, which keeps the
//! pairwise ranking programs (one slack per constraint row) at the cost of a
//! dense solve over the voter weights only.

use nalgebra::DMatrix;
use thiserror::Error;

use crate::linalg::{cholesky_in_place, cholesky_solve, dot, is_psd};

/// Default KKT tolerance for [`solve_qp`].
pub const DEFAULT_TOL: f64 = 1e-8;
/// Default iteration cap for [`solve_qp`].
pub const DEFAULT_MAX_ITER: usize = 100_000;
/// Relative tolerance of the positive-semidefiniteness check on `Q`.
pub const PSD_REL_TOL: f64 = 1e-9;

const STALL_ITERATIONS: usize = 30;
const STEP_FRACTION: f64 = 0.995;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QpError {
    #[error("invalid problem: {0}")]
    InvalidProblem(String),
    #[error("brute-force oracle supports at most 3 variables, got {0}")]
    OracleTooLarge(usize),
}

/// Row-compressed sparse matrix. Explicit zeros are dropped on insertion.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseRows {
    ncols: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl SparseRows {
    pub fn new(ncols: usize) -> Self {
        SparseRows {
            ncols,
            row_ptr: vec![0],
            cols: Vec::new(),
            vals: Vec::new(),
        }
    }

    /// `nrows` empty rows.
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        SparseRows {
            ncols,
            row_ptr: vec![0; nrows + 1],
            cols: Vec::new(),
            vals: Vec::new(),
        }
    }

    pub fn from_dense(m: &DMatrix<f64>) -> Self {
        let mut out = SparseRows::new(m.ncols());
        for i in 0..m.nrows() {
            out.push_row((0..m.ncols()).map(|j| (j, m[(i, j)])));
        }
        out
    }

    /// Appends a row. Column indices are checked by [`QpProblem`] validation.
    pub fn push_row<I: IntoIterator<Item = (usize, f64)>>(&mut self, entries: I) {
        for (c, v) in entries {
            if v != 0.0 {
                self.cols.push(c);
                self.vals.push(v);
            }
        }
        self.row_ptr.push(self.cols.len());
    }

    pub fn nrows(&self) -> usize {
        self.row_ptr.len() - 1
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.row_ptr[r]..self.row_ptr[r + 1];
        self.cols[range.clone()]
            .iter()
            .copied()
            .zip(self.vals[range].iter().copied())
    }

    pub fn row_dot(&self, r: usize, x: &[f64]) -> f64 {
        self.row(r).map(|(c, v)| v * x[c]).sum()
    }

    pub fn mul(&self, x: &[f64]) -> Vec<f64> {
        (0..self.nrows()).map(|r| self.row_dot(r, x)).collect()
    }

    /// `out += selfᵀ · y`
    pub fn mul_transpose_add(&self, y: &[f64], out: &mut [f64]) {
        for (r, &yr) in y.iter().enumerate() {
            if yr != 0.0 {
                for (c, v) in self.row(r) {
                    out[c] += v * yr;
                }
            }
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.nrows(), self.ncols);
        for r in 0..self.nrows() {
            for (c, v) in self.row(r) {
                m[(r, c)] += v;
            }
        }
        m
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearEquality {
    pub row: Vec<f64>,
    pub rhs: f64,
}

/// A validated convex QP. Fields are read-only once constructed.
#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    quad: SparseRows,
    lin: Vec<f64>,
    equality: Option<LinearEquality>,
    ineq_rows: SparseRows,
    ineq_rhs: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl QpProblem {
    /// Box-constrained problem; checks dimensions, symmetry and PSD-ness of `quad`.
    pub fn new(
        quad: SparseRows,
        lin: Vec<f64>,
        lower: Vec<f64>,
        upper: Vec<f64>,
    ) -> Result<Self, QpError> {
        let v = lin.len();
        let p = QpProblem {
            quad,
            lin,
            equality: None,
            ineq_rows: SparseRows::new(v),
            ineq_rhs: Vec::new(),
            lower,
            upper,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn from_dense(
        quad: &DMatrix<f64>,
        lin: Vec<f64>,
        lower: Vec<f64>,
        upper: Vec<f64>,
    ) -> Result<Self, QpError> {
        Self::new(SparseRows::from_dense(quad), lin, lower, upper)
    }

    pub fn with_equality(mut self, row: Vec<f64>, rhs: f64) -> Result<Self, QpError> {
        self.equality = Some(LinearEquality { row, rhs });
        self.validate()?;
        Ok(self)
    }

    pub fn with_inequalities(mut self, rows: SparseRows, rhs: Vec<f64>) -> Result<Self, QpError> {
        self.ineq_rows = rows;
        self.ineq_rhs = rhs;
        self.validate()?;
        Ok(self)
    }

    pub fn num_vars(&self) -> usize {
        self.lin.len()
    }
    pub fn quad(&self) -> &SparseRows {
        &self.quad
    }
    pub fn lin(&self) -> &[f64] {
        &self.lin
    }
    pub fn equality(&self) -> Option<&LinearEquality> {
        self.equality.as_ref()
    }
    pub fn ineq_rows(&self) -> &SparseRows {
        &self.ineq_rows
    }
    pub fn ineq_rhs(&self) -> &[f64] {
        &self.ineq_rhs
    }
    pub fn lower(&self) -> &[f64] {
        &self.lower
    }
    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        let qx = self.quad.mul(x);
        dot(x, &qx) + dot(&self.lin, x)
    }

    fn validate(&self) -> Result<(), QpError> {
        let v = self.lin.len();
        let bad = |msg: String| Err(QpError::InvalidProblem(msg));
        if self.quad.nrows() != v || self.quad.ncols() != v {
            return bad(format!(
                "quad is {}x{}, expected {v}x{v}",
                self.quad.nrows(),
                self.quad.ncols()
            ));
        }
        if self.lower.len() != v || self.upper.len() != v {
            return bad("bound vectors do not match the variable count".into());
        }
        if self.ineq_rows.ncols() != v || self.ineq_rows.nrows() != self.ineq_rhs.len() {
            return bad("inequality rows and right-hand side are inconsistent".into());
        }
        if self.quad.cols.iter().chain(&self.ineq_rows.cols).any(|&c| c >= v) {
            return bad("sparse column index out of range".into());
        }
        let finite = |xs: &[f64]| xs.iter().all(|x| x.is_finite());
        if !finite(&self.quad.vals) || !finite(&self.lin) || !finite(&self.ineq_rows.vals) {
            return bad("non-finite coefficient".into());
        }
        if self.ineq_rhs.iter().any(|h| h.is_nan()) {
            return bad("NaN inequality bound".into());
        }
        if let Some(eq) = &self.equality {
            if eq.row.len() != v {
                return bad("equality row length mismatch".into());
            }
            if !finite(&eq.row) || !eq.rhs.is_finite() {
                return bad("non-finite equality data".into());
            }
        }
        for j in 0..v {
            let (l, u) = (self.lower[j], self.upper[j]);
            if l.is_nan() || u.is_nan() || l > u || l == f64::INFINITY || u == f64::NEG_INFINITY {
                return bad(format!("invalid bounds [{l}, {u}] on variable {j}"));
            }
        }
        let (core, _) = quad_core(&self.quad)?;
        if !core.is_empty() && !is_psd(&dense_core(&self.quad, &core), PSD_REL_TOL) {
            return bad("quadratic term is not positive semidefinite".into());
        }
        Ok(())
    }
}

/// Indices of variables with a nonempty `Q` row, and the dense-position map.
fn quad_core(quad: &SparseRows) -> Result<(Vec<usize>, Vec<Option<usize>>), QpError> {
    let v = quad.nrows();
    let core: Vec<usize> = (0..v)
        .filter(|&j| quad.row_ptr[j + 1] > quad.row_ptr[j])
        .collect();
    let mut pos = vec![None; v];
    for (p, &j) in core.iter().enumerate() {
        pos[j] = Some(p);
    }
    let scale = quad.vals.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let dense = {
        let mut d: DMatrix<f64> = DMatrix::zeros(core.len(), core.len());
        for (p, &j) in core.iter().enumerate() {
            for (c, val) in quad.row(j) {
                match pos[c] {
                    Some(q) => d[(p, q)] += val,
                    None => {
                        return Err(QpError::InvalidProblem(
                            "quadratic term is not symmetric".into(),
                        ))
                    }
                }
            }
        }
        d
    };
    for i in 0..core.len() {
        for k in 0..i {
            if (dense[(i, k)] - dense[(k, i)]).abs() > 1e-12 * (1.0 + scale) {
                return Err(QpError::InvalidProblem(
                    "quadratic term is not symmetric".into(),
                ));
            }
        }
    }
    Ok((core, pos))
}

fn dense_core(quad: &SparseRows, core: &[usize]) -> DMatrix<f64> {
    let mut pos = vec![usize::MAX; quad.nrows()];
    for (p, &j) in core.iter().enumerate() {
        pos[j] = p;
    }
    let mut d = DMatrix::zeros(core.len(), core.len());
    for (p, &j) in core.iter().enumerate() {
        for (c, val) in quad.row(j) {
            d[(p, pos[c])] += val;
        }
    }
    d
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Optimal,
    Infeasible,
    MaxIterations,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    pub status: QpStatus,
    /// Max of stationarity, primal feasibility and complementarity residuals.
    pub kkt_residual: f64,
    pub iterations: usize,
    pub eq_multiplier: Option<f64>,
    pub ineq_multipliers: Vec<f64>,
}

/// KKT residual of `(x, y, z)`; bound multipliers are reconstructed from the
/// sign of the reduced gradient, so only the equality and row multipliers
/// need to be supplied.
pub fn kkt_residual(p: &QpProblem, x: &[f64], eq_multiplier: Option<f64>, z: &[f64]) -> f64 {
    let v = p.num_vars();
    let mut grad = p.quad.mul(x);
    for g in grad.iter_mut() {
        *g *= 2.0;
    }
    for (g, c) in grad.iter_mut().zip(&p.lin) {
        *g += c;
    }
    let mut worst = 0.0f64;
    if let Some(eq) = &p.equality {
        let y = eq_multiplier.unwrap_or(0.0);
        for (g, a) in grad.iter_mut().zip(&eq.row) {
            *g += a * y;
        }
        worst = worst.max((dot(&eq.row, x) - eq.rhs).abs());
    }
    let z: Vec<f64> = z.iter().map(|zi| zi.max(0.0)).collect();
    p.ineq_rows.mul_transpose_add(&z, &mut grad);
    for r in 0..p.ineq_rows.nrows() {
        let gap = p.ineq_rhs[r] - p.ineq_rows.row_dot(r, x);
        worst = worst.max((-gap).max(0.0));
        if p.ineq_rhs[r].is_finite() {
            worst = worst.max(z[r] * gap.abs());
        }
    }
    for j in 0..v {
        let (l, u, xj, g) = (p.lower[j], p.upper[j], x[j], grad[j]);
        worst = worst.max((l - xj).max(0.0)).max((xj - u).max(0.0));
        let side = if g > 0.0 {
            if l.is_finite() {
                g * (xj - l).abs()
            } else {
                g
            }
        } else if g < 0.0 {
            if u.is_finite() {
                -g * (u - xj).abs()
            } else {
                -g
            }
        } else {
            0.0
        };
        worst = worst.max(side);
    }
    worst
}

fn range_over_box(row: &[f64], lower: &[f64], upper: &[f64]) -> (f64, f64) {
    let (mut lo, mut hi) = (0.0, 0.0);
    for ((&a, &l), &u) in row.iter().zip(lower).zip(upper) {
        if a > 0.0 {
            lo += a * l;
            hi += a * u;
        } else if a < 0.0 {
            lo += a * u;
            hi += a * l;
        }
    }
    (lo, hi)
}

fn infeasible(p: &QpProblem) -> QpSolution {
    let x: Vec<f64> = (0..p.num_vars())
        .map(|j| 0.0f64.clamp(p.lower[j], p.upper[j]))
        .collect();
    QpSolution {
        objective: p.objective(&x),
        x,
        status: QpStatus::Infeasible,
        kkt_residual: f64::INFINITY,
        iterations: 0,
        eq_multiplier: None,
        ineq_multipliers: vec![0.0; p.ineq_rows.nrows()],
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Face {
    Lower,
    Upper,
}

/// Solves a convex QP to KKT tolerance `tol`.
///
/// An equality whose right-hand side lies outside the range of `aᵀx` over
/// the box is reported as `Infeasible` without iterating. When it sits on the
/// edge of that range the feasible set is a face of the box; the variables
/// spanning the equality are fixed there and the rest is solved directly.
pub fn solve_qp(p: &QpProblem, tol: f64, max_iter: usize) -> Result<QpSolution, QpError> {
    if !(tol > 0.0) {
        return Err(QpError::InvalidProblem(format!("tolerance must be positive, got {tol}")));
    }
    let v = p.num_vars();
    let mut fixed: Vec<Option<f64>> = (0..v)
        .map(|j| (p.lower[j] == p.upper[j]).then_some(p.lower[j]))
        .collect();
    let mut face = None;
    if let Some(eq) = &p.equality {
        let (lo, hi) = range_over_box(&eq.row, &p.lower, &p.upper);
        let slack = 1e-12 * (1.0 + eq.rhs.abs() + lo.abs().min(1e300) + hi.abs().min(1e300));
        if eq.rhs < lo - slack || eq.rhs > hi + slack {
            return Ok(infeasible(p));
        }
        let at_lo = (eq.rhs - lo).abs() <= 0.1 * tol;
        let at_hi = (eq.rhs - hi).abs() <= 0.1 * tol;
        if at_lo || at_hi {
            let which = if at_lo { Face::Lower } else { Face::Upper };
            for j in 0..v {
                let a = eq.row[j];
                if a != 0.0 {
                    let to_lower = (a > 0.0) == (which == Face::Lower);
                    fixed[j] = Some(if to_lower { p.lower[j] } else { p.upper[j] });
                }
            }
            face = Some(which);
        }
    }

    let reduced = match Reduced::build(p, &fixed, face.is_some())? {
        Some(r) => r,
        None => return Ok(infeasible(p)),
    };
    let inner = InteriorPoint::new(&reduced.problem)?.run(tol, max_iter);

    let mut x = vec![0.0; v];
    for (j, f) in fixed.iter().enumerate() {
        if let Some(val) = f {
            x[j] = *val;
        }
    }
    for (k, &j) in reduced.free.iter().enumerate() {
        x[j] = inner.x[k].clamp(p.lower[j], p.upper[j]);
    }
    let mut z = vec![0.0; p.ineq_rows.nrows()];
    for (k, &r) in reduced.rows.iter().enumerate() {
        z[r] = inner.z[k];
    }
    let y = match (face, &p.equality) {
        (Some(side), Some(eq)) => Some(face_multiplier(p, &x, &z, eq, side)),
        (None, Some(_)) if reduced.problem.equality.is_some() => inner.y,
        (None, Some(_)) => Some(0.0),
        _ => None,
    };
    let mut kkt = kkt_residual(p, &x, y, &z);
    let mut polished = x.clone();
    polish_isolated(p, &mut polished);
    let polished_kkt = kkt_residual(p, &polished, y, &z);
    let obj = p.objective(&x);
    if polished_kkt <= kkt.max(tol) && p.objective(&polished) <= obj + tol * (1.0 + obj.abs()) {
        x = polished;
        kkt = polished_kkt;
    }
    let status = if kkt <= tol {
        QpStatus::Optimal
    } else {
        QpStatus::MaxIterations
    };
    Ok(QpSolution {
        objective: p.objective(&x),
        x,
        status,
        kkt_residual: kkt,
        iterations: inner.iterations,
        eq_multiplier: y,
        ineq_multipliers: z,
    })
}

/// Moves each variable with no quadratic term and no equality coefficient,
/// appearing alone in at most one inequality row, to the cheapest end of its
/// feasible interval given the rest of `x`. Interior point iterates leave
/// such variables loose when their cost is tiny.
fn polish_isolated(p: &QpProblem, x: &mut [f64]) {
    let v = p.num_vars();
    let mut candidate = vec![true; v];
    for r in 0..v {
        for (c, _) in p.quad.row(r) {
            candidate[r] = false;
            candidate[c] = false;
        }
    }
    if let Some(eq) = &p.equality {
        for (j, a) in eq.row.iter().enumerate() {
            if *a != 0.0 {
                candidate[j] = false;
            }
        }
    }
    let mut rows_of: Vec<Vec<(usize, f64)>> = vec![Vec::new(); v];
    for r in 0..p.ineq_rows.nrows() {
        for (c, a) in p.ineq_rows.row(r) {
            rows_of[c].push((r, a));
        }
    }
    let mut per_row = vec![0usize; p.ineq_rows.nrows()];
    for j in 0..v {
        candidate[j] &= rows_of[j].len() <= 1;
        if candidate[j] {
            if let Some(&(r, _)) = rows_of[j].first() {
                per_row[r] += 1;
            }
        }
    }
    for j in 0..v {
        if !candidate[j] || rows_of[j].first().is_some_and(|&(r, _)| per_row[r] > 1) {
            continue;
        }
        let (mut lo, mut hi) = (p.lower[j], p.upper[j]);
        if let Some(&(r, a)) = rows_of[j].first() {
            let rest = p.ineq_rows.row_dot(r, x) - a * x[j];
            let limit = (p.ineq_rhs[r] - rest) / a;
            if a > 0.0 {
                hi = hi.min(limit);
            } else {
                lo = lo.max(limit);
            }
        }
        if lo > hi {
            continue;
        }
        let target = match p.lin[j].partial_cmp(&0.0) {
            Some(std::cmp::Ordering::Greater) => lo,
            Some(std::cmp::Ordering::Less) => hi,
            _ => x[j].clamp(lo, hi),
        };
        if target.is_finite() {
            x[j] = target;
        }
    }
}

/// Equality multiplier making every face-fixed variable's bound multiplier
/// nonnegative.
fn face_multiplier(p: &QpProblem, x: &[f64], z: &[f64], eq: &LinearEquality, side: Face) -> f64 {
    let mut grad = p.quad.mul(x);
    for (g, c) in grad.iter_mut().zip(&p.lin) {
        *g = 2.0 * *g + c;
    }
    p.ineq_rows.mul_transpose_add(z, &mut grad);
    let ratios = eq
        .row
        .iter()
        .zip(&grad)
        .filter(|(a, _)| **a != 0.0)
        .map(|(a, g)| -g / a);
    match side {
        Face::Lower => ratios.fold(f64::NEG_INFINITY, f64::max),
        Face::Upper => ratios.fold(f64::INFINITY, f64::min),
    }
}

/// The problem restricted to its non-fixed variables.
struct Reduced {
    problem: QpProblem,
    free: Vec<usize>,
    rows: Vec<usize>,
}

impl Reduced {
    fn build(p: &QpProblem, fixed: &[Option<f64>], drop_eq: bool) -> Result<Option<Self>, QpError> {
        let v = p.num_vars();
        let free: Vec<usize> = (0..v).filter(|&j| fixed[j].is_none()).collect();
        let mut new_index = vec![usize::MAX; v];
        for (k, &j) in free.iter().enumerate() {
            new_index[j] = k;
        }
        let xfix: Vec<f64> = fixed.iter().map(|f| f.unwrap_or(0.0)).collect();

        let mut quad = SparseRows::new(free.len());
        let mut lin: Vec<f64> = free.iter().map(|&j| p.lin[j]).collect();
        for (k, &j) in free.iter().enumerate() {
            let mut entries = Vec::new();
            for (c, val) in p.quad.row(j) {
                if fixed[c].is_some() {
                    lin[k] += 2.0 * val * xfix[c];
                } else {
                    entries.push((new_index[c], val));
                }
            }
            quad.push_row(entries);
        }

        let mut rows = Vec::new();
        let mut g = SparseRows::new(free.len());
        let mut h = Vec::new();
        for r in 0..p.ineq_rows.nrows() {
            let mut rhs = p.ineq_rhs[r];
            let mut entries = Vec::new();
            for (c, val) in p.ineq_rows.row(r) {
                if fixed[c].is_some() {
                    rhs -= val * xfix[c];
                } else {
                    entries.push((new_index[c], val));
                }
            }
            if entries.is_empty() {
                if rhs < -1e-12 * (1.0 + p.ineq_rhs[r].abs()) {
                    return Ok(None);
                }
                continue;
            }
            g.push_row(entries);
            h.push(rhs);
            rows.push(r);
        }

        let equality = match &p.equality {
            Some(eq) if !drop_eq => {
                let row: Vec<f64> = free.iter().map(|&j| eq.row[j]).collect();
                let rhs = eq.rhs
                    - (0..v)
                        .filter(|&j| fixed[j].is_some())
                        .map(|j| eq.row[j] * xfix[j])
                        .sum::<f64>();
                if row.iter().all(|a| *a == 0.0) {
                    None
                } else {
                    Some(LinearEquality { row, rhs })
                }
            }
            _ => None,
        };

        let problem = QpProblem {
            quad,
            lin,
            equality,
            ineq_rows: g,
            ineq_rhs: h,
            lower: free.iter().map(|&j| p.lower[j]).collect(),
            upper: free.iter().map(|&j| p.upper[j]).collect(),
        };
        Ok(Some(Reduced { problem, free, rows }))
    }
}

struct InnerResult {
    x: Vec<f64>,
    y: Option<f64>,
    z: Vec<f64>,
    iterations: usize,
}

/// Row of `G` split into its dense-core part and its (at most one) separable entry.
struct RowSplit {
    core: Vec<(usize, f64)>,
    sep: Option<(usize, f64)>,
}

struct InteriorPoint<'a> {
    p: &'a QpProblem,
    /// `2Q` restricted to the core variables.
    hess_core: DMatrix<f64>,
    core: Vec<usize>,
    sep: Vec<usize>,
    sep_rows: Vec<Vec<(usize, f64)>>,
    rows: Vec<RowSplit>,
    reg: f64,
}

struct State {
    x: Vec<f64>,
    y: f64,
    s: Vec<f64>,
    z: Vec<f64>,
    tl: Vec<f64>,
    zl: Vec<f64>,
    tu: Vec<f64>,
    zu: Vec<f64>,
}

struct Residuals {
    dual: Vec<f64>,
    eq: f64,
    rows: Vec<f64>,
    low: Vec<f64>,
    up: Vec<f64>,
}

struct Direction {
    x: Vec<f64>,
    y: f64,
    s: Vec<f64>,
    z: Vec<f64>,
    tl: Vec<f64>,
    zl: Vec<f64>,
    tu: Vec<f64>,
    zu: Vec<f64>,
}

/// Factorization of the reduced Newton matrix `2Q + GᵀWG + D` for one iterate.
struct Factor {
    chol: DMatrix<f64>,
    w: Vec<f64>,
    d_sep: Vec<f64>,
    /// `H⁻¹a` when an equality is present.
    h_inv_a: Option<(Vec<f64>, f64)>,
}

impl<'a> InteriorPoint<'a> {
    fn new(p: &'a QpProblem) -> Result<Self, QpError> {
        let v = p.num_vars();
        let (mut core, _) = quad_core(&p.quad)?;
        let mut is_core = vec![false; v];
        for &j in &core {
            is_core[j] = true;
        }
        for r in 0..p.ineq_rows.nrows() {
            let mut seen = false;
            for (c, _) in p.ineq_rows.row(r) {
                if !is_core[c] {
                    if seen {
                        is_core[c] = true;
                        core.push(c);
                    }
                    seen = true;
                }
            }
        }
        core.sort_unstable();
        let mut pos = vec![usize::MAX; v];
        for (k, &j) in core.iter().enumerate() {
            pos[j] = k;
        }
        let sep: Vec<usize> = (0..v).filter(|&j| !is_core[j]).collect();
        let mut sep_rows = vec![Vec::new(); v];
        let mut rows = Vec::with_capacity(p.ineq_rows.nrows());
        for r in 0..p.ineq_rows.nrows() {
            let mut split = RowSplit {
                core: Vec::new(),
                sep: None,
            };
            for (c, val) in p.ineq_rows.row(r) {
                if is_core[c] {
                    split.core.push((pos[c], val));
                } else {
                    split.sep = Some((c, val));
                    sep_rows[c].push((r, val));
                }
            }
            rows.push(split);
        }
        let mut hess_core = dense_core(&p.quad, &core);
        hess_core *= 2.0;
        let diag_max = (0..core.len()).fold(0.0f64, |m, i| m.max(hess_core[(i, i)].abs()));
        Ok(InteriorPoint {
            p,
            hess_core,
            core,
            sep,
            sep_rows,
            rows,
            reg: 1e-14 * (1.0 + diag_max),
        })
    }

    fn initial_state(&self) -> State {
        let p = self.p;
        let x: Vec<f64> = (0..p.num_vars())
            .map(|j| {
                let (l, u) = (p.lower[j], p.upper[j]);
                match (l.is_finite(), u.is_finite()) {
                    (true, true) => 0.5 * (l + u),
                    (true, false) => l + 1.0,
                    (false, true) => u - 1.0,
                    (false, false) => 0.0,
                }
            })
            .collect();
        let gx = p.ineq_rows.mul(&x);
        let s: Vec<f64> = gx
            .iter()
            .zip(&p.ineq_rhs)
            .map(|(g, h)| {
                let gap = h - g;
                if gap > 1e-8 && gap.is_finite() {
                    gap
                } else {
                    1.0
                }
            })
            .collect();
        let gap_or_one = |d: f64| if d.is_finite() { d } else { 1.0 };
        State {
            tl: (0..x.len()).map(|j| gap_or_one(x[j] - p.lower[j])).collect(),
            tu: (0..x.len()).map(|j| gap_or_one(p.upper[j] - x[j])).collect(),
            zl: p.lower.iter().map(|l| if l.is_finite() { 1.0 } else { 0.0 }).collect(),
            zu: p.upper.iter().map(|u| if u.is_finite() { 1.0 } else { 0.0 }).collect(),
            z: vec![1.0; s.len()],
            s,
            x,
            y: 0.0,
        }
    }

    fn residuals(&self, st: &State) -> Residuals {
        let p = self.p;
        let mut dual = p.quad.mul(&st.x);
        for (d, c) in dual.iter_mut().zip(&p.lin) {
            *d = 2.0 * *d + c;
        }
        let mut eq = 0.0;
        if let Some(e) = &p.equality {
            for (d, a) in dual.iter_mut().zip(&e.row) {
                *d += a * st.y;
            }
            eq = dot(&e.row, &st.x) - e.rhs;
        }
        p.ineq_rows.mul_transpose_add(&st.z, &mut dual);
        let mut low = vec![0.0; st.x.len()];
        let mut up = vec![0.0; st.x.len()];
        for j in 0..st.x.len() {
            if p.lower[j].is_finite() {
                dual[j] -= st.zl[j];
                low[j] = st.x[j] - st.tl[j] - p.lower[j];
            }
            if p.upper[j].is_finite() {
                dual[j] += st.zu[j];
                up[j] = st.x[j] + st.tu[j] - p.upper[j];
            }
        }
        let gx = p.ineq_rows.mul(&st.x);
        let rows = gx
            .iter()
            .zip(&st.s)
            .zip(&p.ineq_rhs)
            .map(|((g, s), h)| g + s - h)
            .collect();
        Residuals {
            dual,
            eq,
            rows,
            low,
            up,
        }
    }

    fn bound_weights(&self, st: &State) -> Vec<f64> {
        let p = self.p;
        (0..st.x.len())
            .map(|j| {
                let mut d = 0.0;
                if p.lower[j].is_finite() {
                    d += st.zl[j] / st.tl[j];
                }
                if p.upper[j].is_finite() {
                    d += st.zu[j] / st.tu[j];
                }
                d
            })
            .collect()
    }

    fn factor(&self, st: &State) -> Factor {
        let bd = self.bound_weights(st);
        let w: Vec<f64> = st.z.iter().zip(&st.s).map(|(z, s)| z / s).collect();
        let mut d_sep = vec![0.0; st.x.len()];
        for &j in &self.sep {
            let mut d = bd[j] + self.reg;
            for &(r, val) in &self.sep_rows[j] {
                d += w[r] * val * val;
            }
            d_sep[j] = d;
        }
        let k = self.core.len();
        let mut s = self.hess_core.clone();
        for (pos, &j) in self.core.iter().enumerate() {
            s[(pos, pos)] += bd[j] + self.reg;
        }
        for (r, split) in self.rows.iter().enumerate() {
            let mut coef = w[r];
            if let Some((j, _)) = split.sep {
                if self.sep_rows[j].len() == 1 {
                    coef = w[r] * (bd[j] + self.reg) / d_sep[j];
                }
            }
            if coef == 0.0 {
                continue;
            }
            for &(a, va) in &split.core {
                for &(b, vb) in &split.core {
                    if b <= a {
                        s[(a, b)] += coef * va * vb;
                    }
                }
            }
        }
        for &j in &self.sep {
            if self.sep_rows[j].len() > 1 {
                let mut vj = vec![0.0; k];
                for &(r, val) in &self.sep_rows[j] {
                    for &(a, g) in &self.rows[r].core {
                        vj[a] += w[r] * val * g;
                    }
                }
                for a in 0..k {
                    for b in 0..=a {
                        s[(a, b)] -= vj[a] * vj[b] / d_sep[j];
                    }
                }
            }
        }
        let diag_max = (0..k).fold(0.0f64, |m, i| m.max(s[(i, i)].abs()));
        cholesky_in_place(&mut s, 1e-300f64.max(1e-30 * diag_max));
        let mut f = Factor {
            chol: s,
            w,
            d_sep,
            h_inv_a: None,
        };
        if let Some(eq) = &self.p.equality {
            let h_inv_a = self.solve(&f, &eq.row);
            let denom = dot(&eq.row, &h_inv_a);
            f.h_inv_a = Some((h_inv_a, denom));
        }
        f
    }

    /// Solves `H x = rhs` with the separable block eliminated.
    fn solve(&self, f: &Factor, rhs: &[f64]) -> Vec<f64> {
        let mut rc: Vec<f64> = self.core.iter().map(|&j| rhs[j]).collect();
        for &j in &self.sep {
            let t = rhs[j] / f.d_sep[j];
            for &(r, val) in &self.sep_rows[j] {
                let wv = f.w[r] * val * t;
                for &(a, g) in &self.rows[r].core {
                    rc[a] -= wv * g;
                }
            }
        }
        cholesky_solve(&f.chol, &mut rc);
        let mut x = vec![0.0; rhs.len()];
        for (a, &j) in self.core.iter().enumerate() {
            x[j] = rc[a];
        }
        for &j in &self.sep {
            let mut acc = rhs[j];
            for &(r, val) in &self.sep_rows[j] {
                let gx: f64 = self.rows[r].core.iter().map(|&(a, g)| g * rc[a]).sum();
                acc -= f.w[r] * val * gx;
            }
            x[j] = acc / f.d_sep[j];
        }
        x
    }

    fn direction(
        &self,
        f: &Factor,
        st: &State,
        res: &Residuals,
        r_sz: &[f64],
        r_lz: &[f64],
        r_uz: &[f64],
    ) -> Direction {
        let p = self.p;
        let v = st.x.len();
        let mut rhs: Vec<f64> = res.dual.iter().map(|d| -d).collect();
        let row_term: Vec<f64> = (0..st.s.len())
            .map(|r| -(r_sz[r] + st.z[r] * res.rows[r]) / st.s[r])
            .collect();
        p.ineq_rows.mul_transpose_add(&row_term, &mut rhs);
        for j in 0..v {
            if p.lower[j].is_finite() {
                rhs[j] += (r_lz[j] - st.zl[j] * res.low[j]) / st.tl[j];
            }
            if p.upper[j].is_finite() {
                rhs[j] -= (r_uz[j] + st.zu[j] * res.up[j]) / st.tu[j];
            }
        }
        let mut dx = self.solve(f, &rhs);
        let mut dy = 0.0;
        if let (Some((h_inv_a, denom)), Some(eq)) = (&f.h_inv_a, &p.equality) {
            dy = (dot(&eq.row, &dx) + res.eq) / denom;
            for (d, h) in dx.iter_mut().zip(h_inv_a) {
                *d -= dy * h;
            }
        }
        let gdx = p.ineq_rows.mul(&dx);
        let ds: Vec<f64> = (0..st.s.len()).map(|r| -res.rows[r] - gdx[r]).collect();
        let dz: Vec<f64> = (0..st.s.len())
            .map(|r| (r_sz[r] - st.z[r] * ds[r]) / st.s[r])
            .collect();
        let mut dtl = vec![0.0; v];
        let mut dzl = vec![0.0; v];
        let mut dtu = vec![0.0; v];
        let mut dzu = vec![0.0; v];
        for j in 0..v {
            if p.lower[j].is_finite() {
                dtl[j] = dx[j] + res.low[j];
                dzl[j] = (r_lz[j] - st.zl[j] * dtl[j]) / st.tl[j];
            }
            if p.upper[j].is_finite() {
                dtu[j] = -res.up[j] - dx[j];
                dzu[j] = (r_uz[j] - st.zu[j] * dtu[j]) / st.tu[j];
            }
        }
        Direction {
            x: dx,
            y: dy,
            s: ds,
            z: dz,
            tl: dtl,
            zl: dzl,
            tu: dtu,
            zu: dzu,
        }
    }

    fn max_step(&self, st: &State, d: &Direction) -> f64 {
        let p = self.p;
        let mut alpha = 1.0f64;
        let mut limit = |val: f64, step: f64| {
            if step < 0.0 {
                alpha = alpha.min(-val / step);
            }
        };
        for r in 0..st.s.len() {
            limit(st.s[r], d.s[r]);
            limit(st.z[r], d.z[r]);
        }
        for j in 0..st.x.len() {
            if p.lower[j].is_finite() {
                limit(st.tl[j], d.tl[j]);
                limit(st.zl[j], d.zl[j]);
            }
            if p.upper[j].is_finite() {
                limit(st.tu[j], d.tu[j]);
                limit(st.zu[j], d.zu[j]);
            }
        }
        alpha
    }

    fn complementarity(&self, st: &State, d: Option<(&Direction, f64)>) -> (f64, usize) {
        let p = self.p;
        let pair = |a: f64, da: f64, b: f64, db: f64| match d {
            Some((_, alpha)) => (a + alpha * da) * (b + alpha * db),
            None => a * b,
        };
        let zero = Direction {
            x: vec![],
            y: 0.0,
            s: vec![0.0; st.s.len()],
            z: vec![0.0; st.s.len()],
            tl: vec![0.0; st.x.len()],
            zl: vec![0.0; st.x.len()],
            tu: vec![0.0; st.x.len()],
            zu: vec![0.0; st.x.len()],
        };
        let dir = d.map(|(dir, _)| dir).unwrap_or(&zero);
        let mut total = 0.0;
        let mut count = 0;
        for r in 0..st.s.len() {
            total += pair(st.s[r], dir.s[r], st.z[r], dir.z[r]);
            count += 1;
        }
        for j in 0..st.x.len() {
            if p.lower[j].is_finite() {
                total += pair(st.tl[j], dir.tl[j], st.zl[j], dir.zl[j]);
                count += 1;
            }
            if p.upper[j].is_finite() {
                total += pair(st.tu[j], dir.tu[j], st.zu[j], dir.zu[j]);
                count += 1;
            }
        }
        (total, count)
    }

    fn run(&self, tol: f64, max_iter: usize) -> InnerResult {
        let p = self.p;
        let v = p.num_vars();
        let has_eq = p.equality.is_some();
        let mut st = self.initial_state();
        let mut best: Option<(f64, InnerResult)> = None;
        let mut best_iter = 0;
        let mut iter = 0;
        loop {
            let cert = kkt_residual(p, &st.x, has_eq.then_some(st.y), &st.z);
            if best.as_ref().is_none_or(|(b, _)| cert < *b) {
                best = Some((
                    cert,
                    InnerResult {
                        x: st.x.clone(),
                        y: has_eq.then_some(st.y),
                        z: st.z.clone(),
                        iterations: iter,
                    },
                ));
                best_iter = iter;
            }
            if cert <= 0.01 * tol || iter >= max_iter || iter - best_iter > STALL_ITERATIONS {
                break;
            }
            iter += 1;

            let res = self.residuals(&st);
            let (comp, count) = self.complementarity(&st, None);
            let mu = if count > 0 { comp / count as f64 } else { 0.0 };
            let f = self.factor(&st);

            let neg_prod = |a: &[f64], b: &[f64]| -> Vec<f64> {
                a.iter().zip(b).map(|(x, y)| -x * y).collect()
            };
            let r_sz = neg_prod(&st.s, &st.z);
            let r_lz = neg_prod(&st.tl, &st.zl);
            let r_uz = neg_prod(&st.tu, &st.zu);
            let aff = self.direction(&f, &st, &res, &r_sz, &r_lz, &r_uz);
            let alpha_aff = self.max_step(&st, &aff);
            let (comp_aff, _) = self.complementarity(&st, Some((&aff, alpha_aff)));
            let sigma = if mu > 0.0 {
                ((comp_aff / count as f64) / mu).clamp(0.0, 1.0).powi(3)
            } else {
                0.0
            };
            let target = sigma * mu;
            let corr = |base: &[f64], a: &[f64], b: &[f64]| -> Vec<f64> {
                base.iter()
                    .zip(a.iter().zip(b))
                    .map(|(r, (da, db))| r - da * db + target)
                    .collect()
            };
            let r_sz = corr(&r_sz, &aff.s, &aff.z);
            let mut r_lz = corr(&r_lz, &aff.tl, &aff.zl);
            let mut r_uz = corr(&r_uz, &aff.tu, &aff.zu);
            for j in 0..v {
                if !p.lower[j].is_finite() {
                    r_lz[j] = 0.0;
                }
                if !p.upper[j].is_finite() {
                    r_uz[j] = 0.0;
                }
            }
            let d = self.direction(&f, &st, &res, &r_sz, &r_lz, &r_uz);
            let alpha = (STEP_FRACTION * self.max_step(&st, &d)).min(1.0);

            let axpy = |x: &mut [f64], dx: &[f64]| {
                for (xi, di) in x.iter_mut().zip(dx) {
                    *xi += alpha * di;
                }
            };
            axpy(&mut st.x, &d.x);
            st.y += alpha * d.y;
            axpy(&mut st.s, &d.s);
            axpy(&mut st.z, &d.z);
            for j in 0..v {
                if p.lower[j].is_finite() {
                    st.tl[j] += alpha * d.tl[j];
                    st.zl[j] += alpha * d.zl[j];
                }
                if p.upper[j].is_finite() {
                    st.tu[j] += alpha * d.tu[j];
                    st.zu[j] += alpha * d.zu[j];
                }
            }
            if !st.x.iter().all(|x| x.is_finite()) {
                break;
            }
        }
        best.map(|(_, r)| r).expect("at least one iterate is recorded")
    }
}

/// Exhaustive grid search over a finite box, `v ≤ 3`.
///
/// With an equality, the variable with the largest coefficient is solved for
/// exactly and the grid runs over the others, so every returned point is
/// feasible. `kkt_residual` carries only the primal feasibility residual since
/// no multipliers exist.
pub fn brute_force_qp(p: &QpProblem, grid_step: f64) -> Result<QpSolution, QpError> {
    let v = p.num_vars();
    if v > 3 {
        return Err(QpError::OracleTooLarge(v));
    }
    if !(grid_step > 0.0) {
        return Err(QpError::InvalidProblem("grid step must be positive".into()));
    }
    if p.lower.iter().chain(&p.upper).any(|b| !b.is_finite()) {
        return Err(QpError::InvalidProblem("oracle requires a finite box".into()));
    }
    let grid = |j: usize| -> Vec<f64> {
        let (l, u) = (p.lower[j], p.upper[j]);
        let steps = ((u - l) / grid_step).ceil().max(0.0) as usize;
        (0..=steps)
            .map(|k| if k == steps { u } else { l + k as f64 * grid_step })
            .collect()
    };
    let pivot = match &p.equality {
        Some(eq) => {
            let (j, a) = eq
                .row
                .iter()
                .enumerate()
                .fold((usize::MAX, 0.0f64), |acc, (j, a)| {
                    if a.abs() > acc.1.abs() {
                        (j, *a)
                    } else {
                        acc
                    }
                });
            if j == usize::MAX {
                if eq.rhs.abs() > 1e-12 {
                    return Ok(infeasible(p));
                }
                None
            } else {
                Some((j, a))
            }
        }
        None => None,
    };
    let free: Vec<usize> = (0..v).filter(|&j| pivot.is_none_or(|(pj, _)| pj != j)).collect();
    let grids: Vec<Vec<f64>> = free.iter().map(|&j| grid(j)).collect();
    let total: usize = grids.iter().map(Vec::len).product();

    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut x = vec![0.0; v];
    for flat in 0..total {
        let mut rem = flat;
        for (k, &j) in free.iter().enumerate() {
            x[j] = grids[k][rem % grids[k].len()];
            rem /= grids[k].len();
        }
        if let (Some((pj, a)), Some(eq)) = (pivot, &p.equality) {
            let rest: f64 = (0..v).filter(|&j| j != pj).map(|j| eq.row[j] * x[j]).sum();
            let val = (eq.rhs - rest) / a;
            let slack = 1e-12 * (1.0 + val.abs());
            if val < p.lower[pj] - slack || val > p.upper[pj] + slack {
                continue;
            }
            x[pj] = val.clamp(p.lower[pj], p.upper[pj]);
        }
        let feasible = (0..p.ineq_rows.nrows())
            .all(|r| p.ineq_rows.row_dot(r, &x) <= p.ineq_rhs[r] + 1e-12);
        if !feasible {
            continue;
        }
        let obj = p.objective(&x);
        if best.as_ref().is_none_or(|(b, _)| obj < *b) {
            best = Some((obj, x.clone()));
        }
    }
    Ok(match best {
        None => infeasible(p),
        Some((objective, x)) => {
            let eq_res = p
                .equality
                .as_ref()
                .map_or(0.0, |eq| (dot(&eq.row, &x) - eq.rhs).abs());
            QpSolution {
                x,
                objective,
                status: QpStatus::Optimal,
                kkt_residual: eq_res,
                iterations: total,
                eq_multiplier: None,
                ineq_multipliers: vec![0.0; p.ineq_rows.nrows()],
            }
        }
    })
}
