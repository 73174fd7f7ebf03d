//! Convex backend: a problem description for smooth concave max-min programs
//! and a damped-Newton log-barrier path-following solver for it.
//!
//! Every subproblem in this crate has the shape
//!
//! ```text
//! maximize  t
//! s.t.      u_c(x) >= t          (max-min terms, concave smooth)
//!           g_j(x) >= rhs_j      (side constraints, concave smooth)
//!           P_b(x) PSD           (matrix blocks assembled from x)
//!           a^T x <= b           (trace budgets)
//!           x_re^2 + x_im^2 <= r (per-element disks)
//!           a^T x >= b           (linearized modulus minorants)
//! ```
//!
//! where every `u_c`/`g_j` is a sum of affine, `ln det`-of-affine and
//! negated squared-norm terms. The solver follows the central path of the
//! standard logarithmic barrier with damped Newton steps; problems here are
//! tiny (tens to a few hundred variables), so dense linear algebra is the
//! right tool. Receive spaces are two-dimensional throughout the crate, so
//! the 2x2 log-det carries a dedicated representation in the symmetric basis
//! `{E00, E01 + E10, E11}` that turns its Hessian into a rank-3 product.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::linalg;

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("infeasible start: {0}")]
    InfeasibleStart(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("backend failure: {0}")]
    Backend(String),
}

/// One additive piece of a concave expression.
#[derive(Debug, Clone)]
pub enum Term {
    /// `constant + sum coeffs[j] x_j`.
    Affine {
        coeffs: Vec<(usize, f64)>,
        constant: f64,
    },
    /// `scale * ln det(m0 + sum_j x_j M_j)` for general small symmetric
    /// matrices, `scale > 0`.
    LogDet {
        scale: f64,
        m0: DMatrix<f64>,
        coeffs: Vec<(usize, DMatrix<f64>)>,
    },
    /// 2x2 specialization of `LogDet`: coefficient matrices are stored as
    /// rows `(t00, t01, t11)` of `tau`.
    LogDet2 {
        scale: f64,
        m0_tau: [f64; 3],
        idx: Vec<usize>,
        tau: DMatrix<f64>,
    },
    /// `-scale * ||F x + e||^2` with `scale > 0`; `gram = F^T F` is cached.
    NegQuad {
        scale: f64,
        f: DMatrix<f64>,
        e: DVector<f64>,
        gram: DMatrix<f64>,
    },
}

impl Term {
    pub fn neg_quad(scale: f64, f: DMatrix<f64>, e: DVector<f64>) -> Term {
        let gram = f.transpose() * &f;
        Term::NegQuad { scale, f, e, gram }
    }

    /// Pack a 2x2 log-det term into the symmetric-basis representation.
    pub fn logdet2(scale: f64, m0: &DMatrix<f64>, coeffs: &[(usize, DMatrix<f64>)]) -> Term {
        assert_eq!(m0.nrows(), 2);
        let pack = |m: &DMatrix<f64>| [m[(0, 0)], 0.5 * (m[(0, 1)] + m[(1, 0)]), m[(1, 1)]];
        let m0_tau = pack(m0);
        let mut idx = Vec::with_capacity(coeffs.len());
        let mut tau = DMatrix::zeros(coeffs.len(), 3);
        for (r, (j, m)) in coeffs.iter().enumerate() {
            idx.push(*j);
            let t = pack(m);
            tau[(r, 0)] = t[0];
            tau[(r, 1)] = t[1];
            tau[(r, 2)] = t[2];
        }
        Term::LogDet2 { scale, m0_tau, idx, tau }
    }
}

/// 2x2 symmetric matrix in `(t00, t01, t11)` coordinates.
#[inline]
fn det2(t: &[f64; 3]) -> f64 {
    t[0] * t[2] - t[1] * t[1]
}

#[inline]
fn inv2(t: &[f64; 3], det: f64) -> [f64; 3] {
    [t[2] / det, -t[1] / det, t[0] / det]
}

/// `q(S)` with `g_j = <tau_j, q(S)>` for the gradient of `ln det`.
#[inline]
fn grad_weights(s: &[f64; 3]) -> [f64; 3] {
    [s[0], 2.0 * s[1], s[2]]
}

/// `Q(S)_{ab} = Tr(S B_a S B_b)` over the symmetric basis.
fn curvature_matrix(s: &[f64; 3]) -> DMatrix<f64> {
    let (s00, s01, s11) = (s[0], s[1], s[2]);
    // C_a = S B_a S for B_0 = E00, B_1 = E01 + E10, B_2 = E11.
    let c0 = [s00 * s00, s00 * s01, s01 * s01];
    let c1 = [2.0 * s00 * s01, s00 * s11 + s01 * s01, 2.0 * s01 * s11];
    let c2 = [s01 * s01, s01 * s11, s11 * s11];
    let row = |c: [f64; 3]| [c[0], 2.0 * c[1], c[2]];
    let (r0, r1, r2) = (row(c0), row(c1), row(c2));
    DMatrix::from_row_slice(3, 3, &[r0[0], r0[1], r0[2], r1[0], r1[1], r1[2], r2[0], r2[1], r2[2]])
}

/// Concave smooth function of the flat variable vector.
#[derive(Debug, Clone, Default)]
pub struct ConcaveExpr {
    pub terms: Vec<Term>,
}

impl ConcaveExpr {
    pub fn value(&self, x: &DVector<f64>) -> Option<f64> {
        let mut v = 0.0;
        for t in &self.terms {
            match t {
                Term::Affine { coeffs, constant } => {
                    v += constant + coeffs.iter().map(|(j, c)| c * x[*j]).sum::<f64>();
                }
                Term::LogDet { scale, m0, coeffs } => {
                    let mut m = m0.clone();
                    for (j, mat) in coeffs {
                        m += mat * x[*j];
                    }
                    v += scale * linalg::logdet_pd(&m)?;
                }
                Term::LogDet2 { scale, m0_tau, idx, tau } => {
                    let m = assemble2(m0_tau, idx, tau, x);
                    let det = det2(&m);
                    if det <= 0.0 || m[0] <= 0.0 {
                        return None;
                    }
                    v += scale * det.ln();
                }
                Term::NegQuad { scale, f, e, .. } => {
                    let r = f * x + e;
                    v -= scale * r.norm_squared();
                }
            }
        }
        Some(v)
    }

    /// Gradient of the expression (overwrites `out`).
    pub fn gradient(&self, x: &DVector<f64>, out: &mut DVector<f64>) -> Option<()> {
        out.fill(0.0);
        for t in &self.terms {
            match t {
                Term::Affine { coeffs, .. } => {
                    for (j, c) in coeffs {
                        out[*j] += c;
                    }
                }
                Term::LogDet { scale, m0, coeffs } => {
                    let mut m = m0.clone();
                    for (j, mat) in coeffs {
                        m += mat * x[*j];
                    }
                    let minv = linalg::inverse_pd(&m)?;
                    for (j, mat) in coeffs {
                        out[*j] += scale * minv.dot(&mat.transpose());
                    }
                }
                Term::LogDet2 { scale, m0_tau, idx, tau } => {
                    let m = assemble2(m0_tau, idx, tau, x);
                    let det = det2(&m);
                    if det <= 0.0 || m[0] <= 0.0 {
                        return None;
                    }
                    let q = grad_weights(&inv2(&m, det));
                    for (r, j) in idx.iter().enumerate() {
                        out[*j] +=
                            scale * (tau[(r, 0)] * q[0] + tau[(r, 1)] * q[1] + tau[(r, 2)] * q[2]);
                    }
                }
                Term::NegQuad { scale, f, e, .. } => {
                    let r = f * x + e;
                    let g = f.transpose() * r;
                    out.axpy(-2.0 * scale, &g, 1.0);
                }
            }
        }
        Some(())
    }

    /// Adds `w * (-hessian)` (a PSD matrix, the expression being concave)
    /// into `out`.
    pub fn add_neg_hessian(&self, x: &DVector<f64>, w: f64, out: &mut DMatrix<f64>) -> Option<()> {
        for t in &self.terms {
            match t {
                Term::Affine { .. } => {}
                Term::LogDet { scale, m0, coeffs } => {
                    let mut m = m0.clone();
                    for (j, mat) in coeffs {
                        m += mat * x[*j];
                    }
                    let minv = linalg::inverse_pd(&m)?;
                    let half: Vec<DMatrix<f64>> =
                        coeffs.iter().map(|(_, mat)| &minv * mat).collect();
                    let half_t: Vec<DMatrix<f64>> = half.iter().map(|h| h.transpose()).collect();
                    for (a, (ja, _)) in coeffs.iter().enumerate() {
                        for (b, (jb, _)) in coeffs.iter().enumerate().skip(a) {
                            let v = w * scale * half[a].dot(&half_t[b]);
                            out[(*ja, *jb)] += v;
                            if ja != jb {
                                out[(*jb, *ja)] += v;
                            }
                        }
                    }
                }
                Term::LogDet2 { scale, m0_tau, idx, tau } => {
                    let m = assemble2(m0_tau, idx, tau, x);
                    let det = det2(&m);
                    if det <= 0.0 || m[0] <= 0.0 {
                        return None;
                    }
                    let q = curvature_matrix(&inv2(&m, det));
                    // -hessian = scale * tau Q tau^T, a rank-3 product.
                    let tq = tau * q;
                    let block = &tq * tau.transpose();
                    let ws = w * scale;
                    let nrows = out.nrows();
                    let out_slice = out.as_mut_slice();
                    for (b, jb) in idx.iter().enumerate() {
                        let col = &mut out_slice[jb * nrows..(jb + 1) * nrows];
                        let bcol = block.column(b);
                        for (a, ja) in idx.iter().enumerate() {
                            col[*ja] += ws * bcol[a];
                        }
                    }
                }
                Term::NegQuad { scale, gram, .. } => {
                    let s = 2.0 * scale * w;
                    if gram.nrows() == out.nrows() && gram.ncols() == out.ncols() {
                        for (o, g) in out.as_mut_slice().iter_mut().zip(gram.as_slice()) {
                            *o += s * g;
                        }
                    } else {
                        for a in 0..gram.nrows() {
                            for b in 0..gram.ncols() {
                                out[(a, b)] += s * gram[(a, b)];
                            }
                        }
                    }
                }
            }
        }
        Some(())
    }

    /// Scale the whole expression by `w > 0` (keeps concavity).
    pub fn scaled(mut self, w: f64) -> Self {
        for t in self.terms.iter_mut() {
            match t {
                Term::Affine { coeffs, constant } => {
                    for (_, c) in coeffs.iter_mut() {
                        *c *= w;
                    }
                    *constant *= w;
                }
                Term::LogDet { scale, .. }
                | Term::LogDet2 { scale, .. }
                | Term::NegQuad { scale, .. } => *scale *= w,
            }
        }
        self
    }
}

#[inline]
fn assemble2(m0_tau: &[f64; 3], idx: &[usize], tau: &DMatrix<f64>, x: &DVector<f64>) -> [f64; 3] {
    let mut m = *m0_tau;
    for (r, j) in idx.iter().enumerate() {
        let xv = x[*j];
        m[0] += tau[(r, 0)] * xv;
        m[1] += tau[(r, 1)] * xv;
        m[2] += tau[(r, 2)] * xv;
    }
    m
}

/// PSD-constrained matrix block assembled from a slice of coordinates.
#[derive(Debug, Clone)]
pub struct PsdBlock {
    pub coords: Vec<usize>,
    pub basis: Vec<DMatrix<f64>>,
    pub dim: usize,
}

impl PsdBlock {
    pub fn assemble(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.dim, self.dim);
        for (j, e) in self.coords.iter().zip(&self.basis) {
            m += e * x[*j];
        }
        m
    }
}

/// Full problem description consumed by a [`ConvexBackend`].
#[derive(Debug, Clone, Default)]
pub struct MaxMinProblem {
    pub dim: usize,
    pub min_terms: Vec<ConcaveExpr>,
    /// `expr >= rhs`.
    pub side: Vec<(ConcaveExpr, f64)>,
    pub psd_blocks: Vec<PsdBlock>,
    /// `sum coeffs x <= rhs`.
    pub affine_ineq: Vec<(Vec<(usize, f64)>, f64)>,
    /// `(idx_re, idx_im, radius^2)` with `x_re^2 + x_im^2 <= radius^2`.
    pub disks: Vec<(usize, usize, f64)>,
    /// `sum coeffs x >= rhs`.
    pub halfspaces: Vec<(Vec<(usize, f64)>, f64)>,
}

impl MaxMinProblem {
    /// Minimum over the max-min terms at a point.
    pub fn min_value(&self, x: &DVector<f64>) -> Option<f64> {
        self.min_terms
            .iter()
            .map(|e| e.value(x))
            .try_fold(f64::INFINITY, |acc, v| v.map(|v| acc.min(v)))
    }

    /// Smallest slack over every constraint family (PSD blocks report their
    /// minimum eigenvalue).
    pub fn min_slack(&self, x: &DVector<f64>) -> f64 {
        let mut s = f64::INFINITY;
        for (expr, rhs) in &self.side {
            s = s.min(expr.value(x).map_or(f64::NEG_INFINITY, |v| v - rhs));
        }
        for b in &self.psd_blocks {
            s = s.min(linalg::min_eigenvalue(&b.assemble(x)));
        }
        for (coeffs, rhs) in &self.affine_ineq {
            s = s.min(rhs - coeffs.iter().map(|(j, c)| c * x[*j]).sum::<f64>());
        }
        for (ir, ii, r2) in &self.disks {
            s = s.min(r2 - x[*ir] * x[*ir] - x[*ii] * x[*ii]);
        }
        for (coeffs, rhs) in &self.halfspaces {
            s = s.min(coeffs.iter().map(|(j, c)| c * x[*j]).sum::<f64>() - rhs);
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    /// Iteration budget exhausted; the returned point is feasible but the
    /// gap target was not certified.
    IterationLimit,
}

#[derive(Debug, Clone)]
pub struct BackendSolution {
    pub x: DVector<f64>,
    /// `min_c u_c(x)` at the returned point.
    pub objective: f64,
    pub status: SolveStatus,
}

/// Capability flags of a backend, checked by the subproblem builders.
#[derive(Debug, Clone, Copy)]
pub struct BackendCaps {
    pub logdet_concave: bool,
    pub psd_variables: bool,
    pub linear_constraints: bool,
    pub second_order_terms: bool,
}

pub trait ConvexBackend: Sync {
    fn capabilities(&self) -> BackendCaps;
    /// Solve from a strictly feasible start.
    fn solve(
        &self,
        problem: &MaxMinProblem,
        x0: &DVector<f64>,
    ) -> Result<BackendSolution, SolverError>;
}

/// Log-barrier path-following solver with damped Newton steps.
#[derive(Debug, Clone)]
pub struct BarrierSolver {
    pub tau0: f64,
    pub tau_factor: f64,
    /// Absolute duality-gap target `m / tau`.
    pub gap_tol: f64,
    /// Newton decrement threshold `lambda^2 / 2`.
    pub newton_tol: f64,
    pub max_newton: usize,
    pub max_stages: usize,
}

impl Default for BarrierSolver {
    fn default() -> Self {
        Self {
            tau0: 1.0,
            tau_factor: 12.0,
            gap_tol: 1e-9,
            newton_tol: 1e-11,
            max_newton: 80,
            max_stages: 18,
        }
    }
}

struct BarrierState<'a> {
    problem: &'a MaxMinProblem,
    grad_buf: DVector<f64>,
}

impl<'a> BarrierState<'a> {
    /// Barrier value at `(x, t)`; `None` when outside the domain.
    fn phi(&self, x: &DVector<f64>, t: f64, tau: f64) -> Option<f64> {
        let p = self.problem;
        let mut phi = -tau * t;
        for expr in &p.min_terms {
            let s = expr.value(x)? - t;
            if s <= 0.0 {
                return None;
            }
            phi -= s.ln();
        }
        for (expr, rhs) in &p.side {
            let s = expr.value(x)? - rhs;
            if s <= 0.0 {
                return None;
            }
            phi -= s.ln();
        }
        for b in &p.psd_blocks {
            phi -= linalg::logdet_pd(&b.assemble(x))?;
        }
        for (coeffs, rhs) in &p.affine_ineq {
            let s = rhs - coeffs.iter().map(|(j, c)| c * x[*j]).sum::<f64>();
            if s <= 0.0 {
                return None;
            }
            phi -= s.ln();
        }
        for (ir, ii, r2) in &p.disks {
            let s = r2 - x[*ir] * x[*ir] - x[*ii] * x[*ii];
            if s <= 0.0 {
                return None;
            }
            phi -= s.ln();
        }
        for (coeffs, rhs) in &p.halfspaces {
            let s = coeffs.iter().map(|(j, c)| c * x[*j]).sum::<f64>() - rhs;
            if s <= 0.0 {
                return None;
            }
            phi -= s.ln();
        }
        Some(phi)
    }

    /// Gradient and Hessian of the barrier in the augmented variable
    /// `(x, t)`; the epigraph coordinate is the last one.
    fn derivatives(
        &mut self,
        x: &DVector<f64>,
        t: f64,
        tau: f64,
    ) -> Option<(DVector<f64>, DMatrix<f64>)> {
        let p = self.problem;
        let n = p.dim;
        let mut g = DVector::zeros(n + 1);
        let mut h = DMatrix::zeros(n + 1, n + 1);
        let mut curv = DMatrix::zeros(n, n);
        g[n] = -tau;

        let mut aug = DVector::zeros(n + 1);
        let mut rank1 = |g: &mut DVector<f64>,
                         h: &mut DMatrix<f64>,
                         grad_x: &DVector<f64>,
                         grad_t: f64,
                         s: f64| {
            let inv = 1.0 / s;
            aug.rows_mut(0, n).copy_from(grad_x);
            aug[n] = grad_t;
            g.axpy(-inv, &aug, 1.0);
            h.ger(inv * inv, &aug, &aug, 1.0);
        };

        for expr in &p.min_terms {
            let s = expr.value(x)? - t;
            if s <= 0.0 {
                return None;
            }
            expr.gradient(x, &mut self.grad_buf)?;
            let gx = self.grad_buf.clone();
            rank1(&mut g, &mut h, &gx, -1.0, s);
            expr.add_neg_hessian(x, 1.0 / s, &mut curv)?;
        }
        for (expr, rhs) in &p.side {
            let s = expr.value(x)? - rhs;
            if s <= 0.0 {
                return None;
            }
            expr.gradient(x, &mut self.grad_buf)?;
            let gx = self.grad_buf.clone();
            rank1(&mut g, &mut h, &gx, 0.0, s);
            expr.add_neg_hessian(x, 1.0 / s, &mut curv)?;
        }
        for a in 0..n {
            for b in 0..n {
                h[(a, b)] += curv[(a, b)];
            }
        }

        for blk in &p.psd_blocks {
            let m = blk.assemble(x);
            let minv = linalg::inverse_pd(&m)?;
            let half: Vec<DMatrix<f64>> = blk.basis.iter().map(|e| &minv * e).collect();
            let half_t: Vec<DMatrix<f64>> = half.iter().map(|hm| hm.transpose()).collect();
            for (a, ja) in blk.coords.iter().enumerate() {
                g[*ja] -= half[a].trace();
                for (b, jb) in blk.coords.iter().enumerate().skip(a) {
                    let v = half[a].dot(&half_t[b]);
                    h[(*ja, *jb)] += v;
                    if ja != jb {
                        h[(*jb, *ja)] += v;
                    }
                }
            }
        }
        for (coeffs, rhs) in &p.affine_ineq {
            let s = rhs - coeffs.iter().map(|(j, c)| c * x[*j]).sum::<f64>();
            if s <= 0.0 {
                return None;
            }
            let inv = 1.0 / s;
            for (j, c) in coeffs {
                g[*j] += c * inv;
            }
            let inv2 = inv * inv;
            for (ja, ca) in coeffs {
                for (jb, cb) in coeffs {
                    h[(*ja, *jb)] += ca * cb * inv2;
                }
            }
        }
        for (ir, ii, r2) in &p.disks {
            let (xr, xi) = (x[*ir], x[*ii]);
            let s = r2 - xr * xr - xi * xi;
            if s <= 0.0 {
                return None;
            }
            let inv = 1.0 / s;
            g[*ir] += 2.0 * xr * inv;
            g[*ii] += 2.0 * xi * inv;
            let inv2 = inv * inv;
            h[(*ir, *ir)] += 2.0 * inv + 4.0 * xr * xr * inv2;
            h[(*ii, *ii)] += 2.0 * inv + 4.0 * xi * xi * inv2;
            h[(*ir, *ii)] += 4.0 * xr * xi * inv2;
            h[(*ii, *ir)] += 4.0 * xr * xi * inv2;
        }
        for (coeffs, rhs) in &p.halfspaces {
            let s = coeffs.iter().map(|(j, c)| c * x[*j]).sum::<f64>() - rhs;
            if s <= 0.0 {
                return None;
            }
            let inv = 1.0 / s;
            for (j, c) in coeffs {
                g[*j] -= c * inv;
            }
            let inv2 = inv * inv;
            for (ja, ca) in coeffs {
                for (jb, cb) in coeffs {
                    h[(*ja, *jb)] += ca * cb * inv2;
                }
            }
        }
        Some((g, h))
    }
}

impl BarrierSolver {
    fn barrier_count(problem: &MaxMinProblem) -> f64 {
        let mut m = problem.min_terms.len() + problem.side.len();
        m += problem.affine_ineq.len() + problem.disks.len() + problem.halfspaces.len();
        let psd: usize = problem.psd_blocks.iter().map(|b| b.dim).sum();
        (m + psd) as f64
    }
}

impl ConvexBackend for BarrierSolver {
    fn capabilities(&self) -> BackendCaps {
        BackendCaps {
            logdet_concave: true,
            psd_variables: true,
            linear_constraints: true,
            second_order_terms: true,
        }
    }

    fn solve(
        &self,
        problem: &MaxMinProblem,
        x0: &DVector<f64>,
    ) -> Result<BackendSolution, SolverError> {
        if problem.min_terms.is_empty() {
            return Err(SolverError::Backend("no objective terms".into()));
        }
        let slack = problem.min_slack(x0);
        if slack <= 0.0 || !slack.is_finite() {
            return Err(SolverError::InfeasibleStart(format!(
                "minimum constraint slack at start is {slack:.3e}"
            )));
        }
        let n = problem.dim;
        let mut x = x0.clone();
        let u0 = problem
            .min_value(&x)
            .ok_or_else(|| SolverError::Numerical("objective undefined at start".into()))?;
        let mut t = u0 - 0.05 * (1.0 + u0.abs());
        let m = Self::barrier_count(problem);
        let mut tau = self.tau0;
        let mut state = BarrierState { problem, grad_buf: DVector::zeros(n) };
        let mut status = SolveStatus::Optimal;

        for stage in 0..self.max_stages {
            let mut converged = false;
            for _ in 0..self.max_newton {
                let Some((g, mut h)) = state.derivatives(&x, t, tau) else {
                    return Err(SolverError::Numerical("left barrier domain".into()));
                };
                let mut ridge = 0.0;
                let dir = loop {
                    if ridge > 0.0 {
                        for a in 0..=n {
                            h[(a, a)] += ridge;
                        }
                    }
                    match linalg::solve_pd(&h, &(-&g)) {
                        Some(d) => break d,
                        None => {
                            let scale = h.diagonal().amax().max(1e-12);
                            ridge = if ridge == 0.0 { 1e-12 * scale } else { ridge * 100.0 };
                            if ridge > scale {
                                return Err(SolverError::Numerical(
                                    "hessian factorization failed".into(),
                                ));
                            }
                        }
                    }
                };
                let decrement = -g.dot(&dir);
                if decrement <= 2.0 * self.newton_tol {
                    converged = true;
                    break;
                }
                let phi0 = state
                    .phi(&x, t, tau)
                    .ok_or_else(|| SolverError::Numerical("barrier undefined".into()))?;
                let mut accepted = false;
                let mut alpha = 1.0;
                for _ in 0..60 {
                    let xt: DVector<f64> = &x + dir.rows(0, n) * alpha;
                    let tt = t + alpha * dir[n];
                    if let Some(phi1) = state.phi(&xt, tt, tau) {
                        if phi1 <= phi0 - 0.25 * alpha * decrement {
                            x = xt;
                            t = tt;
                            accepted = true;
                            break;
                        }
                    }
                    alpha *= 0.5;
                }
                if !accepted {
                    // Step stalled at numerical precision for this stage.
                    converged = true;
                    break;
                }
            }
            if !converged {
                status = SolveStatus::IterationLimit;
            }
            if m / tau <= self.gap_tol {
                break;
            }
            tau *= self.tau_factor;
            if stage + 1 == self.max_stages {
                status = SolveStatus::IterationLimit;
            }
        }

        let objective = problem
            .min_value(&x)
            .ok_or_else(|| SolverError::Numerical("objective undefined at solution".into()))?;
        Ok(BackendSolution { x, objective, status })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn affine(coeffs: Vec<(usize, f64)>, constant: f64) -> ConcaveExpr {
        ConcaveExpr { terms: vec![Term::Affine { coeffs, constant }] }
    }

    #[test]
    fn logdet2_matches_generic_logdet() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..30 {
            let m0 = {
                let r = DMatrix::from_fn(2, 2, |_, _| rng.gen::<f64>() - 0.5);
                &r * r.transpose() + DMatrix::identity(2, 2) * 0.5
            };
            let coeffs: Vec<(usize, DMatrix<f64>)> = (0..4)
                .map(|j| {
                    let r = DMatrix::from_fn(2, 2, |_, _| rng.gen::<f64>() - 0.5);
                    (j, crate::linalg::symmetrize(&(&r * r.transpose())))
                })
                .collect();
            let generic = ConcaveExpr {
                terms: vec![Term::LogDet { scale: 0.7, m0: m0.clone(), coeffs: coeffs.clone() }],
            };
            let fast = ConcaveExpr { terms: vec![Term::logdet2(0.7, &m0, &coeffs)] };
            let x = DVector::from_fn(4, |_, _| rng.gen::<f64>() * 0.5);
            assert_relative_eq!(
                generic.value(&x).unwrap(),
                fast.value(&x).unwrap(),
                epsilon = 1e-12
            );
            let mut g1 = DVector::zeros(4);
            let mut g2 = DVector::zeros(4);
            generic.gradient(&x, &mut g1).unwrap();
            fast.gradient(&x, &mut g2).unwrap();
            assert_relative_eq!(g1, g2, epsilon = 1e-10);
            let mut h1 = DMatrix::zeros(4, 4);
            let mut h2 = DMatrix::zeros(4, 4);
            generic.add_neg_hessian(&x, 1.3, &mut h1).unwrap();
            fast.add_neg_hessian(&x, 1.3, &mut h2).unwrap();
            assert_relative_eq!(h1, h2, epsilon = 1e-9);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let f = DMatrix::from_fn(5, 3, |_, _| rng.gen::<f64>() - 0.5);
        let e = DVector::from_fn(5, |_, _| rng.gen::<f64>() - 0.5);
        let m0 = DMatrix::identity(2, 2);
        let coeffs: Vec<(usize, DMatrix<f64>)> = (0..3)
            .map(|j| {
                let r = DMatrix::from_fn(2, 2, |_, _| rng.gen::<f64>() - 0.5);
                (j, crate::linalg::symmetrize(&(&r * r.transpose())))
            })
            .collect();
        let expr = ConcaveExpr {
            terms: vec![
                Term::Affine { coeffs: vec![(0, 0.3), (2, -0.8)], constant: 1.0 },
                Term::logdet2(0.9, &m0, &coeffs),
                Term::neg_quad(0.4, f, e),
            ],
        };
        let x = DVector::from_vec(vec![0.2, 0.1, 0.3]);
        let mut g = DVector::zeros(3);
        expr.gradient(&x, &mut g).unwrap();
        let eps = 1e-6;
        for j in 0..3 {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[j] += eps;
            xm[j] -= eps;
            let fd = (expr.value(&xp).unwrap() - expr.value(&xm).unwrap()) / (2.0 * eps);
            assert!((fd - g[j]).abs() < 1e-6, "coord {j}: {fd} vs {}", g[j]);
        }
        // Hessian against finite differences of the gradient.
        let mut hess = DMatrix::zeros(3, 3);
        expr.add_neg_hessian(&x, 1.0, &mut hess).unwrap();
        for j in 0..3 {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[j] += eps;
            xm[j] -= eps;
            let mut gp = DVector::zeros(3);
            let mut gm = DVector::zeros(3);
            expr.gradient(&xp, &mut gp).unwrap();
            expr.gradient(&xm, &mut gm).unwrap();
            for i in 0..3 {
                let fd = (gp[i] - gm[i]) / (2.0 * eps);
                assert!(
                    (fd + hess[(i, j)]).abs() < 1e-5,
                    "hess ({i},{j}): fd {fd} vs {}",
                    -hess[(i, j)]
                );
            }
        }
    }

    #[test]
    fn linear_program_on_a_box() {
        // maximize min(x0, x1) s.t. x0 + x1 <= 1, x >= 0: 0.5 each.
        let problem = MaxMinProblem {
            dim: 2,
            min_terms: vec![affine(vec![(0, 1.0)], 0.0), affine(vec![(1, 1.0)], 0.0)],
            side: vec![
                (affine(vec![(0, 1.0)], 0.0), 0.0),
                (affine(vec![(1, 1.0)], 0.0), 0.0),
            ],
            affine_ineq: vec![(vec![(0, 1.0), (1, 1.0)], 1.0)],
            ..Default::default()
        };
        let x0 = DVector::from_vec(vec![0.2, 0.3]);
        let sol = BarrierSolver::default().solve(&problem, &x0).unwrap();
        assert_relative_eq!(sol.objective, 0.5, epsilon = 1e-6);
        assert_relative_eq!(sol.x[0], 0.5, epsilon = 1e-5);
        assert_relative_eq!(sol.x[1], 0.5, epsilon = 1e-5);
    }

    #[test]
    fn water_filling_single_user() {
        // maximize ln(1 + x) over 0 <= x <= p: uses the full budget.
        let p = 3.0;
        let problem = MaxMinProblem {
            dim: 1,
            min_terms: vec![ConcaveExpr {
                terms: vec![Term::LogDet {
                    scale: 1.0,
                    m0: DMatrix::identity(1, 1),
                    coeffs: vec![(0, DMatrix::identity(1, 1))],
                }],
            }],
            side: vec![(affine(vec![(0, 1.0)], 0.0), 0.0)],
            affine_ineq: vec![(vec![(0, 1.0)], p)],
            ..Default::default()
        };
        let sol = BarrierSolver::default()
            .solve(&problem, &DVector::from_vec(vec![1.0]))
            .unwrap();
        assert_relative_eq!(sol.x[0], p, epsilon = 1e-6);
        assert_relative_eq!(sol.objective, (1.0 + p).ln(), epsilon = 1e-6);
    }

    #[test]
    fn quadratic_peak_inside_disk() {
        let f = DMatrix::identity(2, 2);
        let e = DVector::from_vec(vec![-0.3, 0.2]);
        let problem = MaxMinProblem {
            dim: 2,
            min_terms: vec![ConcaveExpr { terms: vec![Term::neg_quad(1.0, f, e)] }],
            disks: vec![(0, 1, 1.0)],
            ..Default::default()
        };
        let sol = BarrierSolver::default()
            .solve(&problem, &DVector::from_vec(vec![0.0, 0.0]))
            .unwrap();
        assert_relative_eq!(sol.x[0], 0.3, epsilon = 1e-5);
        assert_relative_eq!(sol.x[1], -0.2, epsilon = 1e-5);
    }

    #[test]
    fn quadratic_peak_outside_disk_lands_on_boundary() {
        let f = DMatrix::identity(2, 2);
        let e = DVector::from_vec(vec![-2.0, 0.0]);
        let problem = MaxMinProblem {
            dim: 2,
            min_terms: vec![ConcaveExpr { terms: vec![Term::neg_quad(1.0, f, e)] }],
            disks: vec![(0, 1, 1.0)],
            ..Default::default()
        };
        let sol = BarrierSolver::default()
            .solve(&problem, &DVector::from_vec(vec![0.0, 0.0]))
            .unwrap();
        assert_relative_eq!(sol.x[0], 1.0, epsilon = 1e-4);
        assert!(sol.x[1].abs() < 1e-4);
    }

    #[test]
    fn psd_block_caps_logdet_growth() {
        // maximize ln det(P) over trace(P) <= 2, P PSD 2x2: optimum P = I.
        let b0 = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        let b1 = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 1.0]);
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let b2 = DMatrix::from_row_slice(2, 2, &[0.0, s, s, 0.0]);
        let coeffs = vec![(0usize, b0.clone()), (1, b1.clone()), (2, b2.clone())];
        let problem = MaxMinProblem {
            dim: 3,
            min_terms: vec![ConcaveExpr {
                terms: vec![Term::logdet2(1.0, &DMatrix::zeros(2, 2), &coeffs)],
            }],
            psd_blocks: vec![PsdBlock { coords: vec![0, 1, 2], basis: vec![b0, b1, b2], dim: 2 }],
            affine_ineq: vec![(vec![(0, 1.0), (1, 1.0)], 2.0)],
            ..Default::default()
        };
        let sol = BarrierSolver::default()
            .solve(&problem, &DVector::from_vec(vec![0.5, 0.4, 0.1]))
            .unwrap();
        assert_relative_eq!(sol.x[0], 1.0, epsilon = 1e-4);
        assert_relative_eq!(sol.x[1], 1.0, epsilon = 1e-4);
        assert!(sol.x[2].abs() < 1e-4);
        assert!(sol.objective.abs() < 1e-5);
    }

    #[test]
    fn halfspace_constrains_the_optimum() {
        // maximize -x^2 with x >= 0.4.
        let problem = MaxMinProblem {
            dim: 1,
            min_terms: vec![ConcaveExpr {
                terms: vec![Term::neg_quad(1.0, DMatrix::identity(1, 1), DVector::zeros(1))],
            }],
            halfspaces: vec![(vec![(0, 1.0)], 0.4)],
            disks: vec![(0, 0, 2.0)],
            ..Default::default()
        };
        let sol = BarrierSolver::default()
            .solve(&problem, &DVector::from_vec(vec![0.8]))
            .unwrap();
        assert_relative_eq!(sol.x[0], 0.4, epsilon = 1e-4);
    }

    #[test]
    fn rejects_infeasible_start() {
        let problem = MaxMinProblem {
            dim: 1,
            min_terms: vec![affine(vec![(0, 1.0)], 0.0)],
            affine_ineq: vec![(vec![(0, 1.0)], 1.0)],
            ..Default::default()
        };
        let err = BarrierSolver::default()
            .solve(&problem, &DVector::from_vec(vec![2.0]))
            .unwrap_err();
        assert!(matches!(err, SolverError::InfeasibleStart(_)));
    }

    #[test]
    fn max_min_balances_two_logs() {
        // maximize min(ln(1+x0), ln(1+x1)) with x0 + x1 <= 2: x0 = x1 = 1.
        let log_term = |j: usize| ConcaveExpr {
            terms: vec![Term::LogDet {
                scale: 1.0,
                m0: DMatrix::identity(1, 1),
                coeffs: vec![(j, DMatrix::identity(1, 1))],
            }],
        };
        let problem = MaxMinProblem {
            dim: 2,
            min_terms: vec![log_term(0), log_term(1)],
            side: vec![
                (affine(vec![(0, 1.0)], 0.0), 0.0),
                (affine(vec![(1, 1.0)], 0.0), 0.0),
            ],
            affine_ineq: vec![(vec![(0, 1.0), (1, 1.0)], 2.0)],
            ..Default::default()
        };
        let sol = BarrierSolver::default()
            .solve(&problem, &DVector::from_vec(vec![0.3, 1.2]))
            .unwrap();
        assert_relative_eq!(sol.x[0], 1.0, epsilon = 1e-5);
        assert_relative_eq!(sol.x[1], 1.0, epsilon = 1e-5);
    }
}
