//! Covariance-direction subproblems: the max-min rate step and the
//! generalized Dinkelbach loop for the energy-efficiency step.
//!
//! Covariances are flattened onto an orthonormal matrix basis per user. IGS
//! uses the full symmetric basis; PGS uses the basis of the proper subspace
//! (`[[A, -B], [B, A]]`, `A` symmetric, `B` skew), which keeps one solver
//! path for both signaling modes: the structure constraint is just a smaller
//! coordinate chart.

use nalgebra::{DMatrix, DVector};

use crate::channel::RealChannels;
use crate::linalg;
use crate::model::{CovSet, NetworkConfig, Signaling};
use crate::rates::{self, UserId, LN2};
use crate::surrogate::{cov_surrogates, CovSurrogate};

use super::backend::{
    ConcaveExpr, ConvexBackend, MaxMinProblem, PsdBlock, SolverError, Term,
};

/// Orthonormal symmetric basis of `n x n` matrices.
fn symmetric_basis(n: usize) -> Vec<DMatrix<f64>> {
    let mut basis = Vec::with_capacity(n * (n + 1) / 2);
    let s = std::f64::consts::FRAC_1_SQRT_2;
    for a in 0..n {
        for b in a..n {
            let mut e = DMatrix::zeros(n, n);
            if a == b {
                e[(a, a)] = 1.0;
            } else {
                e[(a, b)] = s;
                e[(b, a)] = s;
            }
            basis.push(e);
        }
    }
    basis
}

/// Orthonormal basis of the proper subspace of `2n x 2n` symmetric matrices.
fn proper_basis(n: usize) -> Vec<DMatrix<f64>> {
    let mut basis = Vec::new();
    let s = std::f64::consts::FRAC_1_SQRT_2;
    // Diagonal-block pairs carrying the symmetric part.
    for e in symmetric_basis(n) {
        let mut m = DMatrix::zeros(2 * n, 2 * n);
        m.view_mut((0, 0), (n, n)).copy_from(&(&e * s));
        m.view_mut((n, n), (n, n)).copy_from(&(&e * s));
        basis.push(m);
    }
    // Off-diagonal blocks carrying the skew part.
    for a in 0..n {
        for b in (a + 1)..n {
            let mut k = DMatrix::zeros(n, n);
            k[(a, b)] = s;
            k[(b, a)] = -s;
            let mut m = DMatrix::zeros(2 * n, 2 * n);
            m.view_mut((n, 0), (n, n)).copy_from(&(&k * s));
            m.view_mut((0, n), (n, n)).copy_from(&(-&k * s));
            basis.push(m);
        }
    }
    basis
}

/// Flat coordinates for every user's covariance.
#[derive(Debug, Clone)]
pub struct CovLayout {
    pub n2: usize,
    pub users: Vec<UserId>,
    pub basis: Vec<DMatrix<f64>>,
    pub per_user: usize,
    pub dim: usize,
    pub mode: Signaling,
}

impl CovLayout {
    pub fn new(config: &NetworkConfig) -> Self {
        let n2 = 2 * config.bs_antennas;
        let basis = match config.signaling {
            Signaling::Igs => symmetric_basis(n2),
            Signaling::Pgs => proper_basis(config.bs_antennas),
        };
        let users: Vec<UserId> = (0..config.cells)
            .flat_map(|l| {
                (0..config.users_per_cell()).map(move |k| UserId { cell: l, user: k })
            })
            .collect();
        let per_user = basis.len();
        let dim = per_user * users.len();
        Self { n2, users, basis, per_user, dim, mode: config.signaling }
    }

    pub fn offset(&self, u: UserId) -> usize {
        let idx = self
            .users
            .iter()
            .position(|v| *v == u)
            .expect("user present in layout");
        idx * self.per_user
    }

    /// Orthogonal projection of the covariances onto the chart.
    pub fn to_vector(&self, covs: &CovSet) -> DVector<f64> {
        let mut x = DVector::zeros(self.dim);
        for (ui, u) in self.users.iter().enumerate() {
            let p = &covs.p[u.cell][u.user];
            for (bi, e) in self.basis.iter().enumerate() {
                x[ui * self.per_user + bi] = (p.transpose() * e).trace();
            }
        }
        x
    }

    pub fn to_covs(&self, x: &DVector<f64>, config: &NetworkConfig) -> CovSet {
        let mut p =
            vec![vec![DMatrix::zeros(self.n2, self.n2); config.users_per_cell()]; config.cells];
        for (ui, u) in self.users.iter().enumerate() {
            let mut m = DMatrix::zeros(self.n2, self.n2);
            for (bi, e) in self.basis.iter().enumerate() {
                m += e * x[ui * self.per_user + bi];
            }
            p[u.cell][u.user] = m;
        }
        CovSet { p, mode: self.mode }
    }
}

/// Compile one covariance surrogate into a concave expression over the
/// layout's coordinates.
fn surrogate_expr(s: &CovSurrogate, layout: &CovLayout) -> ConcaveExpr {
    let mut logdet_coeffs = Vec::new();
    for u in &s.num_set {
        let h = &s.recv_chan[u.cell];
        let off = layout.offset(*u);
        for (bi, e) in layout.basis.iter().enumerate() {
            let t = linalg::symmetrize(&(h * e * h.transpose()));
            if t.amax() == 0.0 {
                continue;
            }
            logdet_coeffs.push((off + bi, t));
        }
    }
    let mut affine_coeffs = Vec::new();
    for (u, g) in &s.affine {
        let off = layout.offset(*u);
        for (bi, e) in layout.basis.iter().enumerate() {
            let c = (g.transpose() * e).trace();
            if c != 0.0 {
                affine_coeffs.push((off + bi, -c));
            }
        }
    }
    ConcaveExpr {
        terms: vec![
            Term::logdet2(
                1.0 / (2.0 * LN2),
                &(DMatrix::identity(2, 2) * (s.sigma2 / 2.0)),
                &logdet_coeffs,
            ),
            Term::Affine { coeffs: affine_coeffs, constant: s.constant },
        ],
    }
}

/// Affine trace functional of one user's coordinates.
fn trace_coeffs(layout: &CovLayout, u: UserId) -> Vec<(usize, f64)> {
    let off = layout.offset(u);
    layout
        .basis
        .iter()
        .enumerate()
        .filter_map(|(bi, e)| {
            let t = e.trace();
            (t != 0.0).then_some((off + bi, t))
        })
        .collect()
}

fn domain_constraints(layout: &CovLayout, config: &NetworkConfig, problem: &mut MaxMinProblem) {
    for (ui, u) in layout.users.iter().enumerate() {
        problem.psd_blocks.push(PsdBlock {
            coords: (0..layout.per_user).map(|bi| ui * layout.per_user + bi).collect(),
            basis: layout.basis.clone(),
            dim: layout.n2,
        });
        let _ = u;
    }
    for l in 0..config.cells {
        let mut coeffs = Vec::new();
        for u in layout.users.iter().filter(|u| u.cell == l) {
            coeffs.extend(trace_coeffs(layout, *u));
        }
        problem.affine_ineq.push((coeffs, config.power_budget[l]));
    }
}

/// Strictly feasible start near the anchor: project onto the chart, add a
/// small ridge and pull the per-cell traces strictly inside the budget.
fn interior_start(
    anchor: &CovSet,
    layout: &CovLayout,
    config: &NetworkConfig,
) -> DVector<f64> {
    let mut covs = layout.to_covs(&layout.to_vector(anchor), config);
    for l in 0..config.cells {
        let ridge = config.power_budget[l] / (config.users_per_cell() * layout.n2) as f64 * 1e-6;
        for k in 0..config.users_per_cell() {
            // Clamp away any tiny negative eigenvalues, then open the cone.
            covs.p[l][k] = linalg::psd_project(&covs.p[l][k])
                + DMatrix::identity(layout.n2, layout.n2) * ridge;
        }
        let total: f64 = covs.p[l].iter().map(|m| m.trace()).sum();
        let target = config.power_budget[l] * (1.0 - 1e-7);
        if total > target {
            let s = target / total;
            for k in 0..config.users_per_cell() {
                covs.p[l][k] *= s;
            }
        }
    }
    layout.to_vector(&covs)
}

pub struct CovStepOutcome {
    pub covs: CovSet,
    /// False when the solver output lost to the anchor and was discarded.
    pub improved: bool,
    /// True objective (min weighted rate) at the returned point.
    pub objective: f64,
}

/// One majorization-minimization step over the covariances for the max-min
/// rate problem. The returned set is feasible and never scores below the
/// anchor.
pub fn solve_cov_subproblem(
    anchor: &CovSet,
    h: &RealChannels,
    config: &NetworkConfig,
    backend: &dyn ConvexBackend,
) -> Result<CovStepOutcome, SolverError> {
    let surs = cov_surrogates(anchor, h, config)
        .map_err(|e| SolverError::Numerical(e.to_string()))?;
    let layout = CovLayout::new(config);
    let mut problem = MaxMinProblem { dim: layout.dim, ..Default::default() };
    for s in &surs {
        let w = config.weights[s.term.rate_of.cell][s.term.rate_of.user];
        problem.min_terms.push(surrogate_expr(s, &layout).scaled(w));
    }
    domain_constraints(&layout, config, &mut problem);
    let x0 = interior_start(anchor, &layout, config);
    let sol = backend.solve(&problem, &x0)?;
    let candidate = layout.to_covs(&sol.x, config);

    let anchor_obj = true_min_weighted_rate(anchor, h, config)?;
    let cand_obj = true_min_weighted_rate(&candidate, h, config)?;
    if cand_obj >= anchor_obj {
        Ok(CovStepOutcome { covs: candidate, improved: true, objective: cand_obj })
    } else {
        Ok(CovStepOutcome { covs: anchor.clone(), improved: false, objective: anchor_obj })
    }
}

pub fn true_min_weighted_rate(
    covs: &CovSet,
    h: &RealChannels,
    config: &NetworkConfig,
) -> Result<f64, SolverError> {
    let rates = rates::all_rates(h, covs, config)
        .map_err(|e| SolverError::Numerical(e.to_string()))?;
    Ok(rates::min_weighted_rate(&rates, config))
}

pub fn true_min_weighted_ee(
    covs: &CovSet,
    h: &RealChannels,
    config: &NetworkConfig,
) -> Result<f64, SolverError> {
    let rates = rates::all_rates(h, covs, config)
        .map_err(|e| SolverError::Numerical(e.to_string()))?;
    let mut best = f64::INFINITY;
    for l in 0..config.cells {
        for k in 0..config.users_per_cell() {
            let ee =
                rates::energy_efficiency(rates[l][k], &covs.p[l][k], config.p_circuit, config.eta)
                    .map_err(|e| SolverError::Numerical(e.to_string()))?;
            best = best.min(config.weights[l][k] * ee);
        }
    }
    Ok(best)
}

/// Per-user weighted surrogate EE `lambda r_tilde / (P_c + eta Tr P)` at a
/// point, minimized over users; the ratio the Dinkelbach loop drives.
pub fn surrogate_min_weighted_ee(
    surs: &[CovSurrogate],
    covs: &CovSet,
    config: &NetworkConfig,
) -> Result<f64, SolverError> {
    let per_user = crate::surrogate::per_user_surrogate_rates(surs, covs, config)
        .map_err(|e| SolverError::Numerical(e.to_string()))?;
    let mut best = f64::INFINITY;
    for l in 0..config.cells {
        for k in 0..config.users_per_cell() {
            let denom = config.p_circuit + config.eta * covs.p[l][k].trace();
            best = best.min(config.weights[l][k] * per_user[l][k] / denom);
        }
    }
    Ok(best)
}

pub struct GdaOutcome {
    pub covs: CovSet,
    /// Ratio parameter sequence, one entry per accepted update (starts at the
    /// anchor's ratio). Non-decreasing by construction.
    pub mu_sequence: Vec<f64>,
    pub improved: bool,
    /// True min weighted EE at the returned point.
    pub objective: f64,
    pub qos_feasible: bool,
}

#[derive(Debug, Clone)]
pub struct GdaOptions {
    pub max_inner: usize,
    pub delta: f64,
}

impl Default for GdaOptions {
    fn default() -> Self {
        Self { max_inner: 20, delta: 1e-5 }
    }
}

/// Covariance step of the EE problem: majorize the rates once at the anchor,
/// then solve the fractional program with the generalized Dinkelbach
/// iteration (maximize `e` s.t. `lambda r_tilde - mu (P_c + eta Tr P) >= e`
/// plus the rate floors, updating `mu` to the worst achieved ratio).
pub fn gda_cov_subproblem(
    anchor: &CovSet,
    h: &RealChannels,
    config: &NetworkConfig,
    backend: &dyn ConvexBackend,
    opts: &GdaOptions,
) -> Result<GdaOutcome, SolverError> {
    let surs = cov_surrogates(anchor, h, config)
        .map_err(|e| SolverError::Numerical(e.to_string()))?;
    let layout = CovLayout::new(config);

    // Anchor must satisfy the rate floors (the caller restores feasibility
    // first); tolerate solver-level slop.
    let anchor_rates = rates::all_rates(h, anchor, config)
        .map_err(|e| SolverError::Numerical(e.to_string()))?;
    let qos_ok = (0..config.cells).all(|l| {
        (0..config.users_per_cell())
            .all(|k| anchor_rates[l][k] >= config.rate_thresholds[l][k] - 1e-6)
    });
    if !qos_ok {
        return Ok(GdaOutcome {
            covs: anchor.clone(),
            mu_sequence: vec![],
            improved: false,
            objective: true_min_weighted_ee(anchor, h, config)?,
            qos_feasible: false,
        });
    }

    let exprs: Vec<(ConcaveExpr, UserId)> = surs
        .iter()
        .map(|s| (surrogate_expr(s, &layout), s.term.rate_of))
        .collect();

    let mut current = anchor.clone();
    let mut mu = surrogate_min_weighted_ee(&surs, &current, config)?;
    let mut mu_sequence = vec![mu];

    for _ in 0..opts.max_inner {
        let mut problem = MaxMinProblem { dim: layout.dim, ..Default::default() };
        let x0 = interior_start(&current, &layout, config);
        for ((expr, rate_of), s) in exprs.iter().zip(&surs) {
            let w = config.weights[rate_of.cell][rate_of.user];
            // lambda r_tilde - mu (P_c + eta Tr P_target).
            let mut penal: Vec<(usize, f64)> = trace_coeffs(&layout, *rate_of);
            for (_, c) in penal.iter_mut() {
                *c *= -mu * config.eta;
            }
            let mut e = expr.clone().scaled(w);
            e.terms.push(Term::Affine { coeffs: penal, constant: -mu * config.p_circuit });
            problem.min_terms.push(e);

            // Rate floor on every branch; clamp the right-hand side just
            // below the start value so the barrier has an interior when the
            // anchor sits exactly on the floor.
            let rhs_nominal = config.rate_thresholds[s.term.rate_of.cell][s.term.rate_of.user];
            let at_start = expr.value(&x0).ok_or_else(|| {
                SolverError::Numerical("surrogate undefined at start".into())
            })?;
            let rhs = rhs_nominal.min(at_start - 1e-9 * (1.0 + rhs_nominal.abs()));
            problem.side.push((expr.clone(), rhs));
        }
        domain_constraints(&layout, config, &mut problem);

        let sol = backend.solve(&problem, &x0)?;
        let cand = layout.to_covs(&sol.x, config);
        let mu_new = surrogate_min_weighted_ee(&surs, &cand, config)?;
        if mu_new < mu {
            // Exact parametric solves cannot decrease the ratio; a drop
            // signals solver noise at convergence.
            break;
        }
        current = cand;
        mu = mu_new;
        mu_sequence.push(mu);
        if sol.objective <= opts.delta {
            break;
        }
    }

    let anchor_obj = true_min_weighted_ee(anchor, h, config)?;
    let cur_obj = true_min_weighted_ee(&current, h, config)?;
    if cur_obj >= anchor_obj {
        Ok(GdaOutcome {
            covs: current,
            mu_sequence,
            improved: true,
            objective: cur_obj,
            qos_feasible: true,
        })
    } else {
        Ok(GdaOutcome {
            covs: anchor.clone(),
            mu_sequence,
            improved: false,
            objective: anchor_obj,
            qos_feasible: true,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Signaling;
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn bases_are_orthonormal() {
        for basis in [symmetric_basis(4), proper_basis(2)] {
            for (i, a) in basis.iter().enumerate() {
                for (j, b) in basis.iter().enumerate() {
                    let dot = (a.transpose() * b).trace();
                    let expect = if i == j { 1.0 } else { 0.0 };
                    assert_relative_eq!(dot, expect, epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn proper_basis_spans_proper_matrices() {
        let basis = proper_basis(3);
        assert_eq!(basis.len(), 9); // n^2 real dof of a Hermitian matrix
        for e in &basis {
            assert!(crate::model::is_proper(e, 1e-12));
            assert!((e - e.transpose()).amax() < 1e-12);
        }
    }

    #[test]
    fn layout_round_trips_and_projects() {
        let mut config = crate::experiment::toy_config();
        config.signaling = Signaling::Pgs;
        config.bs_antennas = 2;
        let layout = CovLayout::new(&config);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        // A proper matrix survives the round trip.
        let q = vec![
            vec![
                num_complex::Complex64::new(1.0, 0.0),
                num_complex::Complex64::new(0.2, 0.3),
            ],
            vec![
                num_complex::Complex64::new(0.2, -0.3),
                num_complex::Complex64::new(0.8, 0.0),
            ],
        ];
        let _ = &mut rng;
        let p = crate::model::proper_covariance(&q).unwrap();
        let mut covs = CovSet::isotropic(&config);
        let n2 = 2 * config.bs_antennas;
        assert_eq!(p.nrows(), n2);
        covs.p[0][0] = p.clone();
        let x = layout.to_vector(&covs);
        let back = layout.to_covs(&x, &config);
        assert_relative_eq!(back.p[0][0], p, epsilon = 1e-12);
        // A non-proper matrix lands on its proper projection.
        let raw = DMatrix::from_fn(n2, n2, |a, b| ((a * 7 + b * 3) % 5) as f64 / 5.0);
        covs.p[0][1] = crate::linalg::symmetrize(&raw);
        let back = layout.to_covs(&layout.to_vector(&covs), &config);
        assert_relative_eq!(
            back.p[0][1],
            crate::model::proper_project(&covs.p[0][1]),
            epsilon = 1e-12
        );
    }

    #[test]
    fn interior_start_is_strictly_feasible() {
        let config = crate::experiment::toy_config();
        let layout = CovLayout::new(&config);
        let covs = CovSet::isotropic(&config);
        let x0 = interior_start(&covs, &layout, &config);
        let back = layout.to_covs(&x0, &config);
        for l in 0..config.cells {
            assert!(back.trace_in_cell(l) < config.power_budget[l]);
            for k in 0..config.users_per_cell() {
                assert!(crate::linalg::min_eigenvalue(&back.p[l][k]) > 0.0);
            }
        }
    }
}
