//! Reflecting-coefficient subproblems for the three feasibility sets, plus
//! the update acceptance rule that keeps the outer objective non-decreasing.
//!
//! The surrogate problem is always convex: concave-quadratic rate bounds over
//! per-element unit disks. Set I adds the linearized unit-modulus minorants
//! (with a slack that shrinks across outer iterations) and normalizes the
//! solution back to the circle; set C optimizes over the relaxed amplitude
//! box and re-couples amplitude to phase afterwards.

use nalgebra::{DMatrix, DVector};

use crate::channel::RealChannels;
use crate::model::{CovSet, FeasibilitySet, NetworkConfig, ReflectState};
use crate::rates::{self, LN2};
use crate::ris;
use crate::surrogate::{theta_surrogates, ThetaContext, ThetaSurrogate};

use super::backend::{ConcaveExpr, ConvexBackend, MaxMinProblem, SolverError, Term};
use super::cov::{true_min_weighted_ee, true_min_weighted_rate};

/// Interior push used when the anchor touches a constraint boundary.
const PUSH: f64 = 1e-4;

fn surrogate_expr(s: &ThetaSurrogate, ctx: &ThetaContext, n_bs: usize) -> ConcaveExpr {
    let dim = ctx.layout.dim();
    let lin_coeffs: Vec<(usize, f64)> = s
        .lin
        .iter()
        .enumerate()
        .filter_map(|(j, c)| (*c != 0.0).then_some((j, *c)))
        .collect();
    let mut terms = vec![Term::Affine { coeffs: lin_coeffs, constant: s.constant }];
    // Stack every quadratic piece into a single factor for one Gram matrix.
    let rows_per_piece = 2 * 2 * n_bs;
    let total_rows = rows_per_piece * s.pieces.len();
    if total_rows > 0 {
        let mut f = DMatrix::zeros(total_rows, dim);
        let mut e = DVector::zeros(total_rows);
        for (pi, piece) in s.pieces.iter().enumerate() {
            let chan = &ctx.chans[piece.recv.cell][piece.recv.user][piece.bs];
            let r0 = pi * rows_per_piece;
            let base_prod = &piece.left * &chan.base * &piece.right;
            for (idx, v) in base_prod.iter().enumerate() {
                e[r0 + idx] = *v;
            }
            for (j, k) in &chan.coeffs {
                let prod = &piece.left * k * &piece.right;
                for (idx, v) in prod.iter().enumerate() {
                    f[(r0 + idx, *j)] += *v;
                }
            }
        }
        terms.push(Term::neg_quad(1.0 / (2.0 * LN2), f, e));
    }
    ConcaveExpr { terms }
}

/// Strictly feasible start for the relaxed problem of each set, obtained by
/// nudging every element's radius off the active boundaries.
fn interior_start(
    anchor: &ReflectState,
    ctx: &ThetaContext,
    set: FeasibilitySet,
    theta_min: f64,
    epsilon_slack: f64,
) -> DVector<f64> {
    let mut pushed = anchor.clone();
    for row in pushed.theta.iter_mut() {
        for v in row.iter_mut() {
            let r = v.norm();
            match set {
                FeasibilitySet::U => {
                    if r > 1.0 - PUSH {
                        *v *= (1.0 - PUSH) / r.max(1e-12);
                    }
                }
                FeasibilitySet::I => {
                    let delta = (epsilon_slack / 4.0).min(PUSH);
                    let base = if r < 1e-12 { num_complex::Complex64::new(1.0, 0.0) } else { *v / r };
                    *v = base * (1.0 - delta);
                }
                FeasibilitySet::C => {
                    let rb = r.max(theta_min.max(1e-9));
                    let demand = if theta_min > 1e-9 {
                        (theta_min * theta_min + rb * rb) / (2.0 * rb)
                    } else {
                        0.0
                    };
                    let target = (demand.max(rb) + PUSH).min(1.0 - PUSH);
                    let base = if r < 1e-12 { num_complex::Complex64::new(1.0, 0.0) } else { *v / r };
                    *v = base * target;
                }
            }
        }
    }
    ctx.layout.to_vector(&pushed)
}

/// Goals of the EE-mode step: per-user objective scales and rate floors.
#[derive(Debug, Clone)]
pub struct EeGoals {
    /// `lambda / (P_c + eta Tr P)` per user: the weighted-EE scale.
    pub ee_scale: Vec<Vec<f64>>,
    /// Rate floor kept during the step: `min(r_th, anchor rate)` per user.
    pub rate_floor: Vec<Vec<f64>>,
}

impl EeGoals {
    pub fn from_state(
        covs: &CovSet,
        anchor_rates: &[Vec<f64>],
        config: &NetworkConfig,
    ) -> Self {
        let ee_scale = (0..config.cells)
            .map(|l| {
                (0..config.users_per_cell())
                    .map(|k| {
                        config.weights[l][k]
                            / (config.p_circuit + config.eta * covs.p[l][k].trace())
                    })
                    .collect()
            })
            .collect();
        let rate_floor = (0..config.cells)
            .map(|l| {
                (0..config.users_per_cell())
                    .map(|k| config.rate_thresholds[l][k].min(anchor_rates[l][k]))
                    .collect()
            })
            .collect();
        Self { ee_scale, rate_floor }
    }
}

/// Solve the surrogate problem over the reflecting coefficients and map the
/// solution back onto the feasibility set. The result is a candidate; the
/// caller decides acceptance.
pub fn solve_theta_subproblem(
    covs: &CovSet,
    theta_anchor: &ReflectState,
    ctx: &ThetaContext,
    config: &NetworkConfig,
    backend: &dyn ConvexBackend,
    epsilon_slack: f64,
    ee_goals: Option<&EeGoals>,
) -> Result<ReflectState, SolverError> {
    let set = config.feasibility_set;
    let surs = theta_surrogates(covs, theta_anchor, ctx, config)
        .map_err(|e| SolverError::Numerical(e.to_string()))?;
    let dim = ctx.layout.dim();
    let mut problem = MaxMinProblem { dim, ..Default::default() };

    let x0 = interior_start(theta_anchor, ctx, set, config.tc_params.theta_min, epsilon_slack);

    for s in &surs {
        let u = s.term.rate_of;
        let expr = surrogate_expr(s, ctx, config.bs_antennas);
        let scale = match ee_goals {
            None => config.weights[u.cell][u.user],
            Some(g) => g.ee_scale[u.cell][u.user],
        };
        problem.min_terms.push(expr.clone().scaled(scale));
        if let Some(g) = ee_goals {
            // Keep the rate floor reachable: expand the constraint at the
            // pushed start when the anchor sits exactly on the floor.
            let nominal = g.rate_floor[u.cell][u.user];
            let at_start = expr
                .value(&x0)
                .ok_or_else(|| SolverError::Numerical("surrogate undefined at start".into()))?;
            let rhs = nominal.min(at_start - 1e-9 * (1.0 + nominal.abs()));
            problem.side.push((expr, rhs));
        }
    }

    for m in 0..ctx.layout.ris_count {
        for n in 0..ctx.layout.ris_elements {
            let ir = ctx.layout.index(m, n, false);
            let ii = ctx.layout.index(m, n, true);
            problem.disks.push((ir, ii, 1.0));
            match set {
                FeasibilitySet::U => {}
                FeasibilitySet::I => {
                    let prev = theta_anchor.theta[m][n];
                    let prev = if prev.norm() < 1e-12 {
                        num_complex::Complex64::new(1.0, 0.0)
                    } else {
                        prev / prev.norm()
                    };
                    let minorant = ris::linearize_unit_modulus(prev, epsilon_slack);
                    problem.halfspaces.push((
                        vec![(ir, minorant.coef_re), (ii, minorant.coef_im)],
                        minorant.rhs - minorant.offset,
                    ));
                }
                FeasibilitySet::C => {
                    let tmin = config.tc_params.theta_min;
                    if tmin > 1e-9 {
                        let minorant = ris::linearize_min_modulus(theta_anchor.theta[m][n], tmin);
                        problem.halfspaces.push((
                            vec![(ir, minorant.coef_re), (ii, minorant.coef_im)],
                            minorant.rhs - minorant.offset,
                        ));
                    }
                }
            }
        }
    }

    let sol = backend.solve(&problem, &x0)?;
    let raw = ctx.layout.to_state(&sol.x, set);
    Ok(ris::project_to_set(&raw, set, &config.tc_params))
}

pub struct AcceptOutcome {
    pub state: ReflectState,
    pub accepted: bool,
    /// Outer objective at the returned state (min weighted rate, or min
    /// weighted EE in EE mode).
    pub objective: f64,
}

fn qos_margin(
    covs: &CovSet,
    h: &RealChannels,
    config: &NetworkConfig,
) -> Result<f64, SolverError> {
    let rates = rates::all_rates(h, covs, config)
        .map_err(|e| SolverError::Numerical(e.to_string()))?;
    let mut margin = f64::INFINITY;
    for l in 0..config.cells {
        for k in 0..config.users_per_cell() {
            margin = margin.min(rates[l][k] - config.rate_thresholds[l][k]);
        }
    }
    Ok(margin)
}

/// Keep the candidate only when the true outer objective does not decrease
/// (ties go to the candidate). In EE mode the candidate additionally must
/// not break rate floors the previous state satisfied.
pub fn accept_theta_update(
    candidate: &ReflectState,
    previous: &ReflectState,
    covs: &CovSet,
    channels: &crate::model::ChannelSet,
    config: &NetworkConfig,
    ee_mode: bool,
) -> Result<AcceptOutcome, SolverError> {
    // The interior-point candidate for set U never quite reaches the disk
    // boundary; when the full-amplitude projection of the candidate scores
    // higher it stands in for the candidate (it is feasible for set U).
    let mut candidate = candidate.clone();
    if config.feasibility_set == crate::model::FeasibilitySet::U {
        let mut probe = ris::project_to_set(
            &candidate,
            crate::model::FeasibilitySet::I,
            &config.tc_params,
        );
        probe.set_tag = crate::model::FeasibilitySet::U;
        let h_a = RealChannels::compute(channels, &candidate, config)
            .map_err(|e| SolverError::Numerical(e.to_string()))?;
        let h_b = RealChannels::compute(channels, &probe, config)
            .map_err(|e| SolverError::Numerical(e.to_string()))?;
        let (va, vb) = if ee_mode {
            (true_min_weighted_ee(covs, &h_a, config)?, true_min_weighted_ee(covs, &h_b, config)?)
        } else {
            (
                true_min_weighted_rate(covs, &h_a, config)?,
                true_min_weighted_rate(covs, &h_b, config)?,
            )
        };
        if vb > va {
            candidate = probe;
        }
    }
    let candidate = &candidate;
    let h_prev = RealChannels::compute(channels, previous, config)
        .map_err(|e| SolverError::Numerical(e.to_string()))?;
    let h_cand = RealChannels::compute(channels, candidate, config)
        .map_err(|e| SolverError::Numerical(e.to_string()))?;
    let (prev_obj, cand_obj) = if ee_mode {
        (
            true_min_weighted_ee(covs, &h_prev, config)?,
            true_min_weighted_ee(covs, &h_cand, config)?,
        )
    } else {
        (
            true_min_weighted_rate(covs, &h_prev, config)?,
            true_min_weighted_rate(covs, &h_cand, config)?,
        )
    };
    let mut take = cand_obj >= prev_obj;
    if take && ee_mode {
        let m_prev = qos_margin(covs, &h_prev, config)?;
        let m_cand = qos_margin(covs, &h_cand, config)?;
        if m_cand < -1e-9 && m_cand < m_prev {
            take = false;
        }
    }
    Ok(if take {
        AcceptOutcome { state: candidate.clone(), accepted: true, objective: cand_obj }
    } else {
        AcceptOutcome { state: previous.clone(), accepted: false, objective: prev_obj }
    })
}
