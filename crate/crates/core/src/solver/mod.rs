//! Convex subproblems and the alternating-optimization drivers.

pub mod ao;
pub mod backend;
pub mod cov;
pub mod theta;

pub use ao::{mweem_ao, mwrm_ao, AoOptions, AoOutcome, Phase, SolveTrace, TraceRow};
pub use backend::{
    BackendCaps, BackendSolution, BarrierSolver, ConcaveExpr, ConvexBackend, MaxMinProblem,
    PsdBlock, SolveStatus, SolverError, Term,
};
pub use cov::{
    gda_cov_subproblem, solve_cov_subproblem, surrogate_min_weighted_ee, true_min_weighted_ee,
    true_min_weighted_rate, CovLayout, CovStepOutcome, GdaOptions, GdaOutcome,
};
pub use theta::{accept_theta_update, solve_theta_subproblem, AcceptOutcome, EeGoals};
