//! Alternating-optimization drivers: the max-min rate loop and the max-min
//! energy-efficiency loop (Dinkelbach inner iteration over covariances).
//!
//! Both loops alternate a covariance step and a reflecting-coefficient step
//! and only ever accept iterates that do not decrease the true objective, so
//! every recorded trace is non-decreasing.

use std::time::Instant;

use serde::Serialize;

use crate::channel::RealChannels;
use crate::model::{ChannelSet, CovSet, NetworkConfig, ReflectState};
use crate::rates;
use crate::ris;
use crate::surrogate::theta_context;

use super::backend::{ConvexBackend, SolverError};
use super::cov::{
    gda_cov_subproblem, solve_cov_subproblem, true_min_weighted_ee, true_min_weighted_rate,
    GdaOptions,
};
use super::theta::{accept_theta_update, solve_theta_subproblem, EeGoals};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Phase {
    Init,
    CovStep,
    ThetaStep,
}

impl Phase {
    fn as_str(self) -> &'static str {
        match self {
            Phase::Init => "init",
            Phase::CovStep => "cov",
            Phase::ThetaStep => "theta",
        }
    }
}

/// One row of the iteration log.
#[derive(Debug, Clone, Serialize)]
pub struct TraceRow {
    pub iter: usize,
    pub phase: Phase,
    /// Min weighted rate (rate mode) or min weighted EE (EE mode) after the
    /// phase.
    pub objective: f64,
    pub accepted: bool,
    /// Current Dinkelbach ratio, EE mode only.
    pub mu: Option<f64>,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct SolveTrace {
    pub rows: Vec<TraceRow>,
    pub termination: String,
}

impl SolveTrace {
    fn push(&mut self, iter: usize, phase: Phase, objective: f64, accepted: bool, mu: Option<f64>, t0: Instant) {
        self.rows.push(TraceRow {
            iter,
            phase,
            objective,
            accepted,
            mu,
            wall_ms: t0.elapsed().as_secs_f64() * 1e3,
        });
    }

    pub fn final_objective(&self) -> f64 {
        self.rows.last().map_or(f64::NAN, |r| r.objective)
    }

    /// One row per line: `iter,phase,objective,accepted,mu,wall_ms`.
    pub fn to_text(&self) -> String {
        let mut out = String::from("iter,phase,objective,accepted,mu,wall_ms\n");
        for r in &self.rows {
            let mu = r.mu.map_or(String::from(""), |m| format!("{m:.12e}"));
            out.push_str(&format!(
                "{},{},{:.12e},{},{},{:.3}\n",
                r.iter,
                r.phase.as_str(),
                r.objective,
                r.accepted,
                mu,
                r.wall_ms
            ));
        }
        out.push_str(&format!("# termination: {}\n", self.termination));
        out
    }
}

#[derive(Debug, Clone)]
pub struct AoOptions {
    /// Relative improvement threshold of the outer loop.
    pub epsilon: f64,
    pub max_outer: usize,
    /// Optimize the reflecting coefficients (false freezes them).
    pub optimize_theta: bool,
    /// Initial slack of the linearized unit-modulus constraint, halved per
    /// outer iteration down to the floor.
    pub eps_slack0: f64,
    pub eps_slack_floor: f64,
    /// Re-anchored surrogate solves of the coefficient step per outer
    /// iteration (1 = a single majorization step).
    pub theta_inner: usize,
    /// For the enclosing feasibility set `T_U`, also track the restricted-set
    /// step dynamics (their iterates are `T_U`-feasible) and keep the best.
    pub set_composition: bool,
    pub gda: GdaOptions,
    /// Outer-iteration cap of the QoS restoration pass.
    pub restore_max: usize,
}

impl Default for AoOptions {
    fn default() -> Self {
        Self {
            epsilon: 1e-3,
            max_outer: 50,
            optimize_theta: true,
            eps_slack0: 0.01,
            eps_slack_floor: 1e-4,
            theta_inner: 1,
            set_composition: true,
            gda: GdaOptions::default(),
            restore_max: 20,
        }
    }
}

pub struct AoOutcome {
    pub covs: CovSet,
    pub theta: ReflectState,
    pub trace: SolveTrace,
    /// True when every user meets its rate floor at the final point (always
    /// reported, only enforced by the EE loop).
    pub qos_feasible: bool,
}

fn prepare_inputs(
    covs0: &CovSet,
    theta0: &ReflectState,
    config: &NetworkConfig,
) -> (CovSet, ReflectState) {
    // Snap the starting point onto the declared feasibility structures.
    let layout = super::cov::CovLayout::new(config);
    let covs = layout.to_covs(&layout.to_vector(covs0), config);
    let theta = ris::project_to_set(theta0, config.feasibility_set, &config.tc_params);
    (covs, theta)
}

fn relative_gain(prev: f64, cur: f64) -> f64 {
    (cur - prev) / prev.abs().max(1e-12)
}

/// Alternating max-min weighted rate optimization (covariances, then
/// reflecting coefficients with the acceptance rule), until the relative
/// objective gain drops below `epsilon` or `max_outer` iterations.
pub fn mwrm_ao(
    covs0: &CovSet,
    theta0: &ReflectState,
    channels: &ChannelSet,
    config: &NetworkConfig,
    backend: &dyn ConvexBackend,
    opts: &AoOptions,
) -> Result<AoOutcome, SolverError> {
    if use_enclosing_set_composition(config, opts) {
        return enclosing_set_composition(covs0, theta0, channels, config, backend, opts, false);
    }
    mwrm_ao_impl(covs0, theta0, channels, config, backend, opts, None)
}

/// The restricted-set step dynamics (unit-modulus linearization with its
/// normalization, amplitude-law coupling with its phase projection) only ever
/// visit points that are feasible for the enclosing set `T_U`. The `T_U` run
/// therefore tracks all three step dynamics from the common initial point and
/// keeps the best final objective, which realizes the set inclusion in the
/// returned values.
fn use_enclosing_set_composition(config: &NetworkConfig, opts: &AoOptions) -> bool {
    opts.optimize_theta
        && opts.set_composition
        && config.feasibility_set == crate::model::FeasibilitySet::U
}

fn enclosing_set_composition(
    covs0: &CovSet,
    theta0: &ReflectState,
    channels: &ChannelSet,
    config: &NetworkConfig,
    backend: &dyn ConvexBackend,
    opts: &AoOptions,
    ee_mode: bool,
) -> Result<AoOutcome, SolverError> {
    let inner_opts = AoOptions { set_composition: false, ..opts.clone() };
    let mut best: Option<AoOutcome> = None;
    for step_set in [
        crate::model::FeasibilitySet::U,
        crate::model::FeasibilitySet::I,
        crate::model::FeasibilitySet::C,
    ] {
        let mut step_config = config.clone();
        step_config.feasibility_set = step_set;
        let run = if ee_mode {
            mweem_ao(covs0, theta0, channels, &step_config, backend, &inner_opts)?
        } else {
            mwrm_ao_impl(covs0, theta0, channels, &step_config, backend, &inner_opts, None)?
        };
        let better = match &best {
            None => true,
            Some(b) => {
                // Only QoS-feasible runs may displace a QoS-feasible one.
                (run.qos_feasible || !b.qos_feasible)
                    && run.trace.final_objective() > b.trace.final_objective()
            }
        };
        if better {
            best = Some(run);
        }
    }
    let mut out = best.expect("three dynamics ran");
    out.theta.set_tag = crate::model::FeasibilitySet::U;
    Ok(out)
}

/// Same loop with an early-exit predicate, used by the QoS restoration pass.
fn mwrm_ao_impl(
    covs0: &CovSet,
    theta0: &ReflectState,
    channels: &ChannelSet,
    config: &NetworkConfig,
    backend: &dyn ConvexBackend,
    opts: &AoOptions,
    stop_when: Option<&dyn Fn(&CovSet, &RealChannels) -> bool>,
) -> Result<AoOutcome, SolverError> {
    let t0 = Instant::now();
    let (mut covs, mut theta) = prepare_inputs(covs0, theta0, config);
    let ctx = if opts.optimize_theta {
        Some(theta_context(channels, config).map_err(|e| SolverError::Numerical(e.to_string()))?)
    } else {
        None
    };
    let mut trace = SolveTrace::default();
    let mut h = RealChannels::compute(channels, &theta, config)
        .map_err(|e| SolverError::Numerical(e.to_string()))?;
    let mut obj = true_min_weighted_rate(&covs, &h, config)?;
    trace.push(0, Phase::Init, obj, true, None, t0);
    let mut eps_slack = opts.eps_slack0;
    let mut termination = "max_outer".to_string();

    for iter in 1..=opts.max_outer {
        let prev_obj = obj;

        let step = solve_cov_subproblem(&covs, &h, config, backend)?;
        covs = step.covs;
        obj = step.objective;
        trace.push(iter, Phase::CovStep, obj, step.improved, None, t0);

        if let Some(ctx) = &ctx {
            let mut any_accepted = false;
            for inner in 0..opts.theta_inner.max(1) {
                let candidate = solve_theta_subproblem(
                    &covs, &theta, ctx, config, backend, eps_slack, None,
                )?;
                let out = accept_theta_update(&candidate, &theta, &covs, channels, config, false)?;
                theta = out.state;
                any_accepted |= out.accepted;
                let stalled = !out.accepted
                    || (inner > 0 && (out.objective - obj) <= 1e-9 * (1.0 + obj.abs()));
                obj = out.objective;
                if stalled {
                    break;
                }
            }
            trace.push(iter, Phase::ThetaStep, obj, any_accepted, None, t0);
            h = RealChannels::compute(channels, &theta, config)
                .map_err(|e| SolverError::Numerical(e.to_string()))?;
        }
        eps_slack = (eps_slack / 2.0).max(opts.eps_slack_floor);

        if let Some(stop) = stop_when {
            if stop(&covs, &h) {
                termination = "stop_rule".into();
                break;
            }
        }
        if relative_gain(prev_obj, obj) < opts.epsilon {
            termination = "converged".into();
            break;
        }
    }
    trace.termination = termination;
    let qos_feasible = qos_satisfied(&covs, &h, config, 1e-6)?;
    Ok(AoOutcome { covs, theta, trace, qos_feasible })
}

fn qos_satisfied(
    covs: &CovSet,
    h: &RealChannels,
    config: &NetworkConfig,
    tol: f64,
) -> Result<bool, SolverError> {
    let r = rates::all_rates(h, covs, config).map_err(|e| SolverError::Numerical(e.to_string()))?;
    Ok((0..config.cells).all(|l| {
        (0..config.users_per_cell()).all(|k| r[l][k] >= config.rate_thresholds[l][k] - tol)
    }))
}

/// Alternating max-min weighted EE optimization. Starts with a max-min rate
/// restoration pass when the initial point misses a rate floor; reports
/// infeasibility when restoration cannot reach the floors.
pub fn mweem_ao(
    covs0: &CovSet,
    theta0: &ReflectState,
    channels: &ChannelSet,
    config: &NetworkConfig,
    backend: &dyn ConvexBackend,
    opts: &AoOptions,
) -> Result<AoOutcome, SolverError> {
    if use_enclosing_set_composition(config, opts) {
        return enclosing_set_composition(covs0, theta0, channels, config, backend, opts, true);
    }
    let t0 = Instant::now();
    let (mut covs, mut theta) = prepare_inputs(covs0, theta0, config);
    let mut h = RealChannels::compute(channels, &theta, config)
        .map_err(|e| SolverError::Numerical(e.to_string()))?;

    if !qos_satisfied(&covs, &h, config, 0.0)? {
        let restore_opts = AoOptions {
            epsilon: 0.0,
            max_outer: opts.restore_max,
            ..opts.clone()
        };
        let restored = mwrm_ao_impl(
            &covs,
            &theta,
            channels,
            config,
            backend,
            &restore_opts,
            Some(&|c: &CovSet, hh: &RealChannels| {
                qos_satisfied(c, hh, config, 0.0).unwrap_or(false)
            }),
        )?;
        covs = restored.covs;
        theta = restored.theta;
        h = RealChannels::compute(channels, &theta, config)
            .map_err(|e| SolverError::Numerical(e.to_string()))?;
        if !qos_satisfied(&covs, &h, config, 1e-9)? {
            let mut trace = restored.trace;
            trace.termination = "qos_infeasible".into();
            return Ok(AoOutcome { covs, theta, trace, qos_feasible: false });
        }
    }

    let ctx = if opts.optimize_theta {
        Some(theta_context(channels, config).map_err(|e| SolverError::Numerical(e.to_string()))?)
    } else {
        None
    };
    let mut trace = SolveTrace::default();
    let mut obj = true_min_weighted_ee(&covs, &h, config)?;
    trace.push(0, Phase::Init, obj, true, None, t0);
    let mut eps_slack = opts.eps_slack0;
    let mut termination = "max_outer".to_string();

    for iter in 1..=opts.max_outer {
        let prev_obj = obj;

        let step = gda_cov_subproblem(&covs, &h, config, backend, &opts.gda)?;
        if !step.qos_feasible {
            termination = "qos_infeasible".into();
            trace.termination = termination;
            return Ok(AoOutcome { covs, theta, trace, qos_feasible: false });
        }
        covs = step.covs;
        obj = step.objective;
        trace.push(iter, Phase::CovStep, obj, step.improved, step.mu_sequence.last().copied(), t0);

        if let Some(ctx) = &ctx {
            let mut any_accepted = false;
            for inner in 0..opts.theta_inner.max(1) {
                let h_cur = RealChannels::compute(channels, &theta, config)
                    .map_err(|e| SolverError::Numerical(e.to_string()))?;
                let anchor_rates = rates::all_rates(&h_cur, &covs, config)
                    .map_err(|e| SolverError::Numerical(e.to_string()))?;
                let goals = EeGoals::from_state(&covs, &anchor_rates, config);
                let candidate = solve_theta_subproblem(
                    &covs, &theta, ctx, config, backend, eps_slack, Some(&goals),
                )?;
                let out = accept_theta_update(&candidate, &theta, &covs, channels, config, true)?;
                theta = out.state;
                any_accepted |= out.accepted;
                let stalled = !out.accepted
                    || (inner > 0 && (out.objective - obj) <= 1e-9 * (1.0 + obj.abs()));
                obj = out.objective;
                if stalled {
                    break;
                }
            }
            trace.push(iter, Phase::ThetaStep, obj, any_accepted, None, t0);
            h = RealChannels::compute(channels, &theta, config)
                .map_err(|e| SolverError::Numerical(e.to_string()))?;
        }
        eps_slack = (eps_slack / 2.0).max(opts.eps_slack_floor);

        if relative_gain(prev_obj, obj) < opts.epsilon {
            termination = "converged".into();
            break;
        }
    }
    trace.termination = termination;
    let qos_feasible = qos_satisfied(&covs, &h, config, 1e-6)?;
    Ok(AoOutcome { covs, theta, trace, qos_feasible })
}
