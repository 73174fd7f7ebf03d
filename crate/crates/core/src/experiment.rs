//! Monte Carlo harness: comparison schemes, scenario definitions, paired
//! sweeps and result aggregation.
//!
//! A scheme names a full algorithm configuration (signaling family, RIS
//! handling, decoding mode). Within a trial every scheme consumes the same
//! topology and channel realization, so scheme comparisons are paired. A
//! trial that fails for any scheme is dropped for all schemes.

use rand::prelude::*;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{sample_channels, sample_topology, RealChannels};
use crate::model::{
    ChannelSet, CovSet, FeasibilitySet, Geometry, NetworkConfig, RateReport, ReflectState,
    Signaling,
};
use crate::rates;
use crate::ris::{self, TcParams};
use crate::solver::{
    mweem_ao, mwrm_ao, AoOptions, AoOutcome, BarrierSolver, ConvexBackend, SolveTrace, SolverError,
};

/// How the reflecting coefficients are handled by a scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RisMode {
    /// Alternating optimization over the given feasibility set.
    Optimized(FeasibilitySet),
    /// Fixed random unit-modulus coefficients.
    Random,
    /// No RIS path at all (all BS-to-RIS blocks zeroed).
    None,
}

/// One comparison scheme: signaling x RIS handling x decoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scheme {
    pub signaling: Signaling,
    pub ris: RisMode,
    pub sic: bool,
}

impl Scheme {
    /// Canonical name, e.g. `IR_UN` (IGS, optimized RIS over set U, NOMA),
    /// `PR_RN` (PGS, random RIS, NOMA), `IN` (IGS, no RIS, NOMA), `IR_UT`
    /// (IGS, optimized RIS over set U, TIN).
    pub fn name(&self) -> String {
        let sig = match self.signaling {
            Signaling::Igs => 'I',
            Signaling::Pgs => 'P',
        };
        let dec = if self.sic { 'N' } else { 'T' };
        match self.ris {
            RisMode::Optimized(set) => format!("{sig}R_{}{dec}", set.as_str()),
            RisMode::Random => format!("{sig}R_R{dec}"),
            RisMode::None => format!("{sig}{dec}"),
        }
    }

    pub fn parse(s: &str) -> Option<Scheme> {
        let chars: Vec<char> = s.chars().collect();
        let signaling = match chars.first()? {
            'I' => Signaling::Igs,
            'P' => Signaling::Pgs,
            _ => return None,
        };
        let dec = |c: char| match c {
            'N' => Some(true),
            'T' => Some(false),
            _ => None,
        };
        match chars.len() {
            2 => Some(Scheme { signaling, ris: RisMode::None, sic: dec(chars[1])? }),
            5 if chars[1] == 'R' && chars[2] == '_' => {
                let ris = match chars[3] {
                    'U' => RisMode::Optimized(FeasibilitySet::U),
                    'I' => RisMode::Optimized(FeasibilitySet::I),
                    'C' => RisMode::Optimized(FeasibilitySet::C),
                    'R' => RisMode::Random,
                    _ => return None,
                };
                Some(Scheme { signaling, ris, sic: dec(chars[4])? })
            }
            _ => None,
        }
    }

    /// Specialize a base configuration to this scheme.
    pub fn apply(&self, base: &NetworkConfig) -> NetworkConfig {
        let mut config = base.clone();
        config.signaling = self.signaling;
        config.sic_enabled = self.sic;
        if let RisMode::Optimized(set) = self.ris {
            config.feasibility_set = set;
        }
        config
    }
}

/// Objective family of a scenario run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Metric {
    Rate,
    EnergyEfficiency,
}

impl Metric {
    pub fn as_str(&self) -> &'static str {
        match self {
            Metric::Rate => "rate",
            Metric::EnergyEfficiency => "ee",
        }
    }
}

/// Variable swept across the grid of a scenario.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepVar {
    Power,
    BsAntennas,
    Clusters,
    RisElements,
}

impl SweepVar {
    pub fn as_str(&self) -> &'static str {
        match self {
            SweepVar::Power => "power",
            SweepVar::BsAntennas => "n_bs",
            SweepVar::Clusters => "k",
            SweepVar::RisElements => "n_ris",
        }
    }
}

/// A batch experiment: base configuration, scheme list, sweep grid, trial
/// count and seeds.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub id: String,
    pub config: NetworkConfig,
    pub trials: usize,
    pub seed_base: u64,
    pub schemes: Vec<Scheme>,
    pub sweep_var: SweepVar,
    pub grid: Vec<f64>,
    pub metric: Metric,
    pub ao: AoOptions,
    /// Independent random restarts per run; the best final objective wins.
    pub multi_start: usize,
}

/// Apply one grid value to the base configuration.
pub fn apply_sweep(base: &NetworkConfig, var: SweepVar, value: f64) -> NetworkConfig {
    let mut config = base.clone();
    match var {
        SweepVar::Power => {
            config.power_budget = vec![value; config.cells];
        }
        SweepVar::BsAntennas => {
            config.bs_antennas = value.round().max(1.0) as usize;
        }
        SweepVar::Clusters => {
            let k = value.round().max(1.0) as usize;
            config.clusters_per_cell = k;
            let upc = config.users_per_cell();
            let w = base.weights[0].first().copied().unwrap_or(1.0);
            let r = base.rate_thresholds[0].first().copied().unwrap_or(0.0);
            config.weights = vec![vec![w; upc]; config.cells];
            config.rate_thresholds = vec![vec![r; upc]; config.cells];
        }
        SweepVar::RisElements => {
            config.ris_elements = value.round().max(1.0) as usize;
        }
    }
    config
}

/// Unit-modulus reflecting coefficients with seeded uniform phases.
pub fn random_unit_theta(config: &NetworkConfig, seed: u64) -> ReflectState {
    let mut rng = ChaCha20Rng::seed_from_u64(seed ^ 0x7e7a_0000_0000_0000);
    let theta = (0..config.ris_count)
        .map(|_| {
            (0..config.ris_elements)
                .map(|_| {
                    num_complex::Complex64::from_polar(
                        1.0,
                        rng.gen_range(0.0..std::f64::consts::TAU),
                    )
                })
                .collect()
        })
        .collect();
    ReflectState { theta, set_tag: config.feasibility_set }
}

/// Full per-user report at a solved operating point.
pub fn build_report(
    covs: &CovSet,
    theta: &ReflectState,
    channels: &ChannelSet,
    config: &NetworkConfig,
) -> Result<RateReport, SolverError> {
    let h = RealChannels::compute(channels, theta, config)
        .map_err(|e| SolverError::Numerical(e.to_string()))?;
    let terms = rates::rate_terms(config);
    let mut user_rates = vec![vec![f64::INFINITY; config.users_per_cell()]; config.cells];
    let mut regularized = 0usize;
    for term in &terms {
        let (v, flagged) = rates::rate_term_value_flagged(&h, covs, term, config.noise_power)
            .map_err(|e| SolverError::Numerical(e.to_string()))?;
        if flagged {
            regularized += 1;
        }
        let slot = &mut user_rates[term.rate_of.cell][term.rate_of.user];
        *slot = slot.min(v);
    }
    let mut ee = vec![vec![0.0; config.users_per_cell()]; config.cells];
    for l in 0..config.cells {
        for k in 0..config.users_per_cell() {
            ee[l][k] = rates::energy_efficiency(
                user_rates[l][k],
                &covs.p[l][k],
                config.p_circuit,
                config.eta,
            )
            .map_err(|e| SolverError::Numerical(e.to_string()))?;
        }
    }
    let mut diagnostics = Vec::new();
    for l in 0..config.cells {
        diagnostics.push(format!(
            "cell {l}: power slack {:.3e} W",
            config.power_budget[l] - covs.trace_in_cell(l)
        ));
    }
    let min_eig = covs
        .p
        .iter()
        .flatten()
        .map(crate::linalg::min_eigenvalue)
        .fold(f64::INFINITY, f64::min);
    diagnostics.push(format!("min covariance eigenvalue {min_eig:.3e}"));
    if regularized > 0 {
        diagnostics.push(format!("{regularized} rate terms needed ridge regularization"));
    }
    let cov_ok = crate::model::validate_covs(covs, config).is_ok();
    let theta_ok = ris::validate_state(theta, &config.tc_params, 1e-9).is_ok();
    if !theta_ok {
        diagnostics.push("reflecting coefficients violate their feasibility set".into());
    }
    Ok(RateReport {
        min_weighted_rate: rates::min_weighted_rate(&user_rates, config),
        min_weighted_ee: rates::min_weighted_ee(&ee, config),
        rates: user_rates,
        ee,
        feasible: cov_ok && theta_ok,
        diagnostics,
    })
}

/// Result of one scheme on one channel realization.
pub struct SchemeRun {
    pub report: RateReport,
    pub trace: SolveTrace,
    pub objective: f64,
    pub outer_iters: usize,
    pub wall_ms: f64,
}

/// Run one scheme on a fixed channel realization.
///
/// Optimized-RIS schemes alternate covariance and coefficient steps;
/// random-coefficient schemes fix a seeded unit-modulus draw and optimize
/// covariances only; no-RIS schemes zero the RIS path first.
pub fn run_scheme(
    scheme: &Scheme,
    channels: &ChannelSet,
    base_config: &NetworkConfig,
    seed: u64,
    metric: Metric,
    ao: &AoOptions,
    multi_start: usize,
    backend: &dyn ConvexBackend,
) -> Result<SchemeRun, SolverError> {
    let config = scheme.apply(base_config);
    let channels_eff;
    let channels = match scheme.ris {
        RisMode::None => {
            channels_eff = channels.without_ris();
            &channels_eff
        }
        _ => channels,
    };
    let mut opts = ao.clone();
    opts.optimize_theta = matches!(scheme.ris, RisMode::Optimized(_));

    let starts = multi_start.max(1);
    let mut best: Option<(f64, AoOutcome)> = None;
    for s in 0..starts {
        let theta0 = random_unit_theta(&config, seed.wrapping_add(s as u64 * 0x9e37));
        let covs0 = CovSet::isotropic(&config);
        let outcome = match metric {
            Metric::Rate => mwrm_ao(&covs0, &theta0, channels, &config, backend, &opts)?,
            Metric::EnergyEfficiency => {
                let out = mweem_ao(&covs0, &theta0, channels, &config, backend, &opts)?;
                // Rate floors unreachable on this realization: fail the trial
                // so the harness drops it for every scheme.
                if !out.qos_feasible {
                    return Err(SolverError::Backend(
                        "rate floors infeasible on this channel realization".into(),
                    ));
                }
                out
            }
        };
        let obj = outcome.trace.final_objective();
        if best.as_ref().map_or(true, |(b, _)| obj > *b) {
            best = Some((obj, outcome));
        }
    }
    let (objective, outcome) = best.expect("at least one start");
    let report = build_report(&outcome.covs, &outcome.theta, channels, &config)?;
    let outer_iters = outcome.trace.rows.iter().map(|r| r.iter).max().unwrap_or(0);
    let wall_ms = outcome.trace.rows.last().map_or(0.0, |r| r.wall_ms);
    Ok(SchemeRun { report, trace: outcome.trace, objective, outer_iters, wall_ms })
}

/// One aggregated row of the result table.
#[derive(Debug, Clone, Serialize)]
pub struct ResultRow {
    pub scenario_id: String,
    pub sweep_var: String,
    pub sweep_value: f64,
    pub scheme: String,
    pub metric: String,
    pub mean: f64,
    pub stderr: f64,
    pub n_trials: usize,
    pub mean_iters: f64,
    pub mean_wall_ms: f64,
}

pub const CSV_HEADER: &str =
    "scenario_id,sweep_var,sweep_value,scheme,metric,mean,stderr,n_trials,mean_iters,mean_wall_ms";

pub fn write_csv(rows: &[ResultRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{:.9e},{},{},{:.9e},{:.9e},{},{:.3},{:.3}\n",
            r.scenario_id,
            r.sweep_var,
            r.sweep_value,
            r.scheme,
            r.metric,
            r.mean,
            r.stderr,
            r.n_trials,
            r.mean_iters,
            r.mean_wall_ms
        ));
    }
    out
}

pub struct SweepResult {
    pub rows: Vec<ResultRow>,
    /// Trials dropped because some scheme failed (kept paired).
    pub dropped_trials: usize,
    /// Iteration logs, keyed `gridvalue/scheme/trial`.
    pub traces: Vec<(String, String)>,
}

struct TrialResult {
    objective: f64,
    iters: usize,
    wall_ms: f64,
    trace_text: String,
}

/// Run the full sweep: per grid point and trial, sample one topology and
/// channel set from `seed_base + trial`, evaluate every scheme on it, then
/// aggregate means and standard errors per scheme.
pub fn run_sweep(scenario: &Scenario) -> Result<SweepResult, SolverError> {
    let backend = BarrierSolver::default();
    let mut rows = Vec::new();
    let mut traces = Vec::new();
    let mut dropped = 0usize;
    for &value in &scenario.grid {
        let config = apply_sweep(&scenario.config, scenario.sweep_var, value);
        config.validate().map_err(|e| SolverError::Backend(e.to_string()))?;
        let trial_outputs: Vec<Option<Vec<TrialResult>>> = (0..scenario.trials)
            .into_par_iter()
            .map(|trial| {
                let seed = scenario.seed_base.wrapping_add(trial as u64);
                let topo = sample_topology(&config, seed);
                let channels = sample_channels(&topo, &config, seed);
                let mut per_scheme = Vec::with_capacity(scenario.schemes.len());
                for scheme in &scenario.schemes {
                    match run_scheme(
                        scheme,
                        &channels,
                        &config,
                        seed,
                        scenario.metric,
                        &scenario.ao,
                        scenario.multi_start,
                        &backend,
                    ) {
                        Ok(run) => {
                            let objective = match scenario.metric {
                                Metric::Rate => run.report.min_weighted_rate,
                                Metric::EnergyEfficiency => run.report.min_weighted_ee,
                            };
                            per_scheme.push(TrialResult {
                                objective,
                                iters: run.outer_iters,
                                wall_ms: run.wall_ms,
                                trace_text: run.trace.to_text(),
                            });
                        }
                        Err(_) => return None,
                    }
                }
                Some(per_scheme)
            })
            .collect();

        let kept: Vec<(usize, &Vec<TrialResult>)> = trial_outputs
            .iter()
            .enumerate()
            .filter_map(|(i, t)| t.as_ref().map(|v| (i, v)))
            .collect();
        dropped += scenario.trials - kept.len();

        for (si, scheme) in scenario.schemes.iter().enumerate() {
            let values: Vec<f64> = kept.iter().map(|(_, t)| t[si].objective).collect();
            let n = values.len();
            let mean = if n > 0 { values.iter().sum::<f64>() / n as f64 } else { f64::NAN };
            let stderr = if n > 1 {
                let var =
                    values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
                (var / n as f64).sqrt()
            } else {
                0.0
            };
            let mean_iters = if n > 0 {
                kept.iter().map(|(_, t)| t[si].iters as f64).sum::<f64>() / n as f64
            } else {
                0.0
            };
            let mean_wall = if n > 0 {
                kept.iter().map(|(_, t)| t[si].wall_ms).sum::<f64>() / n as f64
            } else {
                0.0
            };
            rows.push(ResultRow {
                scenario_id: scenario.id.clone(),
                sweep_var: scenario.sweep_var.as_str().into(),
                sweep_value: value,
                scheme: scheme.name(),
                metric: scenario.metric.as_str().into(),
                mean,
                stderr,
                n_trials: n,
                mean_iters,
                mean_wall_ms: mean_wall,
            });
            for (trial, t) in &kept {
                traces.push((format!("{}_{}_t{}", value, scheme.name(), trial), t[si].trace_text.clone()));
            }
        }
    }
    Ok(SweepResult { rows, dropped_trials: dropped, traces })
}

// ---------------------------------------------------------------------------
// Reference configurations
// ---------------------------------------------------------------------------

fn base_config(
    cells: usize,
    clusters: usize,
    users_per_cluster: usize,
    bs_antennas: usize,
    ris_count: usize,
    ris_elements: usize,
    geometry: Geometry,
) -> NetworkConfig {
    let upc = clusters * users_per_cluster;
    NetworkConfig {
        cells,
        clusters_per_cell: clusters,
        users_per_cluster,
        bs_antennas,
        ris_count,
        ris_elements,
        power_budget: vec![1.0; cells],
        noise_power: 1e-10,
        weights: vec![vec![1.0; upc]; cells],
        p_circuit: 0.1,
        eta: 1.25,
        rate_thresholds: vec![vec![0.0; upc]; cells],
        feasibility_set: FeasibilitySet::U,
        signaling: Signaling::Igs,
        sic_enabled: true,
        tc_params: TcParams::default(),
        rician_gamma: 3.0,
        pathloss: Default::default(),
        geometry,
    }
}

/// Small two-cell NOMA scenario used across the test suites.
pub fn toy_config() -> NetworkConfig {
    base_config(2, 1, 2, 1, 2, 2, Geometry::two_cell(2))
}

/// Single-cell, single-cluster two-user scalar scenario (PGS by default),
/// small enough for grid-search oracles.
pub fn two_user_siso_config() -> NetworkConfig {
    let mut config = base_config(1, 1, 2, 1, 1, 2, Geometry::single_cell(1));
    config.signaling = Signaling::Pgs;
    config
}

/// The desk-scale comparison scenario: overloaded two-cell network with four
/// RISs of nine elements each.
pub fn desk_scale_config() -> NetworkConfig {
    base_config(2, 2, 2, 1, 4, 9, Geometry::two_cell(4))
}
