//! Scenario configuration: a versioned TOML schema mapped onto the core
//! types, with field-level validation messages.

use serde::{Deserialize, Serialize};

use risfair_core::experiment::{Metric, Scenario, Scheme, SweepVar};
use risfair_core::model::{FeasibilitySet, Geometry, NetworkConfig, PathLossParams, Signaling};
use risfair_core::solver::{AoOptions, GdaOptions};

pub const SCHEMA_VERSION: u32 = 1;

/// Validation failure carrying one message per offending field.
#[derive(Debug)]
pub struct ConfigError {
    pub messages: Vec<String>,
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.messages.join("; "))
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    #[serde(default = "default_version")]
    pub version: u32,
    pub id: String,
    #[serde(default = "default_backend")]
    pub backend: String,
    pub network: NetworkSection,
    pub run: RunSection,
}

fn default_version() -> u32 {
    SCHEMA_VERSION
}

fn default_backend() -> String {
    "barrier".into()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSection {
    pub cells: usize,
    pub clusters_per_cell: usize,
    #[serde(default = "two")]
    pub users_per_cluster: usize,
    pub bs_antennas: usize,
    pub ris_count: usize,
    pub ris_elements: usize,
    pub power_budget: Vec<f64>,
    pub noise_power: f64,
    #[serde(default = "one")]
    pub weight: f64,
    #[serde(default)]
    pub weights: Option<Vec<Vec<f64>>>,
    #[serde(default = "default_p_circuit")]
    pub p_circuit: f64,
    #[serde(default = "default_eta")]
    pub eta: f64,
    #[serde(default)]
    pub rate_threshold: f64,
    #[serde(default)]
    pub rate_thresholds: Option<Vec<Vec<f64>>>,
    #[serde(default = "default_set")]
    pub feasibility_set: String,
    #[serde(default = "default_signaling")]
    pub signaling: String,
    #[serde(default = "yes")]
    pub sic: bool,
    #[serde(default = "default_gamma")]
    pub rician_gamma: f64,
    #[serde(default)]
    pub tc_params: Option<TcSection>,
    #[serde(default)]
    pub pathloss: Option<PathLossSection>,
    #[serde(default = "default_geometry")]
    pub geometry: String,
}

fn two() -> usize {
    2
}
fn one() -> f64 {
    1.0
}
fn yes() -> bool {
    true
}
fn default_p_circuit() -> f64 {
    0.1
}
fn default_eta() -> f64 {
    1.25
}
fn default_set() -> String {
    "U".into()
}
fn default_signaling() -> String {
    "igs".into()
}
fn default_gamma() -> f64 {
    3.0
}
fn default_geometry() -> String {
    "two_cell".into()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TcSection {
    pub theta_min: f64,
    pub alpha: f64,
    pub phi: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathLossSection {
    pub pl0_db: f64,
    pub g0_db: f64,
    pub alpha_los: f64,
    pub alpha_nlos: f64,
    pub d0: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub trials: usize,
    #[serde(default)]
    pub seed_base: u64,
    pub schemes: Vec<String>,
    #[serde(default = "default_sweep")]
    pub sweep: String,
    pub grid: Vec<f64>,
    #[serde(default = "default_metric")]
    pub metric: String,
    #[serde(default = "one_usize")]
    pub multi_start: usize,
    #[serde(default = "default_max_outer")]
    pub max_outer: usize,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
}

fn default_sweep() -> String {
    "power".into()
}
fn default_metric() -> String {
    "rate".into()
}
fn one_usize() -> usize {
    1
}
fn default_max_outer() -> usize {
    25
}
fn default_epsilon() -> f64 {
    1e-3
}

/// Command-line overrides applied after parsing.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub trials: Option<usize>,
    pub set: Option<String>,
    pub signaling: Option<String>,
    pub sic: Option<bool>,
    pub metric: Option<String>,
    pub seed_base: Option<u64>,
}

pub fn parse_file(text: &str) -> Result<ScenarioFile, ConfigError> {
    toml::from_str(text).map_err(|e| ConfigError { messages: vec![format!("config parse: {e}")] })
}

/// Validate and lower the parsed file (plus overrides) into a core scenario.
pub fn build_scenario(
    file: &ScenarioFile,
    overrides: &Overrides,
) -> Result<Scenario, ConfigError> {
    let mut errors = Vec::new();
    if file.version != SCHEMA_VERSION {
        errors.push(format!(
            "version: expected {SCHEMA_VERSION}, got {}",
            file.version
        ));
    }
    let net = &file.network;
    let upc = net.clusters_per_cell * net.users_per_cluster;

    let set_name = overrides.set.clone().unwrap_or_else(|| net.feasibility_set.clone());
    let feasibility_set = match set_name.as_str() {
        "U" | "u" => FeasibilitySet::U,
        "I" | "i" => FeasibilitySet::I,
        "C" | "c" => FeasibilitySet::C,
        other => {
            errors.push(format!("network.feasibility_set: unknown set {other:?}"));
            FeasibilitySet::U
        }
    };
    let signaling_name = overrides.signaling.clone().unwrap_or_else(|| net.signaling.clone());
    let signaling = match signaling_name.to_ascii_lowercase().as_str() {
        "igs" => Signaling::Igs,
        "pgs" => Signaling::Pgs,
        other => {
            errors.push(format!("network.signaling: unknown mode {other:?}"));
            Signaling::Igs
        }
    };
    let weights = match &net.weights {
        Some(w) => w.clone(),
        None => vec![vec![net.weight; upc]; net.cells],
    };
    let rate_thresholds = match &net.rate_thresholds {
        Some(r) => r.clone(),
        None => vec![vec![net.rate_threshold; upc]; net.cells],
    };
    let geometry = match net.geometry.as_str() {
        "two_cell" => Geometry::two_cell(net.ris_count),
        "single_cell" => Geometry::single_cell(net.ris_count),
        other => {
            errors.push(format!("network.geometry: unknown preset {other:?}"));
            Geometry::two_cell(net.ris_count.max(1))
        }
    };
    if net.geometry == "two_cell" && net.cells != 2 {
        errors.push("network.geometry: two_cell preset needs cells = 2".into());
    }
    if net.geometry == "single_cell" && net.cells != 1 {
        errors.push("network.geometry: single_cell preset needs cells = 1".into());
    }

    let config = NetworkConfig {
        cells: net.cells,
        clusters_per_cell: net.clusters_per_cell,
        users_per_cluster: net.users_per_cluster,
        bs_antennas: net.bs_antennas,
        ris_count: net.ris_count,
        ris_elements: net.ris_elements,
        power_budget: net.power_budget.clone(),
        noise_power: net.noise_power,
        weights,
        p_circuit: net.p_circuit,
        eta: net.eta,
        rate_thresholds,
        feasibility_set,
        signaling,
        sic_enabled: overrides.sic.unwrap_or(net.sic),
        tc_params: net
            .tc_params
            .as_ref()
            .map(|t| risfair_core::ris::TcParams {
                theta_min: t.theta_min,
                alpha: t.alpha,
                phi: t.phi,
            })
            .unwrap_or_default(),
        rician_gamma: net.rician_gamma,
        pathloss: net
            .pathloss
            .as_ref()
            .map(|p| PathLossParams {
                pl0_db: p.pl0_db,
                g0_db: p.g0_db,
                alpha_los: p.alpha_los,
                alpha_nlos: p.alpha_nlos,
                d0: p.d0,
            })
            .unwrap_or_default(),
        geometry,
    };
    if let Err(e) = config.validate() {
        errors.push(format!("network: {e}"));
    }

    let run = &file.run;
    let mut schemes = Vec::new();
    for name in &run.schemes {
        match Scheme::parse(name) {
            Some(s) => schemes.push(s),
            None => errors.push(format!("run.schemes: unknown scheme {name:?}")),
        }
    }
    if schemes.is_empty() {
        errors.push("run.schemes: at least one scheme required".into());
    }
    let sweep_var = match run.sweep.as_str() {
        "power" => SweepVar::Power,
        "n_bs" => SweepVar::BsAntennas,
        "k" => SweepVar::Clusters,
        "n_ris" => SweepVar::RisElements,
        other => {
            errors.push(format!("run.sweep: unknown sweep variable {other:?}"));
            SweepVar::Power
        }
    };
    let metric_name = overrides.metric.clone().unwrap_or_else(|| run.metric.clone());
    let metric = match metric_name.as_str() {
        "rate" => Metric::Rate,
        "ee" => Metric::EnergyEfficiency,
        other => {
            errors.push(format!("run.metric: unknown metric {other:?}"));
            Metric::Rate
        }
    };
    let trials = overrides.trials.unwrap_or(run.trials);
    if trials == 0 {
        errors.push("run.trials: must be >= 1".into());
    }
    if run.grid.is_empty() {
        errors.push("run.grid: must list at least one value".into());
    }

    if !errors.is_empty() {
        return Err(ConfigError { messages: errors });
    }
    Ok(Scenario {
        id: file.id.clone(),
        config,
        trials,
        seed_base: overrides.seed_base.unwrap_or(run.seed_base),
        schemes,
        sweep_var,
        grid: run.grid.clone(),
        metric,
        ao: AoOptions {
            epsilon: run.epsilon,
            max_outer: run.max_outer,
            optimize_theta: true,
            gda: GdaOptions::default(),
            ..Default::default()
        },
        multi_start: run.multi_start,
    })
}
