//! Shared domain types: network configuration, channel realizations,
//! reflecting-coefficient state, transmit covariances and rate reports,
//! plus the complex-to-real decomposition used everywhere else.
//!
//! All signal-space quantities live in the real-decomposition domain: a
//! complex `1 x N` channel becomes a real `2 x 2N` matrix and a complex
//! transmit vector becomes a stacked real vector, so improper (non
//! circularly-symmetric) signals are ordinary covariance matrices here.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg;
use crate::ris::TcParams;

/// Tolerance scale used by feasibility validators: a symmetric matrix counts
/// as PSD when its smallest eigenvalue is `>= -PSD_TOL * (1 + trace)`.
pub const PSD_TOL: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("config validation failed: {0}")]
    BadConfig(String),
}

/// Which feasibility set constrains the reflecting coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FeasibilitySet {
    /// Amplitude and phase free, `|theta| <= 1`. Performance upper bound.
    U,
    /// Unit modulus, phase-only control.
    I,
    /// Amplitude coupled to phase through the amplitude law.
    C,
}

impl FeasibilitySet {
    pub fn as_str(self) -> &'static str {
        match self {
            FeasibilitySet::U => "U",
            FeasibilitySet::I => "I",
            FeasibilitySet::C => "C",
        }
    }
}

/// Transmit signaling family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Signaling {
    /// Improper Gaussian signaling: unconstrained real-domain covariance.
    Igs,
    /// Proper Gaussian signaling: covariance carries the real representation
    /// of a complex Hermitian matrix.
    Pgs,
}

/// Path-loss constants: `PL = PL0 + G0 - 10 a log10(d/d0)` in dB, with the
/// exponent picked by link type, and attenuation `beta = 10^(PL/10)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PathLossParams {
    pub pl0_db: f64,
    pub g0_db: f64,
    pub alpha_los: f64,
    pub alpha_nlos: f64,
    pub d0: f64,
}

impl Default for PathLossParams {
    fn default() -> Self {
        // Representative values for this class of system; the reference
        // scenario tables are not published, so these are configurable.
        Self {
            pl0_db: -30.0,
            g0_db: 0.0,
            alpha_los: 2.2,
            alpha_nlos: 3.67,
            d0: 1.0,
        }
    }
}

/// Scenario geometry. Users of each cell are split into per-cell regions
/// (cell-centric first, cell-edge second by convention); each region is a
/// square of side `region_side` with its center listed here.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Geometry {
    /// One (x, y) per BS.
    pub bs_xy: Vec<[f64; 2]>,
    /// One (x, y) per RIS.
    pub ris_xy: Vec<[f64; 2]>,
    /// `region_xy[cell][region]` = square center. Strong users map to region
    /// 0, weak users to the last region.
    pub region_xy: Vec<Vec<[f64; 2]>>,
    pub region_side: f64,
    pub bs_height: f64,
    pub ris_height: f64,
    pub user_height: f64,
    /// `ris_bs_visible[m][i]`: BS `i` outside the reflection space of RIS `m`
    /// gets a zero `G` block. All-visible when absent.
    pub ris_bs_visible: Option<Vec<Vec<bool>>>,
    /// `ris_cell_visible[m][l]`: users of cell `l` outside the reflection
    /// space of RIS `m` get zero `f` rows. All-visible when absent.
    pub ris_cell_visible: Option<Vec<Vec<bool>>>,
}

impl Geometry {
    /// Two-cell layout with one cell-centric and one cell-edge square per
    /// cell and one RIS at each square center.
    pub fn two_cell_default() -> Self {
        Self::two_cell(4)
    }

    /// Two-cell layout with `ris_count` RISs cycled over the square centers
    /// (cell-centric first).
    pub fn two_cell(ris_count: usize) -> Self {
        let anchors = [[20.0, 0.0], [80.0, 0.0], [42.0, 0.0], [58.0, 0.0]];
        let ris_xy = (0..ris_count).map(|m| anchors[m % anchors.len()]).collect();
        Self {
            bs_xy: vec![[0.0, 0.0], [100.0, 0.0]],
            ris_xy,
            region_xy: vec![
                vec![[20.0, 0.0], [42.0, 0.0]],
                vec![[80.0, 0.0], [58.0, 0.0]],
            ],
            region_side: 20.0,
            bs_height: 25.0,
            ris_height: 15.0,
            user_height: 1.5,
            ris_bs_visible: None,
            ris_cell_visible: None,
        }
    }

    /// Single-cell layout used by the toy scenarios.
    pub fn single_cell(ris_count: usize) -> Self {
        let ris_xy = (0..ris_count).map(|m| [25.0 + 10.0 * m as f64, 0.0]).collect();
        Self {
            bs_xy: vec![[0.0, 0.0]],
            ris_xy,
            region_xy: vec![vec![[25.0, 0.0], [40.0, 0.0]]],
            region_side: 20.0,
            bs_height: 25.0,
            ris_height: 15.0,
            user_height: 1.5,
            ris_bs_visible: None,
            ris_cell_visible: None,
        }
    }
}

/// All scenario constants for one optimization instance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NetworkConfig {
    /// Number of cells / BSs (`L`).
    pub cells: usize,
    /// NOMA clusters per cell (`K`).
    pub clusters_per_cell: usize,
    /// Users per cluster: 2 for a NOMA pair, 1 for a singleton cluster.
    pub users_per_cluster: usize,
    /// Transmit antennas per BS (`N_BS`).
    pub bs_antennas: usize,
    /// Number of RISs (`M >= L`).
    pub ris_count: usize,
    /// Reflecting elements per RIS (`N_RIS`).
    pub ris_elements: usize,
    /// Per-BS power budget in watts.
    pub power_budget: Vec<f64>,
    /// Noise variance in watts.
    pub noise_power: f64,
    /// Positive rate/EE weights, `weights[cell][user]`.
    pub weights: Vec<Vec<f64>>,
    /// Constant per-user power consumption in watts.
    pub p_circuit: f64,
    /// Inverse power-amplifier efficiency.
    pub eta: f64,
    /// Minimum required rates in bits/s/Hz, `rate_thresholds[cell][user]`.
    pub rate_thresholds: Vec<Vec<f64>>,
    pub feasibility_set: FeasibilitySet,
    pub signaling: Signaling,
    /// NOMA when true, plain TIN decoding when false.
    pub sic_enabled: bool,
    pub tc_params: TcParams,
    /// Rician factor for RIS-related links.
    pub rician_gamma: f64,
    pub pathloss: PathLossParams,
    pub geometry: Geometry,
}

impl NetworkConfig {
    /// Users per cell.
    pub fn users_per_cell(&self) -> usize {
        self.clusters_per_cell * self.users_per_cluster
    }

    /// Total user count.
    pub fn total_users(&self) -> usize {
        self.cells * self.users_per_cell()
    }

    /// True when user index `k` (within a cell) is a strong (cell-centric,
    /// higher decoding order) user.
    pub fn is_strong(&self, k: usize) -> bool {
        k < self.clusters_per_cell
    }

    /// Paired weak user of strong user `k`, when clusters hold two users.
    pub fn partner(&self, k: usize) -> Option<usize> {
        if self.users_per_cluster != 2 {
            return None;
        }
        if k < self.clusters_per_cell {
            Some(k + self.clusters_per_cell)
        } else {
            Some(k - self.clusters_per_cell)
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let fail = |msg: String| Err(ModelError::BadConfig(msg));
        if self.cells == 0 || self.clusters_per_cell == 0 || self.bs_antennas == 0 {
            return fail("cells, clusters_per_cell and bs_antennas must be >= 1".into());
        }
        if !(1..=2).contains(&self.users_per_cluster) {
            return fail("users_per_cluster must be 1 or 2".into());
        }
        if self.ris_elements == 0 {
            return fail("ris_elements must be >= 1".into());
        }
        if self.ris_count < self.cells {
            return fail(format!(
                "ris_count ({}) must be >= cells ({})",
                self.ris_count, self.cells
            ));
        }
        if self.power_budget.len() != self.cells {
            return fail("power_budget must have one entry per cell".into());
        }
        if self.power_budget.iter().any(|p| *p <= 0.0) {
            return fail("power budgets must be positive".into());
        }
        if self.noise_power <= 0.0 {
            return fail("noise_power must be positive".into());
        }
        if self.eta <= 0.0 {
            return fail("eta must be positive".into());
        }
        let upc = self.users_per_cell();
        if self.weights.len() != self.cells || self.weights.iter().any(|w| w.len() != upc) {
            return fail("weights must be cells x users_per_cell".into());
        }
        if self.weights.iter().flatten().any(|w| *w <= 0.0) {
            return fail("weights must be positive".into());
        }
        if self.rate_thresholds.len() != self.cells
            || self.rate_thresholds.iter().any(|r| r.len() != upc)
        {
            return fail("rate_thresholds must be cells x users_per_cell".into());
        }
        if !(0.0..=1.0).contains(&self.tc_params.theta_min) {
            return fail("tc_params.theta_min must lie in [0, 1]".into());
        }
        if self.tc_params.alpha < 0.0 {
            return fail("tc_params.alpha must be non-negative".into());
        }
        if self.rician_gamma < 0.0 {
            return fail("rician_gamma must be non-negative".into());
        }
        if self.geometry.bs_xy.len() != self.cells {
            return fail("geometry.bs_xy must have one entry per cell".into());
        }
        if self.geometry.ris_xy.len() != self.ris_count {
            return fail("geometry.ris_xy must have one entry per RIS".into());
        }
        if self.geometry.region_xy.len() != self.cells
            || self.geometry.region_xy.iter().any(|r| r.is_empty())
        {
            return fail("geometry.region_xy must list at least one region per cell".into());
        }
        Ok(())
    }
}

/// One realization of every link in the network.
///
/// Serialized as nested arrays of `[re, im]` pairs for regression fixtures.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChannelSet {
    /// `direct[l][k][i]`: complex `1 x N_BS` link from BS `i` to user `(l,k)`.
    pub direct: Vec<Vec<Vec<Vec<Complex64>>>>,
    /// `bs_ris[m][i]`: complex `N_RIS x N_BS` matrix from BS `i` to RIS `m`,
    /// stored row-major.
    pub bs_ris: Vec<Vec<Vec<Vec<Complex64>>>>,
    /// `ris_user[l][k][m]`: complex `1 x N_RIS` link from RIS `m` to user
    /// `(l,k)`.
    pub ris_user: Vec<Vec<Vec<Vec<Complex64>>>>,
}

impl ChannelSet {
    pub fn direct_row(&self, l: usize, k: usize, i: usize) -> &[Complex64] {
        &self.direct[l][k][i]
    }

    /// All-finite check over every stored entry.
    pub fn is_finite(&self) -> bool {
        let ok = |v: &Complex64| v.re.is_finite() && v.im.is_finite();
        self.direct.iter().flatten().flatten().flatten().all(ok)
            && self.bs_ris.iter().flatten().flatten().flatten().all(ok)
            && self.ris_user.iter().flatten().flatten().flatten().all(ok)
    }

    /// Zero every BS-to-RIS block, turning the scenario into a no-RIS one.
    pub fn without_ris(&self) -> ChannelSet {
        let mut out = self.clone();
        for per_m in out.bs_ris.iter_mut() {
            for per_i in per_m.iter_mut() {
                for row in per_i.iter_mut() {
                    for v in row.iter_mut() {
                        *v = Complex64::new(0.0, 0.0);
                    }
                }
            }
        }
        out
    }
}

/// Reflecting coefficients of every RIS plus the feasibility set they are
/// supposed to live in. `theta[m][n]` is element `n` of RIS `m`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReflectState {
    pub theta: Vec<Vec<Complex64>>,
    pub set_tag: FeasibilitySet,
}

impl ReflectState {
    pub fn all_zero(ris_count: usize, ris_elements: usize, set_tag: FeasibilitySet) -> Self {
        Self {
            theta: vec![vec![Complex64::new(0.0, 0.0); ris_elements]; ris_count],
            set_tag,
        }
    }

    pub fn num_elements(&self) -> usize {
        self.theta.iter().map(|t| t.len()).sum()
    }
}

/// Per-user real-domain transmit covariances (`2 N_BS x 2 N_BS`, PSD).
#[derive(Debug, Clone)]
pub struct CovSet {
    /// `p[l][k]`.
    pub p: Vec<Vec<DMatrix<f64>>>,
    pub mode: Signaling,
}

impl CovSet {
    /// Proper isotropic equal power split: each user gets `p_l / users` watts
    /// spread evenly over the `2 N_BS` real dimensions. Feasible for both
    /// signaling modes.
    pub fn isotropic(config: &NetworkConfig) -> Self {
        let n2 = 2 * config.bs_antennas;
        let users = config.users_per_cell();
        let p = (0..config.cells)
            .map(|l| {
                let per_user = config.power_budget[l] / users as f64;
                (0..users)
                    .map(|_| DMatrix::identity(n2, n2) * (per_user / n2 as f64))
                    .collect()
            })
            .collect();
        Self {
            p,
            mode: config.signaling,
        }
    }

    pub fn trace_in_cell(&self, l: usize) -> f64 {
        self.p[l].iter().map(|m| m.trace()).sum()
    }
}

/// Per-user outcome of a solved instance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RateReport {
    /// Achievable rates in bits/s/Hz, `rates[l][k]`.
    pub rates: Vec<Vec<f64>>,
    /// Per-user energy efficiency in bits/J/Hz.
    pub ee: Vec<Vec<f64>>,
    pub min_weighted_rate: f64,
    pub min_weighted_ee: f64,
    pub feasible: bool,
    /// Human-readable per-constraint slack diagnostics.
    pub diagnostics: Vec<String>,
}

/// Real decomposition of a complex `1 x N` channel row:
/// `[[Re h, -Im h], [Im h, Re h]]`, a `2 x 2N` matrix.
pub fn real_decompose_channel(h: &[Complex64]) -> Result<DMatrix<f64>, ModelError> {
    if h.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
        return Err(ModelError::InvalidInput(
            "channel row contains non-finite entries".into(),
        ));
    }
    let n = h.len();
    let mut out = DMatrix::zeros(2, 2 * n);
    for (j, v) in h.iter().enumerate() {
        out[(0, j)] = v.re;
        out[(0, n + j)] = -v.im;
        out[(1, j)] = v.im;
        out[(1, n + j)] = v.re;
    }
    Ok(out)
}

/// Stacked real form of a complex vector: `[Re x; Im x]`.
pub fn real_decompose_vector(x: &[Complex64]) -> DVector<f64> {
    let n = x.len();
    let mut out = DVector::zeros(2 * n);
    for (j, v) in x.iter().enumerate() {
        out[j] = v.re;
        out[n + j] = v.im;
    }
    out
}

/// Real-domain covariance of a circularly-symmetric signal with complex
/// covariance `Q` (Hermitian PSD, row-major `n x n`):
/// `(1/2) [[Re Q, -Im Q], [Im Q, Re Q]]`.
pub fn proper_covariance(q: &[Vec<Complex64>]) -> Result<DMatrix<f64>, ModelError> {
    let n = q.len();
    if q.iter().any(|row| row.len() != n) {
        return Err(ModelError::InvalidInput("Q must be square".into()));
    }
    for a in 0..n {
        for b in 0..n {
            let d = q[a][b] - q[b][a].conj();
            if d.norm() > 1e-10 * (1.0 + q[a][b].norm()) {
                return Err(ModelError::InvalidInput("Q must be Hermitian".into()));
            }
        }
    }
    let mut out = DMatrix::zeros(2 * n, 2 * n);
    for a in 0..n {
        for b in 0..n {
            let re = 0.5 * q[a][b].re;
            let im = 0.5 * q[a][b].im;
            out[(a, b)] = re;
            out[(n + a, n + b)] = re;
            out[(a, n + b)] = -im;
            out[(n + a, b)] = im;
        }
    }
    Ok(out)
}

/// Does `P` carry the proper block structure `[[A, -B], [B, A]]` with `A`
/// symmetric and `B` skew-symmetric, within `tol`?
pub fn is_proper(p: &DMatrix<f64>, tol: f64) -> bool {
    let n2 = p.nrows();
    if n2 % 2 != 0 || p.ncols() != n2 {
        return false;
    }
    let n = n2 / 2;
    let scale = 1.0 + p.trace().abs();
    for a in 0..n {
        for b in 0..n {
            // A = P[0..n, 0..n] must equal P[n.., n..] and be symmetric.
            if (p[(a, b)] - p[(n + a, n + b)]).abs() > tol * scale {
                return false;
            }
            if (p[(a, b)] - p[(b, a)]).abs() > tol * scale {
                return false;
            }
            // B = P[n.., 0..n] must be skew and equal -P[0..n, n..].
            if (p[(n + a, b)] + p[(a, n + b)]).abs() > tol * scale {
                return false;
            }
            if (p[(n + a, b)] + p[(n + b, a)]).abs() > tol * scale {
                return false;
            }
        }
    }
    true
}

/// Orthogonal projection of a symmetric matrix onto the proper subspace.
pub fn proper_project(p: &DMatrix<f64>) -> DMatrix<f64> {
    let n = p.nrows() / 2;
    let a11 = p.view((0, 0), (n, n));
    let a22 = p.view((n, n), (n, n));
    let b21 = p.view((n, 0), (n, n));
    let b12 = p.view((0, n), (n, n));
    let a = (a11 + a22) * 0.5;
    let a = (&a + a.transpose()) * 0.5;
    let b = (b21 - b12) * 0.5;
    let b = (&b - b.transpose()) * 0.5;
    let mut out = DMatrix::zeros(2 * n, 2 * n);
    out.view_mut((0, 0), (n, n)).copy_from(&a);
    out.view_mut((n, n), (n, n)).copy_from(&a);
    out.view_mut((n, 0), (n, n)).copy_from(&b);
    out.view_mut((0, n), (n, n)).copy_from(&(-&b));
    out
}

/// Validate a covariance set against the power, PSD and (for PGS) structure
/// invariants. Returns per-constraint diagnostics on failure.
pub fn validate_covs(covs: &CovSet, config: &NetworkConfig) -> Result<(), ModelError> {
    for (l, per_cell) in covs.p.iter().enumerate() {
        let budget = config.power_budget[l];
        let total: f64 = per_cell.iter().map(|m| m.trace()).sum();
        if total > budget * (1.0 + 1e-6) + 1e-9 {
            return Err(ModelError::InvalidInput(format!(
                "cell {l}: trace sum {total:.6e} exceeds budget {budget:.6e}"
            )));
        }
        for (k, p) in per_cell.iter().enumerate() {
            let sym = linalg::symmetrize(p);
            if !linalg::is_psd(&sym, PSD_TOL) {
                return Err(ModelError::InvalidInput(format!(
                    "cov ({l},{k}) is not PSD (min eig {:.3e})",
                    linalg::min_eigenvalue(&sym)
                )));
            }
            if covs.mode == Signaling::Pgs && !is_proper(&sym, 1e-7) {
                return Err(ModelError::InvalidInput(format!(
                    "cov ({l},{k}) violates the proper block structure"
                )));
            }
        }
    }
    Ok(())
}
