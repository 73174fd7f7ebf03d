//! Interference-plus-noise covariances, NOMA/TIN achievable rates and
//! per-user energy efficiency.
//!
//! Every rate in the system is a difference of two log-dets of small (2 x 2)
//! matrices. A [`RateTerm`] names one such difference: the receiving user,
//! the user whose signal is decoded, and the set of interferers left in the
//! denominator. Strong users decode after SIC removed the paired weak user's
//! signal; weak users need their data decodable both at themselves and at
//! the paired strong user, hence two terms and a `min`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::RealChannels;
use crate::model::{CovSet, NetworkConfig};

pub const LN2: f64 = std::f64::consts::LN_2;

#[derive(Debug, Error)]
pub enum RateError {
    #[error("numerical domain error: {0}")]
    NumericalDomain(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

/// A user, addressed by cell and in-cell index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct UserId {
    pub cell: usize,
    pub user: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RateTermKind {
    /// Strong user decoding its own signal after SIC.
    Strong,
    /// Weak user decoding its own signal (intracluster interference stays).
    WeakOwn,
    /// Strong user decoding the weak partner's signal before SIC.
    Cross,
    /// Any user under plain treat-interference-as-noise decoding.
    Tin,
}

/// One log-det rate difference.
#[derive(Debug, Clone)]
pub struct RateTerm {
    pub kind: RateTermKind,
    /// User whose receiver evaluates this term.
    pub receiver: UserId,
    /// User whose signal is being decoded (owner of the numerator).
    pub target: UserId,
    /// User whose achievable rate this term constrains.
    pub rate_of: UserId,
    /// Interferers in the denominator (all cells).
    pub den: Vec<UserId>,
}

/// Enumerate every rate term implied by the decoding mode of `config`.
///
/// The per-user achievable rate is the term value for strong/TIN users and
/// the minimum over the `WeakOwn`/`Cross` pair for weak users.
pub fn rate_terms(config: &NetworkConfig) -> Vec<RateTerm> {
    let all_users: Vec<UserId> = (0..config.cells)
        .flat_map(|l| (0..config.users_per_cell()).map(move |k| UserId { cell: l, user: k }))
        .collect();
    let den_except = |skip: &[UserId]| -> Vec<UserId> {
        all_users.iter().cloned().filter(|u| !skip.contains(u)).collect()
    };
    let mut terms = Vec::new();
    for l in 0..config.cells {
        for k in 0..config.users_per_cell() {
            let me = UserId { cell: l, user: k };
            if !config.sic_enabled || config.users_per_cluster == 1 {
                terms.push(RateTerm {
                    kind: RateTermKind::Tin,
                    receiver: me,
                    target: me,
                    rate_of: me,
                    den: den_except(&[me]),
                });
                continue;
            }
            let partner = UserId { cell: l, user: config.partner(k).expect("paired cluster") };
            if config.is_strong(k) {
                terms.push(RateTerm {
                    kind: RateTermKind::Strong,
                    receiver: me,
                    target: me,
                    rate_of: me,
                    den: den_except(&[me, partner]),
                });
            } else {
                terms.push(RateTerm {
                    kind: RateTermKind::WeakOwn,
                    receiver: me,
                    target: me,
                    rate_of: me,
                    den: den_except(&[me]),
                });
                terms.push(RateTerm {
                    kind: RateTermKind::Cross,
                    receiver: partner,
                    target: me,
                    rate_of: me,
                    den: den_except(&[me]),
                });
            }
        }
    }
    terms
}

/// Interference-plus-noise covariance at receiver `(l, k)`:
/// intercell interference from every other cell, intracell interference from
/// every user not listed in `exclude`, plus `sigma2/2 I`.
pub fn interference_cov(
    h: &RealChannels,
    covs: &CovSet,
    l: usize,
    k: usize,
    exclude: &[usize],
    sigma2: f64,
) -> DMatrix<f64> {
    let mut d = DMatrix::identity(2, 2) * (sigma2 / 2.0);
    for (i, per_cell) in covs.p.iter().enumerate() {
        let hli = &h.h[l][k][i];
        for (j, p) in per_cell.iter().enumerate() {
            if i == l && exclude.contains(&j) {
                continue;
            }
            d += hli * p * hli.transpose();
        }
    }
    d
}

/// Denominator of a rate term: noise plus every interferer in `term.den`,
/// seen through the receiver's channels.
pub fn term_denominator(h: &RealChannels, covs: &CovSet, term: &RateTerm, sigma2: f64) -> DMatrix<f64> {
    let recv = term.receiver;
    let mut d = DMatrix::identity(2, 2) * (sigma2 / 2.0);
    for u in &term.den {
        let hm = &h.h[recv.cell][recv.user][u.cell];
        d += hm * &covs.p[u.cell][u.user] * hm.transpose();
    }
    d
}

/// log det of a 2x2 PSD matrix with the conditioning safeguard: when the
/// condition number exceeds 1e12, a trace-scaled 1e-12 ridge is added and the
/// event is reported through the flag.
fn logdet_reg(m: &DMatrix<f64>) -> Result<(f64, bool), RateError> {
    let direct = crate::linalg::logdet_pd(m);
    let eig = crate::linalg::symmetrize(m).symmetric_eigen();
    let vmax = eig.eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let vmin = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    if vmax <= 0.0 {
        return Err(RateError::NumericalDomain(
            "interference-plus-noise covariance vanished (no noise, no interference)".into(),
        ));
    }
    let bad = vmin <= 0.0 || vmax / vmin > 1e12;
    match (direct, bad) {
        (Some(v), false) => Ok((v, false)),
        _ => {
            let ridge = 1e-12 * (1.0 + m.trace().abs());
            let fixed = m + DMatrix::identity(m.nrows(), m.ncols()) * ridge;
            crate::linalg::logdet_pd(&fixed)
                .map(|v| (v, true))
                .ok_or_else(|| {
                    RateError::NumericalDomain(format!(
                        "interference covariance is singular (min eig {vmin:.3e})"
                    ))
                })
        }
    }
}

/// Value of one rate term in bits/s/Hz:
/// `1/2 log2 det(D + H P H^T) - 1/2 log2 det(D)`.
pub fn rate_term_value(
    h: &RealChannels,
    covs: &CovSet,
    term: &RateTerm,
    sigma2: f64,
) -> Result<f64, RateError> {
    Ok(rate_term_value_flagged(h, covs, term, sigma2)?.0)
}

pub fn rate_term_value_flagged(
    h: &RealChannels,
    covs: &CovSet,
    term: &RateTerm,
    sigma2: f64,
) -> Result<(f64, bool), RateError> {
    let recv = term.receiver;
    let d = term_denominator(h, covs, term, sigma2);
    let hm = &h.h[recv.cell][recv.user][term.target.cell];
    let num = &d + hm * &covs.p[term.target.cell][term.target.user] * hm.transpose();
    let (ld_num, f1) = logdet_reg(&num)?;
    let (ld_den, f2) = logdet_reg(&d)?;
    Ok((((ld_num - ld_den) / (2.0 * LN2)).max(0.0), f1 || f2))
}

fn find_term(terms: &[RateTerm], kind: RateTermKind, l: usize, k: usize) -> RateTerm {
    terms
        .iter()
        .find(|t| t.kind == kind && t.rate_of == UserId { cell: l, user: k })
        .cloned()
        .expect("term exists for this decoding mode")
}

/// Rate of strong user `(l, k)` with SIC applied (both intracluster signals
/// out of the denominator).
pub fn rate_strong(
    h: &RealChannels,
    covs: &CovSet,
    config: &NetworkConfig,
    l: usize,
    k: usize,
) -> Result<f64, RateError> {
    let term = find_term(&rate_terms(config), RateTermKind::Strong, l, k);
    rate_term_value(h, covs, &term, config.noise_power)
}

/// Weak user `(l, kbar)` decoding its own signal; the strong partner's
/// signal stays in the denominator.
pub fn rate_weak_own(
    h: &RealChannels,
    covs: &CovSet,
    config: &NetworkConfig,
    l: usize,
    kbar: usize,
) -> Result<f64, RateError> {
    let term = find_term(&rate_terms(config), RateTermKind::WeakOwn, l, kbar);
    rate_term_value(h, covs, &term, config.noise_power)
}

/// Strong partner decoding the weak user's signal before SIC; the strong
/// user's own signal stays in the denominator.
pub fn rate_cross(
    h: &RealChannels,
    covs: &CovSet,
    config: &NetworkConfig,
    l: usize,
    kbar: usize,
) -> Result<f64, RateError> {
    let term = find_term(&rate_terms(config), RateTermKind::Cross, l, kbar);
    rate_term_value(h, covs, &term, config.noise_power)
}

/// Achievable rate of weak user `(l, kbar)`: the minimum of its own decoding
/// rate and the partner's cross-decoding rate.
pub fn rate_weak(
    h: &RealChannels,
    covs: &CovSet,
    config: &NetworkConfig,
    l: usize,
    kbar: usize,
) -> Result<f64, RateError> {
    Ok(rate_weak_own(h, covs, config, l, kbar)?.min(rate_cross(h, covs, config, l, kbar)?))
}

/// Treat-interference-as-noise rate of user `(l, k)`: only the user's own
/// signal leaves the denominator.
pub fn rate_tin(
    h: &RealChannels,
    covs: &CovSet,
    config: &NetworkConfig,
    l: usize,
    k: usize,
) -> Result<f64, RateError> {
    let me = UserId { cell: l, user: k };
    let all: Vec<UserId> = (0..config.cells)
        .flat_map(|i| (0..config.users_per_cell()).map(move |j| UserId { cell: i, user: j }))
        .collect();
    let term = RateTerm {
        kind: RateTermKind::Tin,
        receiver: me,
        target: me,
        rate_of: me,
        den: all.into_iter().filter(|u| *u != me).collect(),
    };
    rate_term_value(h, covs, &term, config.noise_power)
}

/// Per-user rates under the decoding mode of `config`.
pub fn all_rates(
    h: &RealChannels,
    covs: &CovSet,
    config: &NetworkConfig,
) -> Result<Vec<Vec<f64>>, RateError> {
    let terms = rate_terms(config);
    let mut rates = vec![vec![f64::INFINITY; config.users_per_cell()]; config.cells];
    for term in &terms {
        let v = rate_term_value(h, covs, term, config.noise_power)?;
        let slot = &mut rates[term.rate_of.cell][term.rate_of.user];
        *slot = slot.min(v);
    }
    Ok(rates)
}

/// Energy efficiency in bits/J/Hz: `rate / (P_c + eta Tr(P))`.
pub fn energy_efficiency(rate: f64, p_lk: &DMatrix<f64>, p_c: f64, eta: f64) -> Result<f64, RateError> {
    let denom = p_c + eta * p_lk.trace();
    if denom <= 0.0 {
        return Err(RateError::InvalidInput(format!(
            "power consumption must be positive, got {denom}"
        )));
    }
    Ok(rate / denom)
}

/// Minimum weighted rate over all users.
pub fn min_weighted_rate(rates: &[Vec<f64>], config: &NetworkConfig) -> f64 {
    let mut best = f64::INFINITY;
    for l in 0..config.cells {
        for k in 0..config.users_per_cell() {
            best = best.min(config.weights[l][k] * rates[l][k]);
        }
    }
    best
}

/// Minimum weighted EE over all users.
pub fn min_weighted_ee(ee: &[Vec<f64>], config: &NetworkConfig) -> f64 {
    let mut best = f64::INFINITY;
    for l in 0..config.cells {
        for k in 0..config.users_per_cell() {
            best = best.min(config.weights[l][k] * ee[l][k]);
        }
    }
    best
}
