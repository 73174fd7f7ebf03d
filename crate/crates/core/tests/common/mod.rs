//! Shared test oracles, kept independent of the library's rate and
//! surrogate implementations: complex-domain circular rates for proper
//! signaling, and brute-force grid search for the two-user scalar cell.

#![allow(dead_code)]

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::prelude::*;
use rand_chacha::ChaCha20Rng;

use risfair_core::channel::compose_channel;
use risfair_core::model::{ChannelSet, CovSet, NetworkConfig, ReflectState, Signaling};
use risfair_core::rates::{rate_terms, RateTermKind};

/// Recover the complex Hermitian covariance from its real representation.
pub fn proper_to_complex(p: &DMatrix<f64>) -> Vec<Vec<Complex64>> {
    let n = p.nrows() / 2;
    (0..n)
        .map(|a| {
            (0..n)
                .map(|b| {
                    Complex64::new(p[(a, b)] + p[(n + a, n + b)], p[(n + a, b)] - p[(a, n + b)])
                })
                .collect()
        })
        .collect()
}

fn quad_form(h: &[Complex64], q: &[Vec<Complex64>]) -> f64 {
    // h Q h^H for a row vector h.
    let n = h.len();
    let mut acc = Complex64::new(0.0, 0.0);
    for a in 0..n {
        for b in 0..n {
            acc += h[a] * q[a][b] * h[b].conj();
        }
    }
    acc.re
}

/// Per-user rates computed entirely in the complex domain with the circular
/// (proper) formula `log2(1 + S / (sigma2 + I))`, single-antenna receivers.
pub fn complex_domain_rates(
    channels: &ChannelSet,
    theta: &ReflectState,
    covs: &CovSet,
    config: &NetworkConfig,
) -> Vec<Vec<f64>> {
    assert_eq!(covs.mode, Signaling::Pgs, "oracle only covers proper signaling");
    let q: Vec<Vec<Vec<Vec<Complex64>>>> = covs
        .p
        .iter()
        .map(|per_cell| per_cell.iter().map(proper_to_complex).collect())
        .collect();
    let h: Vec<Vec<Vec<Vec<Complex64>>>> = (0..config.cells)
        .map(|l| {
            (0..config.users_per_cell())
                .map(|k| {
                    (0..config.cells)
                        .map(|i| compose_channel(channels, theta, l, k, i).unwrap())
                        .collect()
                })
                .collect()
        })
        .collect();
    let mut rates = vec![vec![f64::INFINITY; config.users_per_cell()]; config.cells];
    for term in rate_terms(config) {
        let recv = term.receiver;
        let hrow = &h[recv.cell][recv.user];
        let mut interference = 0.0;
        for u in &term.den {
            interference += quad_form(&hrow[u.cell], &q[u.cell][u.user]);
        }
        let signal = quad_form(&hrow[term.target.cell], &q[term.target.cell][term.target.user]);
        let rate = (1.0 + signal / (config.noise_power + interference)).log2();
        let slot = &mut rates[term.rate_of.cell][term.rate_of.user];
        *slot = slot.min(rate);
        let _ = matches!(term.kind, RateTermKind::Strong);
    }
    rates
}

/// Random proper covariances within the power budget.
pub fn random_proper_covs(config: &NetworkConfig, seed: u64, fill: f64) -> CovSet {
    let mut rng = ChaCha20Rng::seed_from_u64(seed ^ 0xabcd);
    let n = config.bs_antennas;
    let p = (0..config.cells)
        .map(|l| {
            let mut mats: Vec<DMatrix<f64>> = (0..config.users_per_cell())
                .map(|_| {
                    // Q = R R^H, then its real representation.
                    let r: Vec<Vec<Complex64>> = (0..n)
                        .map(|_| {
                            (0..n)
                                .map(|_| {
                                    Complex64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)
                                })
                                .collect()
                        })
                        .collect();
                    let mut q = vec![vec![Complex64::new(0.0, 0.0); n]; n];
                    for a in 0..n {
                        for b in 0..n {
                            q[a][b] = (0..n).map(|t| r[a][t] * r[b][t].conj()).sum();
                        }
                    }
                    risfair_core::model::proper_covariance(&q).unwrap()
                })
                .collect();
            let total: f64 = mats.iter().map(|m| m.trace()).sum();
            let scale = config.power_budget[l] * fill / total;
            for m in mats.iter_mut() {
                *m *= scale;
            }
            mats
        })
        .collect();
    CovSet { p, mode: Signaling::Pgs }
}

/// Random improper covariances within the power budget.
pub fn random_igs_covs(config: &NetworkConfig, seed: u64, fill: f64) -> CovSet {
    let mut rng = ChaCha20Rng::seed_from_u64(seed ^ 0x1357);
    let n2 = 2 * config.bs_antennas;
    let p = (0..config.cells)
        .map(|l| {
            let mut mats: Vec<DMatrix<f64>> = (0..config.users_per_cell())
                .map(|_| {
                    let r = DMatrix::from_fn(n2, n2, |_, _| rng.gen::<f64>() - 0.5);
                    &r * r.transpose()
                })
                .collect();
            let total: f64 = mats.iter().map(|m| m.trace()).sum();
            let scale = config.power_budget[l] * fill / total;
            for m in mats.iter_mut() {
                *m *= scale;
            }
            mats
        })
        .collect();
    CovSet { p, mode: Signaling::Igs }
}

/// Random reflecting state with amplitudes in `(0, 1]`.
pub fn random_theta_in_disk(config: &NetworkConfig, seed: u64) -> ReflectState {
    let mut rng = ChaCha20Rng::seed_from_u64(seed ^ 0x2468);
    let theta = (0..config.ris_count)
        .map(|_| {
            (0..config.ris_elements)
                .map(|_| {
                    Complex64::from_polar(
                        rng.gen_range(0.05..1.0),
                        rng.gen_range(0.0..std::f64::consts::TAU),
                    )
                })
                .collect()
        })
        .collect();
    ReflectState { theta, set_tag: config.feasibility_set }
}

/// Exhaustive 2-D power-grid search of the two-user single-cell scalar NOMA
/// max-min rate.
///
/// `h_strong`/`h_weak` are the scalar composite channels from the single BS.
/// Steps through `q_strong + q_weak <= p` with the given step and returns
/// the best minimum rate.
pub fn grid_search_two_user_noma(
    h_strong: Complex64,
    h_weak: Complex64,
    sigma2: f64,
    p: f64,
    step: f64,
) -> f64 {
    let g1 = h_strong.norm_sqr();
    let g2 = h_weak.norm_sqr();
    let n = (p / step).round() as usize;
    let mut best = 0.0f64;
    for i in 0..=n {
        let q1 = i as f64 * step;
        for j in 0..=(n - i) {
            let q2 = j as f64 * step;
            let r_strong = (1.0 + g1 * q1 / sigma2).log2();
            let r_weak_own = (1.0 + g2 * q2 / (sigma2 + g2 * q1)).log2();
            let r_cross = (1.0 + g1 * q2 / (sigma2 + g1 * q1)).log2();
            let min_rate = r_strong.min(r_weak_own.min(r_cross));
            if min_rate > best {
                best = min_rate;
            }
        }
    }
    best
}

/// Min rate of the two-user scalar NOMA cell at a fixed power split.
pub fn two_user_noma_min_rate(
    h_strong: Complex64,
    h_weak: Complex64,
    sigma2: f64,
    q1: f64,
    q2: f64,
) -> f64 {
    let g1 = h_strong.norm_sqr();
    let g2 = h_weak.norm_sqr();
    let r_strong = (1.0 + g1 * q1 / sigma2).log2();
    let r_weak_own = (1.0 + g2 * q2 / (sigma2 + g2 * q1)).log2();
    let r_cross = (1.0 + g1 * q2 / (sigma2 + g1 * q1)).log2();
    r_strong.min(r_weak_own.min(r_cross))
}

pub fn wrap_angle(a: f64) -> f64 {
    let mut x = a.rem_euclid(2.0 * std::f64::consts::PI);
    if x > std::f64::consts::PI {
        x -= 2.0 * std::f64::consts::PI;
    }
    x
}
