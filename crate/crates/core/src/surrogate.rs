//! Concave minorants of the rate terms, one family per optimization
//! direction.
//!
//! In the covariance direction every rate is a difference of concave
//! log-dets; the convex part is replaced by its affine first-order upper
//! bound ([`logdet_affine_upper`]), leaving a concave surrogate that touches
//! the true rate at the anchor. In the reflecting-coefficient direction the
//! channel is affine in the coefficients, and the matrix lower bound of
//! [`logdet_quadratic_lower`] produces a concave quadratic surrogate per term.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::channel::RealChannels;
use crate::linalg;
use crate::model::{ChannelSet, CovSet, ModelError, NetworkConfig, ReflectState};
use crate::rates::{self, RateError, RateTerm, UserId, LN2};

/// Affine upper bound of `f(P) = ln det(A + B P B^T)` at `P = anchor`:
/// `f(P) <= constant + Tr(gradient * P)` with
/// `gradient = B^T (A + B anchor B^T)^{-1} B` (symmetric PSD).
pub fn logdet_affine_upper(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    p_anchor: &DMatrix<f64>,
) -> Result<(f64, DMatrix<f64>), RateError> {
    let m = a + b * p_anchor * b.transpose();
    let ld = linalg::logdet_pd(&m).ok_or_else(|| {
        RateError::NumericalDomain("A + B P B^T is not positive definite".into())
    })?;
    let minv = linalg::inverse_pd(&m)
        .ok_or_else(|| RateError::NumericalDomain("failed to invert A + B P B^T".into()))?;
    let gradient = b.transpose() * minv * b;
    let gradient = linalg::symmetrize(&gradient);
    let constant = ld - (&gradient * p_anchor).trace();
    Ok((constant, gradient))
}

/// Matrix log-det lower bound (real-domain form): for positive definite
/// `Y`, `Y_bar` and arbitrary `V`, `V_bar`,
///
/// `ln det(I + V V^T Y^-1) >= ln det(I + Vb Vb^T Yb^-1) - Tr(Vb Vb^T Yb^-1)
///   + 2 Tr(Vb^T Yb^-1 V) - Tr((Yb^-1 - (Vb Vb^T + Yb)^-1)^T (V V^T + Y))`.
///
/// Returns the right-hand side in nats.
pub fn logdet_quadratic_lower(
    v: &DMatrix<f64>,
    y: &DMatrix<f64>,
    v_bar: &DMatrix<f64>,
    y_bar: &DMatrix<f64>,
) -> Result<f64, RateError> {
    let yb_inv = linalg::inverse_pd(y_bar)
        .ok_or_else(|| RateError::NumericalDomain("Y_bar not positive definite".into()))?;
    let vvb = v_bar * v_bar.transpose();
    let full_inv = linalg::inverse_pd(&(&vvb + y_bar))
        .ok_or_else(|| RateError::NumericalDomain("Vb Vb^T + Y_bar not PD".into()))?;
    let anchor = linalg::logdet_pd(&(DMatrix::identity(y.nrows(), y.nrows()) + &vvb * &yb_inv))
        .ok_or_else(|| RateError::NumericalDomain("anchor log det failed".into()))?;
    let w = &yb_inv - &full_inv;
    Ok(anchor - (&vvb * &yb_inv).trace() + 2.0 * (v_bar.transpose() * &yb_inv * v).trace()
        - (w.transpose() * (v * v.transpose() + y)).trace())
}

// ---------------------------------------------------------------------------
// Surrogates in the covariance direction
// ---------------------------------------------------------------------------

/// Concave minorant of one rate term as a function of the covariance set,
/// for fixed reflecting coefficients.
#[derive(Debug, Clone)]
pub struct CovSurrogate {
    pub term: RateTerm,
    /// Users inside the concave log-det (denominator set plus the target).
    pub num_set: Vec<UserId>,
    /// Receiver channels per transmitting cell, `2 x 2 N_BS` each.
    pub recv_chan: Vec<DMatrix<f64>>,
    /// Affine penalty `Tr(grad_u P_u)` per denominator user (bits scale).
    pub affine: Vec<(UserId, DMatrix<f64>)>,
    /// Collected constants (bits).
    pub constant: f64,
    /// Noise floor entering the log-det.
    pub sigma2: f64,
}

impl CovSurrogate {
    /// Surrogate value at an arbitrary covariance set, in bits/s/Hz.
    pub fn evaluate(&self, covs: &CovSet) -> Result<f64, RateError> {
        let mut m = DMatrix::identity(2, 2) * (self.sigma2 / 2.0);
        for u in &self.num_set {
            let h = &self.recv_chan[u.cell];
            m += h * &covs.p[u.cell][u.user] * h.transpose();
        }
        let ld = linalg::logdet_pd(&m)
            .ok_or_else(|| RateError::NumericalDomain("surrogate log det failed".into()))?;
        let mut v = ld / (2.0 * LN2) + self.constant;
        for (u, g) in &self.affine {
            v -= (g * &covs.p[u.cell][u.user]).trace();
        }
        Ok(v)
    }
}

/// Build the concave covariance-direction minorants of every rate term,
/// anchored at `anchor` with reflecting coefficients fixed inside `h`.
pub fn cov_surrogates(
    anchor: &CovSet,
    h: &RealChannels,
    config: &NetworkConfig,
) -> Result<Vec<CovSurrogate>, RateError> {
    let terms = rates::rate_terms(config);
    let mut out = Vec::with_capacity(terms.len());
    for term in terms {
        let recv = term.receiver;
        let recv_chan: Vec<DMatrix<f64>> =
            (0..config.cells).map(|i| h.h[recv.cell][recv.user][i].clone()).collect();
        let dbar = rates::term_denominator(h, anchor, &term, config.noise_power);
        let ld_den = linalg::logdet_pd(&dbar).ok_or_else(|| {
            RateError::NumericalDomain("anchor denominator not positive definite".into())
        })?;
        let dinv = linalg::inverse_pd(&dbar)
            .ok_or_else(|| RateError::NumericalDomain("anchor denominator inversion".into()))?;
        // Gradient of the convex part w.r.t. each denominator user, shared
        // across users of the same transmitting cell.
        let per_cell_grad: Vec<DMatrix<f64>> = (0..config.cells)
            .map(|i| {
                let hm = &recv_chan[i];
                linalg::symmetrize(&(hm.transpose() * &dinv * hm)) / (2.0 * LN2)
            })
            .collect();
        let mut constant = -ld_den / (2.0 * LN2);
        let mut affine = Vec::with_capacity(term.den.len());
        for u in &term.den {
            let g = per_cell_grad[u.cell].clone();
            constant += (&g * &anchor.p[u.cell][u.user]).trace();
            affine.push((*u, g));
        }
        let mut num_set = term.den.clone();
        num_set.push(term.target);
        out.push(CovSurrogate {
            term,
            num_set,
            recv_chan,
            affine,
            constant,
            sigma2: config.noise_power,
        });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Surrogates in the reflecting-coefficient direction
// ---------------------------------------------------------------------------

/// Flat indexing of the stacked real/imaginary reflecting coefficients.
#[derive(Debug, Clone, Copy)]
pub struct ThetaLayout {
    pub ris_count: usize,
    pub ris_elements: usize,
}

impl ThetaLayout {
    pub fn dim(&self) -> usize {
        2 * self.ris_count * self.ris_elements
    }

    pub fn index(&self, m: usize, n: usize, imag: bool) -> usize {
        2 * (m * self.ris_elements + n) + imag as usize
    }

    pub fn to_vector(&self, state: &ReflectState) -> DVector<f64> {
        let mut z = DVector::zeros(self.dim());
        for (m, row) in state.theta.iter().enumerate() {
            for (n, v) in row.iter().enumerate() {
                z[self.index(m, n, false)] = v.re;
                z[self.index(m, n, true)] = v.im;
            }
        }
        z
    }

    pub fn to_state(&self, z: &DVector<f64>, set_tag: crate::model::FeasibilitySet) -> ReflectState {
        let theta = (0..self.ris_count)
            .map(|m| {
                (0..self.ris_elements)
                    .map(|n| Complex64::new(z[self.index(m, n, false)], z[self.index(m, n, true)]))
                    .collect()
            })
            .collect();
        ReflectState { theta, set_tag }
    }
}

/// Real-decomposition channel of one (receiver, transmitting BS) pair as an
/// affine function of the flat coefficient vector.
#[derive(Debug, Clone)]
pub struct ThetaAffineChannel {
    /// Channel with all coefficients at zero (the direct link).
    pub base: DMatrix<f64>,
    /// Non-zero coefficient matrices, one per flat coordinate.
    pub coeffs: Vec<(usize, DMatrix<f64>)>,
}

impl ThetaAffineChannel {
    pub fn at(&self, z: &DVector<f64>) -> DMatrix<f64> {
        let mut h = self.base.clone();
        for (j, k) in &self.coeffs {
            h += k * z[*j];
        }
        h
    }
}

/// All affine channel maps of a scenario, independent of the anchor.
#[derive(Debug, Clone)]
pub struct ThetaContext {
    pub layout: ThetaLayout,
    /// Indexed `[cell][user][bs]`.
    pub chans: Vec<Vec<Vec<ThetaAffineChannel>>>,
}

pub fn theta_context(
    channels: &ChannelSet,
    config: &NetworkConfig,
) -> Result<ThetaContext, ModelError> {
    let layout = ThetaLayout {
        ris_count: config.ris_count,
        ris_elements: config.ris_elements,
    };
    let mut chans = Vec::with_capacity(config.cells);
    for l in 0..config.cells {
        let mut per_cell = Vec::new();
        for k in 0..config.users_per_cell() {
            let mut per_user = Vec::new();
            for i in 0..config.cells {
                let base = crate::model::real_decompose_channel(&channels.direct[l][k][i])?;
                let mut coeffs = Vec::new();
                for m in 0..config.ris_count {
                    for n in 0..config.ris_elements {
                        let f = channels.ris_user[l][k][m][n];
                        let g_row = &channels.bs_ris[m][i][n];
                        let c: Vec<Complex64> = g_row.iter().map(|g| f * g).collect();
                        if c.iter().all(|v| v.norm_sqr() == 0.0) {
                            continue;
                        }
                        let re_mat = crate::model::real_decompose_channel(&c)?;
                        let ci: Vec<Complex64> =
                            c.iter().map(|v| v * Complex64::new(0.0, 1.0)).collect();
                        let im_mat = crate::model::real_decompose_channel(&ci)?;
                        coeffs.push((layout.index(m, n, false), re_mat));
                        coeffs.push((layout.index(m, n, true), im_mat));
                    }
                }
                per_user.push(ThetaAffineChannel { base, coeffs });
            }
            per_cell.push(per_user);
        }
        chans.push(per_cell);
    }
    Ok(ThetaContext { layout, chans })
}

/// One squared-norm piece `scale * ||left * H(z) * right||_F^2` of the
/// convex-quadratic part of a coefficient-direction surrogate.
#[derive(Debug, Clone)]
pub struct QuadPiece {
    pub recv: UserId,
    pub bs: usize,
    /// `W^{1/2}`, 2 x 2.
    pub left: DMatrix<f64>,
    /// `P_u^{1/2}`, 2N x 2N.
    pub right: DMatrix<f64>,
}

/// Concave surrogate of one rate term as a function of the reflecting
/// coefficients, for fixed covariances.
#[derive(Debug, Clone)]
pub struct ThetaSurrogate {
    pub term: RateTerm,
    pub constant: f64,
    /// Dense linear coefficients over the flat coordinate vector (bits).
    pub lin: DVector<f64>,
    /// Quadratic penalty pieces, subtracted with weight `1/(2 ln 2)`.
    pub pieces: Vec<QuadPiece>,
}

impl ThetaSurrogate {
    pub fn evaluate(&self, ctx: &ThetaContext, z: &DVector<f64>) -> f64 {
        let mut v = self.constant + self.lin.dot(z);
        for piece in &self.pieces {
            let h = ctx.chans[piece.recv.cell][piece.recv.user][piece.bs].at(z);
            let prod = &piece.left * h * &piece.right;
            v -= prod.norm_squared() / (2.0 * LN2);
        }
        v
    }
}

/// Coefficient-direction surrogates of every rate term, anchored at
/// `theta_anchor` with covariances fixed to `covs`.
pub fn theta_surrogates(
    covs: &CovSet,
    theta_anchor: &ReflectState,
    ctx: &ThetaContext,
    config: &NetworkConfig,
) -> Result<Vec<ThetaSurrogate>, RateError> {
    let z_bar = ctx.layout.to_vector(theta_anchor);
    let terms = rates::rate_terms(config);
    let dim = ctx.layout.dim();
    // Anchor channels per (cell, user, bs).
    let h_bar: Vec<Vec<Vec<DMatrix<f64>>>> = ctx
        .chans
        .iter()
        .map(|per_cell| {
            per_cell
                .iter()
                .map(|per_user| per_user.iter().map(|c| c.at(&z_bar)).collect())
                .collect()
        })
        .collect();
    let real = RealChannels { h: h_bar };

    let mut out = Vec::with_capacity(terms.len());
    for term in terms {
        let recv = term.receiver;
        let y_bar = rates::term_denominator(&real, covs, &term, config.noise_power);
        let yb_inv = linalg::inverse_pd(&y_bar)
            .ok_or_else(|| RateError::NumericalDomain("anchor denominator not PD".into()))?;
        let p_target = &covs.p[term.target.cell][term.target.user];
        let p_sqrt = linalg::psd_sqrt(p_target);
        let v_bar = &real.h[recv.cell][recv.user][term.target.cell] * &p_sqrt;
        let vvb = &v_bar * v_bar.transpose();
        let full_inv = linalg::inverse_pd(&(&vvb + &y_bar))
            .ok_or_else(|| RateError::NumericalDomain("anchor numerator not PD".into()))?;
        let w = linalg::symmetrize(&(&yb_inv - &full_inv));
        let w_sqrt = linalg::psd_sqrt(&w);

        let anchor_rate = rates::rate_term_value(&real, covs, &term, config.noise_power)?;
        let mut constant = anchor_rate - (&vvb * &yb_inv).trace() / (2.0 * LN2)
            - (config.noise_power / 2.0) * w.trace() / (2.0 * LN2);

        // Linear part: Tr(P^{1/2} Vb^T Yb^{-1} H(z)) / ln 2.
        let lin_mat = (&p_sqrt * v_bar.transpose() * &yb_inv).transpose() / LN2;
        let chan_t = &ctx.chans[recv.cell][recv.user][term.target.cell];
        constant += (lin_mat.transpose() * &chan_t.base).trace();
        let mut lin = DVector::zeros(dim);
        for (j, k) in &chan_t.coeffs {
            lin[*j] += (lin_mat.transpose() * k).trace();
        }

        // Quadratic pieces: one per user inside V V^T + Y.
        let mut users = term.den.clone();
        users.push(term.target);
        let mut pieces = Vec::with_capacity(users.len());
        for u in users {
            let p_u_sqrt = if u == term.target {
                p_sqrt.clone()
            } else {
                linalg::psd_sqrt(&covs.p[u.cell][u.user])
            };
            pieces.push(QuadPiece {
                recv,
                bs: u.cell,
                left: w_sqrt.clone(),
                right: p_u_sqrt,
            });
        }
        out.push(ThetaSurrogate { term, constant, lin, pieces });
    }
    Ok(out)
}

/// Per-user minimum over the surrogate terms constraining each user's rate,
/// in bits. Used for the fractional-programming ratio updates.
pub fn per_user_surrogate_rates(
    surrogates: &[CovSurrogate],
    covs: &CovSet,
    config: &NetworkConfig,
) -> Result<Vec<Vec<f64>>, RateError> {
    let mut rates = vec![vec![f64::INFINITY; config.users_per_cell()]; config.cells];
    for s in surrogates {
        let v = s.evaluate(covs)?;
        let slot = &mut rates[s.term.rate_of.cell][s.term.rate_of.user];
        *slot = slot.min(v);
    }
    Ok(rates)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{sample_channels, sample_topology};
    use crate::experiment::toy_config;
    use crate::model::Signaling;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_psd(n: usize, rng: &mut ChaCha8Rng, scale: f64) -> DMatrix<f64> {
        let r = DMatrix::from_fn(n, n, |_, _| rng.gen::<f64>() - 0.5);
        &r * r.transpose() * scale
    }

    #[test]
    fn affine_upper_tangent_at_anchor() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let a = random_psd(2, &mut rng, 1.0) + DMatrix::identity(2, 2) * 0.1;
            let b = DMatrix::from_fn(2, 3, |_, _| rng.gen::<f64>() - 0.5);
            let p0 = random_psd(3, &mut rng, 1.0);
            let (c, g) = logdet_affine_upper(&a, &b, &p0).unwrap();
            let f0 = linalg::logdet_pd(&(&a + &b * &p0 * b.transpose())).unwrap();
            assert!((c + (&g * &p0).trace() - f0).abs() < 1e-10);
            assert!(linalg::is_psd(&g, 1e-9));
        }
    }

    #[test]
    fn affine_upper_zero_coupling_reduces_to_logdet_a() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 0.1, 0.1, 1.0]);
        let b = DMatrix::zeros(2, 3);
        let p0 = DMatrix::identity(3, 3);
        let (c, g) = logdet_affine_upper(&a, &b, &p0).unwrap();
        assert!((c - linalg::logdet_pd(&a).unwrap()).abs() < 1e-12);
        assert!(g.norm() < 1e-14);
    }

    #[test]
    fn affine_upper_bounds_random_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            let a = random_psd(2, &mut rng, 1.0) + DMatrix::identity(2, 2) * 0.05;
            let b = DMatrix::from_fn(2, 4, |_, _| rng.gen::<f64>() - 0.5);
            let p0 = random_psd(4, &mut rng, 1.0);
            let p = random_psd(4, &mut rng, 1.5);
            let (c, g) = logdet_affine_upper(&a, &b, &p0).unwrap();
            let truth = linalg::logdet_pd(&(&a + &b * &p * b.transpose())).unwrap();
            let bound = c + (&g * &p).trace();
            assert!(bound >= truth - 1e-9, "bound {bound} < truth {truth}");
        }
    }

    #[test]
    fn quadratic_lower_holds_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..300 {
            let n = 2;
            let m = 3;
            let y = random_psd(n, &mut rng, 1.0) + DMatrix::identity(n, n) * 0.05;
            let yb = random_psd(n, &mut rng, 1.0) + DMatrix::identity(n, n) * 0.05;
            let v = DMatrix::from_fn(n, m, |_, _| rng.gen::<f64>() - 0.5);
            let vb = DMatrix::from_fn(n, m, |_, _| rng.gen::<f64>() - 0.5);
            let yinv = linalg::inverse_pd(&y).unwrap();
            let lhs = linalg::logdet_pd(
                &(DMatrix::identity(n, n) + &v * v.transpose() * &yinv),
            )
            .unwrap();
            let rhs = logdet_quadratic_lower(&v, &y, &vb, &yb).unwrap();
            assert!(lhs >= rhs - 1e-9, "lhs {lhs} < rhs {rhs}");
        }
    }

    #[test]
    fn quadratic_lower_tight_at_matching_anchor() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let y = random_psd(2, &mut rng, 1.0) + DMatrix::identity(2, 2) * 0.1;
        let v = DMatrix::from_fn(2, 3, |_, _| rng.gen::<f64>() - 0.5);
        let yinv = linalg::inverse_pd(&y).unwrap();
        let lhs =
            linalg::logdet_pd(&(DMatrix::identity(2, 2) + &v * v.transpose() * &yinv)).unwrap();
        let rhs = logdet_quadratic_lower(&v, &y, &v, &y).unwrap();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    fn setup(seed: u64) -> (crate::model::NetworkConfig, ChannelSet, ReflectState, CovSet) {
        let config = toy_config();
        let topo = sample_topology(&config, seed);
        let ch = sample_channels(&topo, &config, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let theta = ReflectState {
            theta: (0..config.ris_count)
                .map(|_| {
                    (0..config.ris_elements)
                        .map(|_| {
                            Complex64::from_polar(
                                rng.gen_range(0.2..1.0),
                                rng.gen_range(0.0..std::f64::consts::TAU),
                            )
                        })
                        .collect()
                })
                .collect(),
            set_tag: crate::model::FeasibilitySet::U,
        };
        let n2 = 2 * config.bs_antennas;
        let p = (0..config.cells)
            .map(|l| {
                let mut mats: Vec<DMatrix<f64>> = (0..config.users_per_cell())
                    .map(|_| random_psd(n2, &mut rng, 1.0))
                    .collect();
                let total: f64 = mats.iter().map(|m| m.trace()).sum();
                let scale = config.power_budget[l] * 0.8 / total;
                for m in mats.iter_mut() {
                    *m *= scale;
                }
                mats
            })
            .collect();
        (config.clone(), ch, theta, CovSet { p, mode: Signaling::Igs })
    }

    #[test]
    fn cov_surrogate_tangent_and_minorant() {
        for seed in 0..10 {
            let (config, ch, theta, covs) = setup(seed);
            let real = RealChannels::compute(&ch, &theta, &config).unwrap();
            let surs = cov_surrogates(&covs, &real, &config).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
            for s in &surs {
                let at_anchor = s.evaluate(&covs).unwrap();
                let truth =
                    rates::rate_term_value(&real, &covs, &s.term, config.noise_power).unwrap();
                assert!(
                    (at_anchor - truth).abs() < 1e-8,
                    "tangency violated: {at_anchor} vs {truth}"
                );
                for _ in 0..20 {
                    let mut other = covs.clone();
                    for per_cell in other.p.iter_mut() {
                        for p in per_cell.iter_mut() {
                            *p = random_psd(p.nrows(), &mut rng, 0.3);
                        }
                    }
                    let bound = s.evaluate(&other).unwrap();
                    let truth =
                        rates::rate_term_value(&real, &other, &s.term, config.noise_power)
                            .unwrap();
                    assert!(bound <= truth + 1e-9, "minorant violated: {bound} > {truth}");
                }
            }
        }
    }

    #[test]
    fn interference_free_cov_surrogate_is_exact_everywhere() {
        let mut config = toy_config();
        config.cells = 1;
        config.clusters_per_cell = 1;
        config.users_per_cluster = 1;
        config.power_budget = vec![1.0];
        config.weights = vec![vec![1.0]];
        config.rate_thresholds = vec![vec![0.0]];
        config.geometry = crate::model::Geometry::single_cell(config.ris_count.max(1));
        let topo = sample_topology(&config, 3);
        let ch = sample_channels(&topo, &config, 3);
        let theta = ReflectState::all_zero(config.ris_count, config.ris_elements, config.feasibility_set);
        let real = RealChannels::compute(&ch, &theta, &config).unwrap();
        let covs = CovSet::isotropic(&config);
        let surs = cov_surrogates(&covs, &real, &config).unwrap();
        assert_eq!(surs.len(), 1);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let mut other = covs.clone();
            other.p[0][0] = random_psd(2 * config.bs_antennas, &mut rng, 0.4);
            let bound = surs[0].evaluate(&other).unwrap();
            let truth =
                rates::rate_term_value(&real, &other, &surs[0].term, config.noise_power).unwrap();
            assert!((bound - truth).abs() < 1e-10);
        }
    }

    #[test]
    fn theta_surrogate_tangent_and_minorant() {
        for seed in 0..10 {
            let (config, ch, theta, covs) = setup(seed);
            let ctx = theta_context(&ch, &config).unwrap();
            let surs = theta_surrogates(&covs, &theta, &ctx, &config).unwrap();
            let z_bar = ctx.layout.to_vector(&theta);
            let real_bar = RealChannels::compute(&ch, &theta, &config).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 500);
            for s in &surs {
                let truth =
                    rates::rate_term_value(&real_bar, &covs, &s.term, config.noise_power).unwrap();
                let at_anchor = s.evaluate(&ctx, &z_bar);
                assert!(
                    (at_anchor - truth).abs() < 1e-8,
                    "theta tangency violated: {at_anchor} vs {truth}"
                );
                for _ in 0..10 {
                    let other = ReflectState {
                        theta: (0..config.ris_count)
                            .map(|_| {
                                (0..config.ris_elements)
                                    .map(|_| {
                                        Complex64::from_polar(
                                            rng.gen_range(0.0..1.0),
                                            rng.gen_range(0.0..std::f64::consts::TAU),
                                        )
                                    })
                                    .collect()
                            })
                            .collect(),
                        set_tag: theta.set_tag,
                    };
                    let z = ctx.layout.to_vector(&other);
                    let real_o = RealChannels::compute(&ch, &other, &config).unwrap();
                    let bound = s.evaluate(&ctx, &z);
                    let truth =
                        rates::rate_term_value(&real_o, &covs, &s.term, config.noise_power)
                            .unwrap();
                    assert!(bound <= truth + 1e-9, "theta minorant violated: {bound} > {truth}");
                }
            }
        }
    }

    #[test]
    fn surrogates_are_midpoint_concave() {
        let (config, ch, theta, covs) = setup(6);
        let real = RealChannels::compute(&ch, &theta, &config).unwrap();
        let surs_p = cov_surrogates(&covs, &real, &config).unwrap();
        let ctx = theta_context(&ch, &config).unwrap();
        let surs_t = theta_surrogates(&covs, &theta, &ctx, &config).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let n2 = 2 * config.bs_antennas;
        for _ in 0..50 {
            let mut a = covs.clone();
            let mut b = covs.clone();
            for per_cell in a.p.iter_mut().chain(b.p.iter_mut()) {
                for p in per_cell.iter_mut() {
                    *p = random_psd(n2, &mut rng, 0.3);
                }
            }
            let mut mid = a.clone();
            for l in 0..config.cells {
                for k in 0..config.users_per_cell() {
                    mid.p[l][k] = (&a.p[l][k] + &b.p[l][k]) * 0.5;
                }
            }
            for s in &surs_p {
                let lhs = s.evaluate(&mid).unwrap();
                let rhs = 0.5 * (s.evaluate(&a).unwrap() + s.evaluate(&b).unwrap());
                assert!(lhs >= rhs - 1e-10, "covariance surrogate not concave");
            }
            let za = DVector::from_fn(ctx.layout.dim(), |_, _| rng.gen::<f64>() - 0.5);
            let zb = DVector::from_fn(ctx.layout.dim(), |_, _| rng.gen::<f64>() - 0.5);
            let zm = (&za + &zb) * 0.5;
            for s in &surs_t {
                let lhs = s.evaluate(&ctx, &zm);
                let rhs = 0.5 * (s.evaluate(&ctx, &za) + s.evaluate(&ctx, &zb));
                assert!(lhs >= rhs - 1e-10, "coefficient surrogate not concave");
            }
        }
    }

    #[test]
    fn affine_channel_map_matches_composition() {
        let (config, ch, theta, _) = setup(2);
        let ctx = theta_context(&ch, &config).unwrap();
        let z = ctx.layout.to_vector(&theta);
        for l in 0..config.cells {
            for k in 0..config.users_per_cell() {
                for i in 0..config.cells {
                    let direct = crate::channel::compose_channel(&ch, &theta, l, k, i).unwrap();
                    let expected = crate::model::real_decompose_channel(&direct).unwrap();
                    let got = ctx.chans[l][k][i].at(&z);
                    assert!((got - expected).norm() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn gradient_of_cov_surrogate_matches_finite_differences() {
        // The affine part's gradient must match central differences of the
        // true rate at the anchor.
        let (config, ch, theta, covs) = setup(4);
        let real = RealChannels::compute(&ch, &theta, &config).unwrap();
        let surs = cov_surrogates(&covs, &real, &config).unwrap();
        let s = &surs[0];
        let eps = 1e-6;
        for u in 0..config.users_per_cell() {
            let n2 = 2 * config.bs_antennas;
            for a in 0..n2 {
                for b in a..n2 {
                    let mut plus = covs.clone();
                    let mut minus = covs.clone();
                    plus.p[0][u][(a, b)] += eps;
                    plus.p[0][u][(b, a)] = plus.p[0][u][(a, b)];
                    minus.p[0][u][(a, b)] -= eps;
                    minus.p[0][u][(b, a)] = minus.p[0][u][(a, b)];
                    let fd = (rates::rate_term_value(&real, &plus, &s.term, config.noise_power)
                        .unwrap()
                        - rates::rate_term_value(&real, &minus, &s.term, config.noise_power)
                            .unwrap())
                        / (2.0 * eps);
                    let sd = (s.evaluate(&plus).unwrap() - s.evaluate(&minus).unwrap())
                        / (2.0 * eps);
                    assert!(
                        (fd - sd).abs() <= 1e-4 * (1.0 + fd.abs()),
                        "grad mismatch at ({a},{b}): fd {fd} vs surrogate {sd}"
                    );
                }
            }
        }
    }
}
