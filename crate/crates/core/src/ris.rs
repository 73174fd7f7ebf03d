//! Reflecting-coefficient feasibility sets, the phase-amplitude law, set
//! projections, and the affine minorants used to convexify the non-convex
//! modulus constraints inside the reflecting-coefficient subproblems.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::model::{FeasibilitySet, ReflectState};

/// Parameters of the phase-amplitude coupling for feasibility set C.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TcParams {
    /// Minimum amplitude, in `[0, 1]`.
    pub theta_min: f64,
    /// Exponent of the law, `>= 0`.
    pub alpha: f64,
    /// Phase offset in radians.
    pub phi: f64,
}

impl Default for TcParams {
    fn default() -> Self {
        // Measured circuit-model constants commonly used for this law.
        Self {
            theta_min: 0.2,
            alpha: 1.6,
            phi: 0.43 * std::f64::consts::PI,
        }
    }
}

/// Amplitude as a deterministic function of the phase:
/// `theta_min + (1 - theta_min) * ((sin(angle - phi) + 1) / 2)^alpha`,
/// clamped to `[theta_min, 1]`.
pub fn amplitude_law(angle: f64, params: &TcParams) -> f64 {
    let base = (((angle - params.phi).sin() + 1.0) / 2.0).max(0.0);
    let amp = params.theta_min + (1.0 - params.theta_min) * base.powf(params.alpha);
    amp.clamp(params.theta_min, 1.0)
}

/// Project raw coefficients onto a feasibility set.
///
/// U clips amplitudes to the unit disk, I normalizes to unit modulus (zero
/// maps to `1 + 0j` so repeated runs stay deterministic), and C replaces every
/// amplitude by the amplitude law at the element's phase.
pub fn project_to_set(raw: &ReflectState, set_tag: FeasibilitySet, params: &TcParams) -> ReflectState {
    let theta = raw
        .theta
        .iter()
        .map(|row| {
            row.iter()
                .map(|v| match set_tag {
                    FeasibilitySet::U => {
                        let r = v.norm();
                        if r > 1.0 {
                            v / r
                        } else {
                            *v
                        }
                    }
                    FeasibilitySet::I => {
                        let r = v.norm();
                        if r == 0.0 {
                            Complex64::new(1.0, 0.0)
                        } else {
                            v / r
                        }
                    }
                    FeasibilitySet::C => {
                        let angle = if v.norm() == 0.0 { 0.0 } else { v.arg() };
                        Complex64::from_polar(amplitude_law(angle, params), angle)
                    }
                })
                .collect()
        })
        .collect();
    ReflectState { theta, set_tag }
}

/// Set membership check used by the feasibility validators.
pub fn validate_state(state: &ReflectState, params: &TcParams, tol: f64) -> Result<(), String> {
    for (m, row) in state.theta.iter().enumerate() {
        for (n, v) in row.iter().enumerate() {
            let r = v.norm();
            let ok = match state.set_tag {
                FeasibilitySet::U => r <= 1.0 + tol,
                FeasibilitySet::I => (r - 1.0).abs() <= tol,
                FeasibilitySet::C => {
                    let angle = if r == 0.0 { 0.0 } else { v.arg() };
                    (r - amplitude_law(angle, params)).abs() <= tol
                }
            };
            if !ok {
                return Err(format!(
                    "theta[{m}][{n}] = {v} violates set {} (|theta| = {r:.6})",
                    state.set_tag.as_str()
                ));
            }
        }
    }
    Ok(())
}

/// Affine constraint `2 Re(prev) x + 2 Im(prev) y + offset >= rhs` on the
/// real/imaginary parts `(x, y)` of one reflecting coefficient. This is the
/// first-order minorant of `|theta|^2` expanded at `prev`.
#[derive(Debug, Clone, Copy)]
pub struct ModulusMinorant {
    pub coef_re: f64,
    pub coef_im: f64,
    /// `-|prev|^2`.
    pub offset: f64,
    pub rhs: f64,
}

impl ModulusMinorant {
    /// Value of the affine left-hand side at a point.
    pub fn lhs(&self, theta: Complex64) -> f64 {
        self.coef_re * theta.re + self.coef_im * theta.im + self.offset
    }

    pub fn slack(&self, theta: Complex64) -> f64 {
        self.lhs(theta) - self.rhs
    }
}

fn minorant_at(prev: Complex64, rhs: f64) -> ModulusMinorant {
    ModulusMinorant {
        coef_re: 2.0 * prev.re,
        coef_im: 2.0 * prev.im,
        offset: -prev.norm_sqr(),
        rhs,
    }
}

/// Linearized unit-modulus constraint with slack:
/// `|prev|^2 + 2 Re(prev (theta - prev)^*) >= 1 - epsilon`, to be paired with
/// `|theta|^2 <= 1`.
pub fn linearize_unit_modulus(prev: Complex64, epsilon_slack: f64) -> ModulusMinorant {
    minorant_at(prev, 1.0 - epsilon_slack)
}

/// Linearized minimum-modulus constraint
/// `|prev|^2 + 2 Re(prev (theta - prev)^*) >= theta_min^2` for the relaxed
/// box of set C.
pub fn linearize_min_modulus(prev: Complex64, theta_min: f64) -> ModulusMinorant {
    minorant_at(prev, theta_min * theta_min)
}
