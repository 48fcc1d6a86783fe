//! Pointwise affine conversion between velocity fields and scores.
//!
//! An affine path `x_t = α_t·x₁ + σ_t·z` with Gaussian source `z` makes the
//! marginal score a fixed affine function of the marginal velocity at every
//! `(x, t)`. The conversion coefficients depend only on `t`, so they are
//! captured as a pair of scalar functions.

use crate::numkit::Matrix;

use super::FlowError;

/// Time-dependent coefficients `(a_t, b_t)` linking velocity to score via
/// `s = a_t·x + b_t·u`.
///
/// The built-in variant covers the straight-line path `x_t = (1−t)·z + t·x₁`
/// from a standard Gaussian source: solving its marginal relations gives
///
/// ```text
/// a_t = −1/(1−t),    b_t = t/(1−t)
/// ```
///
/// Other affine paths plug in as [`Custom`](AffineScoreVelocityLink::Custom)
/// coefficient functions. Coefficients are only meaningful on the open
/// interval `t ∈ (0, 1)`; at the endpoints the conversion degenerates
/// (`b_0 = 0`: the velocity carries no conditional information at the pure
/// source, and the straight-line coefficients blow up at `t = 1`).
#[derive(Clone, Copy)]
pub enum AffineScoreVelocityLink {
    /// Straight-line interpolation from a standard Gaussian source.
    LinearPath,
    /// User-supplied coefficient functions `a(t)` and `b(t)`.
    Custom {
        a: fn(f64) -> f64,
        b: fn(f64) -> f64,
    },
}

impl std::fmt::Debug for AffineScoreVelocityLink {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            AffineScoreVelocityLink::LinearPath => f.write_str("LinearPath"),
            AffineScoreVelocityLink::Custom { .. } => f.write_str("Custom{..}"),
        }
    }
}

impl AffineScoreVelocityLink {
    /// Evaluates `(a_t, b_t)` at `t`, rejecting times outside the open
    /// interval and links with vanishing or non-finite coefficients.
    pub fn coeffs(&self, t: f64) -> Result<(f64, f64), FlowError> {
        if !t.is_finite() || t <= 0.0 || t >= 1.0 {
            return Err(FlowError::TimeOutOfInterval { t });
        }
        let (a, b) = match self {
            AffineScoreVelocityLink::LinearPath => (-1.0 / (1.0 - t), t / (1.0 - t)),
            AffineScoreVelocityLink::Custom { a, b } => (a(t), b(t)),
        };
        if !a.is_finite() || !b.is_finite() || b == 0.0 {
            return Err(FlowError::DegenerateLink { t });
        }
        Ok((a, b))
    }
}

/// Converts a velocity prediction into a score: `s = a_t·x + b_t·u`.
///
/// Both matrices are `(n, dim)` rows of points and their predicted
/// velocities at the shared time `t`.
pub fn score_from_velocity(
    u: &Matrix,
    x: &Matrix,
    link: &AffineScoreVelocityLink,
    t: f64,
) -> Result<Matrix, FlowError> {
    if u.dim() != x.dim() {
        return Err(FlowError::Config(format!(
            "velocity shape {:?} does not match point shape {:?}",
            u.dim(),
            x.dim()
        )));
    }
    let (a, b) = link.coeffs(t)?;
    Ok(x * a + u * b)
}

/// Inverts [`score_from_velocity`]: `u = (s − a_t·x) / b_t`.
pub fn velocity_from_score(
    s: &Matrix,
    x: &Matrix,
    link: &AffineScoreVelocityLink,
    t: f64,
) -> Result<Matrix, FlowError> {
    if s.dim() != x.dim() {
        return Err(FlowError::Config(format!(
            "score shape {:?} does not match point shape {:?}",
            s.dim(),
            x.dim()
        )));
    }
    let (a, b) = link.coeffs(t)?;
    Ok((s - &(x * a)) / b)
}
