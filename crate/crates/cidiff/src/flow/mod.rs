//! The independence penalty carried over to flow matching: velocity fields
//! instead of scores, continuous time instead of a discrete schedule.
//!
//! For affine probability paths from a Gaussian source, score and velocity
//! determine each other pointwise:
//!
//! ```text
//! s_t(x, ·) = a_t·x + b_t·u_t(x, ·)
//! ```
//!
//! with per-time scalars `a_t`, `b_t` and `b_t ≠ 0` on the open interval.
//! Apply the four-branch residual operator `(joint − first − second +
//! unconditional)` to both sides: the `a_t·x` term cancels (its
//! coefficients sum to `1 − 1 − 1 + 1 = 0`) and
//!
//! ```text
//! residual_score = b_t · residual_velocity
//! ```
//!
//! so penalizing the velocity residual enforces exactly the same
//! factorization as the score-space penalty, up to the positive weight
//! `b_t²` — which this module drops, training all times equally. Only the
//! loss and the link live here; full flow-matching training is out of
//! scope.

mod link;
mod velocity;

pub use link::{score_from_velocity, velocity_from_score, AffineScoreVelocityLink};
pub use velocity::{
    velocity_ci_loss, velocity_ci_loss_with_grads, FlowCiDraws, VelocityModel, VelocityNet,
};

use thiserror::Error;

use crate::diffusion::DiffusionError;
use crate::numkit::NumError;

/// Errors from the flow-side loss and link functions.
#[derive(Debug, Error)]
pub enum FlowError {
    #[error("invalid flow configuration: {0}")]
    Config(String),
    #[error("time {t} lies outside the open interval (0, 1)")]
    TimeOutOfInterval { t: f64 },
    #[error("score-velocity link is degenerate at t = {t}")]
    DegenerateLink { t: f64 },
    #[error(transparent)]
    Encoding(#[from] DiffusionError),
    #[error(transparent)]
    Num(#[from] NumError),
}
