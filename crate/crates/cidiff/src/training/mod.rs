//! The regularized training objective and its loop.
//!
//! The objective has two terms, evaluated on the same mini-batch:
//!
//! ```text
//! L_total = L_score + λ·L_ci
//! ```
//!
//! `L_score` is standard denoising score matching with randomly masked
//! conditions (classifier-free guidance training). `L_ci` penalizes
//! deviations from attribute-factorization of the modeled conditionals: for
//! a random attribute pair `(i, j)` per sample, the four predictions under
//! conditions `c^i`, `c^j`, `c^{i,j}`, `c^∅` — all built from the sample's
//! *unmasked* label, all sharing the same noised input — must satisfy
//! `ε̂(c^i) + ε̂(c^j) = ε̂(c^{i,j}) + ε̂(c^∅)`, which is exactly what holds
//! when the conditionals factorize across attributes. Driving the residual
//! to zero forces the model's implicit joint to behave like a product of
//! per-attribute factors even on attribute tuples absent from training.
//!
//! Randomness is materialized into [`StepDraws`] before any loss is
//! computed, so losses are pure functions of `(model, batch, draws)` — the
//! property the finite-difference gradient checks rely on.

mod loss;
mod trainer;

pub use loss::{
    ci_loss_with_grads, ci_residual_mean_sq, coind_losses, eps_mse, score_loss_with_grads,
    CiDraws, CiWeighting, CoIndLossBreakdown, StepDraws,
};
pub(crate) use loss::branch_conditions;
pub use trainer::{
    suggest_lambda, suggest_lambda_ratio, train, CheckpointSpec, LossLogRow, TrainConfig,
    TrainReport,
};

use thiserror::Error;

use crate::diffusion::DiffusionError;
use crate::numkit::NumError;
use crate::world::WorldError;

/// Errors from loss evaluation and the training loop.
#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Diffusion(#[from] DiffusionError),
    #[error(transparent)]
    Num(#[from] NumError),
    #[error(transparent)]
    World(#[from] WorldError),
    #[error("training io: {0}")]
    Io(#[from] std::io::Error),
}
