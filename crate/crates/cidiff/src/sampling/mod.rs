//! Generation: compositional score mixing, Langevin dynamics, and
//! deterministic DDIM.
//!
//! The compositional bet is that a factorized conditional model lets us
//! build scores for attribute tuples never seen together. For two
//! conditions the AND-composition is
//!
//! ```text
//! s(x | C₁ ∧ C₂) ≈ γ·s(x|C₁) + s(x|C₂) − γ·s(x)
//! ```
//!
//! which is exact (at γ = 1) whenever the conditionals factorize:
//! `log p(x|C₁,C₂) = log p(x|C₁) + log p(x|C₂) − log p(x)` plus a constant.
//! γ trades off how strongly C₁ is enforced relative to C₂. For `n`
//! conditions the γ-free form generalizes to `Σᵢ s(x|Cᵢ) − (n−1)·s(x)`.
//!
//! Both samplers consume scores through [`EpsModel`](crate::diffusion::EpsModel),
//! so a trained network and the closed-form oracle are interchangeable, and
//! both are deterministic functions of their seed.

mod compose;
mod ddim;
mod langevin;

pub use compose::{cfg_score, composed_and_many, composed_and_score};
pub use ddim::{ddim_sample, ddim_sample_clipped, ddim_times, SampleCond};
pub use langevin::{energy_distance, langevin_sample, LangevinConfig};

use thiserror::Error;

use crate::diffusion::DiffusionError;

/// Errors from score composition and the samplers.
#[derive(Debug, Error)]
pub enum SamplingError {
    #[error("invalid sampling configuration: {0}")]
    Config(String),
    #[error("chain diverged at step {step}: ‖x‖ = {norm:.3e} exceeds bound {bound:.3e}")]
    Diverged { step: usize, norm: f64, bound: f64 },
    #[error(transparent)]
    Diffusion(#[from] DiffusionError),
}
