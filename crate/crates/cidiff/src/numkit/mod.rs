//! Minimal numeric substrate: matrices, a dense feed-forward network with
//! reverse-mode gradients, an Adam optimizer, a splittable PRNG, and a
//! versioned checkpoint container.
//!
//! Everything is 64-bit. Desk-scale problem sizes make double precision cheap
//! and keep finite-difference gradient checks tight.

mod adam;
mod checkpoint;
mod net;
mod rng;

pub use adam::{AdamConfig, AdamState};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointError};
pub use net::{Activation, DenseNet, ForwardTrace, ParamGrads};
pub use rng::Prng;

use thiserror::Error;

/// Row-major dense matrix of 64-bit floats.
///
/// Backed by `ndarray`; the standard layout of [`ndarray::Array2`] is exactly
/// rows x cols of contiguous f64, and matrix products route through its tuned
/// GEMM kernels.
pub type Matrix = ndarray::Array2<f64>;

/// Errors from the numeric substrate.
#[derive(Debug, Error)]
pub enum NumError {
    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    Shape {
        context: String,
        expected: String,
        got: String,
    },
    #[error("non-finite values in {context}")]
    NonFinite { context: String },
    #[error("invalid configuration: {0}")]
    Config(String),
}

/// Checks that every entry of `m` is finite.
///
/// Public operations must never let NaN or infinity escape silently; callers
/// turn a violation into an error rather than a poisoned value.
pub fn ensure_finite(m: &Matrix, context: &str) -> Result<(), NumError> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(NumError::NonFinite {
            context: context.to_string(),
        })
    }
}

/// Like [`ensure_finite`] but for a scalar.
pub fn ensure_finite_scalar(v: f64, context: &str) -> Result<(), NumError> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(NumError::NonFinite {
            context: context.to_string(),
        })
    }
}
