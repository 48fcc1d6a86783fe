//! # cidiff
//!
//! A desk-scale laboratory for conditional diffusion models with an explicit
//! conditional-independence penalty, built around a 2D Gaussian world whose
//! scores are known in closed form.
//!
//! The core question: when a conditional score model is trained on a *partial*
//! set of attribute combinations, does it still factorize over attributes —
//! and can it therefore generate the combinations it never saw? The library
//! provides:
//!
//! - [`numkit`] — matrices, a dense feed-forward net with reverse-mode
//!   gradients, Adam, a splittable PRNG, and a bit-exact checkpoint format.
//! - [`world`] — the compositional data-generating process: independent
//!   discrete attributes, support masks, exact mixture scores.
//! - [`diffusion`] — noise schedule, forward noising, ε↔score conversion, and
//!   the conditional ε-prediction network with null-token conditioning.
//! - [`training`] — the regularized objective (denoising score matching plus a
//!   pairwise conditional-independence penalty) and its training loop.
//! - [`sampling`] — Langevin dynamics, deterministic DDIM, guidance mixing,
//!   and composed AND scores for unseen attribute tuples.
//! - [`evaluation`] — implicit diffusion classifier, independence-violation
//!   JSD, conformity score, Gaussian 2-Wasserstein distance, and downstream
//!   worst-group accuracy.
//! - [`flow`] — the same independence penalty expressed on velocity fields
//!   for Gaussian-source flow models.
//! - [`cli`] — experiment configs, the seeded end-to-end pipeline, and
//!   plot-data export.

pub mod cli;
pub mod diffusion;
pub mod evaluation;
pub mod flow;
pub mod numkit;
pub mod sampling;
pub mod training;
pub mod world;

pub use numkit::Matrix;
