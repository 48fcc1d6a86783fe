//! The measurement chain: every quantitative claim about a trained model
//! goes through here.
//!
//! The centerpiece is the *implicit classifier*: a conditional ε-model
//! defines `p(c | x)` through Bayes' rule without any separately trained
//! discriminator, because the denoising error under condition `c` estimates
//! (up to a shared constant) the negative conditional log-likelihood. Small
//! Monte Carlo error tables over candidate conditions, softmaxed, become
//! probability tables — and from those flow the downstream metrics:
//!
//! - **independence violation**: Jensen–Shannon divergence between the
//!   model's joint table over an attribute pair and the product of its
//!   marginal tables, averaged over an evaluation set;
//! - **conformity**: do generated samples actually carry the attributes
//!   they were asked for, as judged by predictors trained on clean data;
//! - **cloud distance**: closed-form 2-Wasserstein distance between
//!   moment-matched Gaussians as a desk-scale stand-in for large-scale
//!   perceptual metrics;
//! - **group metrics**: accuracy sliced by attribute tuple, with the worst
//!   group as the headline number for spurious-correlation robustness.

mod classifier;
mod downstream;
mod predictors;
mod report;
mod wasserstein;

pub use classifier::{
    implicit_class_probs, implicit_class_probs_batch, js_divergence, jsd_violation,
    ClassTarget, ImplicitClassifierConfig, ProbTable,
};
pub use downstream::{
    group_metrics, group_metrics_from_preds, implicit_generative_classifier_metrics,
    joint_group_metrics, train_downstream_classifier, train_joint_downstream_classifier,
    DownstreamClassifier, DownstreamConfig, GroupMetrics, JointDownstreamClassifier,
};
pub use predictors::{conformity_score, train_attribute_predictors, AttributePredictor};
pub use report::MetricsReport;
pub use wasserstein::{gaussian_w2, GaussianW2};

use thiserror::Error;

use crate::diffusion::DiffusionError;
use crate::numkit::NumError;
use crate::world::WorldError;

/// Errors from metric computation.
#[derive(Debug, Error)]
pub enum EvalError {
    #[error("invalid evaluation configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Diffusion(#[from] DiffusionError),
    #[error(transparent)]
    Num(#[from] NumError),
    #[error(transparent)]
    World(#[from] WorldError),
}
