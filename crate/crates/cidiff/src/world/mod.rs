//! The compositional data-generating process: independent discrete
//! attributes, a training support mask over attribute tuples, Gaussian
//! observations whose means add across attributes, and exact oracle scores
//! for every conditional the training distribution defines.
//!
//! The world is deliberately small enough that everything a model estimates
//! has a closed form here, so model behavior can be checked against ground
//! truth rather than against other model output.

mod dataset;
mod gaussian;
mod space;

pub use dataset::{LabeledDataset, Provenance};
pub use gaussian::{
    axis_pair_world, oracle_conditional_score, oracle_mixture_score,
    oracle_noised_conditional_score, sample_dataset, GaussianWorld,
};
pub use space::{check_support_cover, AttributeSpace, ConditionVector, CoverReport};

use thiserror::Error;

/// Errors from world construction, oracle queries, and dataset handling.
#[derive(Debug, Error)]
pub enum WorldError {
    #[error("invalid attribute space: {0}")]
    Space(String),
    #[error("invalid world: {0}")]
    World(String),
    #[error("condition matches no training tuple: {0}")]
    UnsupportedCondition(String),
    #[error("dataset: {0}")]
    Dataset(String),
    #[error("dataset io: {0}")]
    Io(#[from] std::io::Error),
}
