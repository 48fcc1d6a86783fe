//! Experiment orchestration: strict run configs, the paired
//! baseline-vs-regularized pipeline, checkpoint evaluation, plot-data
//! export, and a fast invariant suite.
//!
//! A run is a pure function of its config: the config's canonical
//! serialization is hashed, the hash stamps every checkpoint, and all
//! randomness flows from the seed in the config through named streams.
//! Re-running a config reproduces every artifact byte for byte.

mod check;
mod config;
mod experiment;

pub use check::{run_invariant_checks, CheckReport};
pub use config::{
    hash_hex, EvaluationSpec, ModelSpec, RunConfig, SampleMethod, SamplerSpec, SupportMode,
    TrainerSpec, WorldSpec,
};
pub use experiment::{
    evaluate_checkpoint, export_plot_data, read_loss_csv, read_metrics_csv, read_panel_csv,
    run_experiment, sample_clouds, EvalFixtures, EvalOutput, RunArtifacts, GRID_EXTENT, GRID_H,
    GRID_W,
};

use thiserror::Error;

use crate::diffusion::DiffusionError;
use crate::evaluation::EvalError;
use crate::numkit::NumError;
use crate::sampling::SamplingError;
use crate::training::TrainError;
use crate::world::WorldError;

/// Orchestration errors, grouped by what the process exit code should be:
/// configuration problems (exit 2), runtime/numeric failures (exit 3), and
/// invariant-suite failures (exit 4). Usage errors (exit 1) never reach
/// this type — argument parsing handles them.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("run failed: {0}")]
    Numeric(String),
    #[error("invariant suite failed: {0}")]
    Acceptance(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    /// The documented process exit code for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numeric(_) | CliError::Io(_) => 3,
            CliError::Acceptance(_) => 4,
        }
    }
}

macro_rules! numeric_from {
    ($($err:ty),*) => {
        $(impl From<$err> for CliError {
            fn from(e: $err) -> CliError {
                CliError::Numeric(e.to_string())
            }
        })*
    };
}

numeric_from!(TrainError, SamplingError, EvalError, DiffusionError, WorldError, NumError);

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_follow_the_documented_mapping() {
        assert_eq!(CliError::Config("x".into()).exit_code(), 2);
        assert_eq!(CliError::Numeric("x".into()).exit_code(), 3);
        assert_eq!(CliError::Acceptance("x".into()).exit_code(), 4);
        assert_eq!(
            CliError::Io(std::io::Error::other("x")).exit_code(),
            3
        );
    }

    #[test]
    fn domain_errors_map_to_numeric_failures() {
        let e: CliError = WorldError::Dataset("bad".into()).into();
        assert!(matches!(e, CliError::Numeric(_)));
        let e: CliError = SamplingError::Config("bad".into()).into();
        assert!(matches!(e, CliError::Numeric(_)));
    }
}
