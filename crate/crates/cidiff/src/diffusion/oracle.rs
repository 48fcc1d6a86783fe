//! Closed-form ε-model backed by the Gaussian world's exact scores.
//!
//! Represents a *perfectly converged* denoiser for a chosen training
//! distribution: it answers every conditional query with the exact score of
//! the t-noised mixture, converted to ε via `ε̂ = -√(1-ᾱ_t)·s`. Paired with
//! a full-support space it is the ideal model of the true world; paired
//! with a partial support it is the ideal model of the *training* world —
//! including that model's compositional blind spots. Metrics and samplers
//! are validated against both before any learned network enters the picture.

use crate::world::{oracle_noised_conditional_score, AttributeSpace, ConditionVector, GaussianWorld};
use crate::Matrix;

use super::{DiffusionError, EpsModel, NoiseSchedule};

/// Exact ε-model for the training distribution defined by `(world, space)`.
#[derive(Debug, Clone)]
pub struct OracleEpsModel {
    world: GaussianWorld,
    space: AttributeSpace,
    schedule: NoiseSchedule,
}

impl OracleEpsModel {
    pub fn new(world: GaussianWorld, space: AttributeSpace, schedule: NoiseSchedule) -> OracleEpsModel {
        OracleEpsModel {
            world,
            space,
            schedule,
        }
    }

    pub fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    pub fn space(&self) -> &AttributeSpace {
        &self.space
    }
}

impl EpsModel for OracleEpsModel {
    fn data_dim(&self) -> usize {
        self.world.dim()
    }

    fn predict_eps(
        &self,
        x_t: &Matrix,
        t: usize,
        conds: &[ConditionVector],
    ) -> Result<Matrix, DiffusionError> {
        let ab = self.schedule.alpha_bar(t)?;
        if ab >= 1.0 {
            return Err(DiffusionError::ZeroNoise { t });
        }
        if conds.len() != x_t.nrows() {
            return Err(crate::numkit::NumError::Shape {
                context: "oracle conditions".into(),
                expected: format!("{} rows", x_t.nrows()),
                got: format!("{}", conds.len()),
            }
            .into());
        }
        let root = (1.0 - ab).sqrt();
        let mut out = Matrix::zeros((x_t.nrows(), self.world.dim()));
        for (row, cond) in conds.iter().enumerate() {
            let x: Vec<f64> = x_t.row(row).to_vec();
            let score = oracle_noised_conditional_score(&self.world, &self.space, cond, &x, ab)
                .map_err(|e| DiffusionError::Encoding(e.to_string()))?;
            for (col, s) in score.iter().enumerate() {
                out[(row, col)] = -root * s;
            }
        }
        Ok(out)
    }
}
