//! Forward diffusion machinery: the noise schedule, the noising map, the
//! ε ↔ score conversion, condition/time encodings, and the conditional
//! ε-prediction network (plus a closed-form oracle implementing the same
//! interface, for verification).
//!
//! Conventions, used consistently everywhere:
//!
//! ```text
//! x_t = √ᾱ_t·x₀ + √(1-ᾱ_t)·ε          forward noising
//! s(x_t) = -ε̂(x_t) / √(1-ᾱ_t)          score from predicted noise
//! ```
//!
//! with `ᾱ₀ = 1` and `ᾱ_t` strictly decreasing to a small positive floor.

mod encode;
mod oracle;
mod schedule;
mod scorenet;

pub use encode::{time_features, time_features_unit, ConditionEncoding, TIME_FEATURE_WIDTH};
pub use oracle::OracleEpsModel;
pub use schedule::{cosine_alpha_bar, cosine_alpha_bar_with, NoiseSchedule};
pub use scorenet::{EpsModel, ScoreNet};

use thiserror::Error;

use crate::numkit::{NumError, Prng};
use crate::world::ConditionVector;
use crate::Matrix;

/// Errors from schedules, encodings, and model evaluation.
#[derive(Debug, Error)]
pub enum DiffusionError {
    #[error("invalid schedule: {0}")]
    Schedule(String),
    #[error("time step {t} outside 0..={t_max}")]
    TimeOutOfRange { t: usize, t_max: usize },
    #[error("score undefined at zero noise (t = {t}, ᾱ = 1)")]
    ZeroNoise { t: usize },
    #[error("encoding: {0}")]
    Encoding(String),
    #[error(transparent)]
    Num(#[from] NumError),
    #[error("model io: {0}")]
    ModelIo(String),
}

/// Forward-noises a batch: `x_t = √ᾱ_t·x₀ + √(1-ᾱ_t)·ε`, elementwise over
/// rows. `t = 0` is the identity embedding (`ᾱ₀ = 1`).
pub fn add_noise(
    x0: &Matrix,
    t: usize,
    eps: &Matrix,
    schedule: &NoiseSchedule,
) -> Result<Matrix, DiffusionError> {
    let ab = schedule.alpha_bar(t)?;
    if x0.raw_dim() != eps.raw_dim() {
        return Err(NumError::Shape {
            context: "add_noise".into(),
            expected: format!("{:?}", x0.raw_dim()),
            got: format!("{:?}", eps.raw_dim()),
        }
        .into());
    }
    Ok(x0.mapv(|v| ab.sqrt() * v) + eps.mapv(|v| (1.0 - ab).sqrt() * v))
}

/// [`add_noise`] with an independent time step per row, as training uses:
/// row `i` becomes `√ᾱ_{t_i}·x₀[i] + √(1-ᾱ_{t_i})·ε[i]`.
pub fn add_noise_rows(
    x0: &Matrix,
    ts: &[usize],
    eps: &Matrix,
    schedule: &NoiseSchedule,
) -> Result<Matrix, DiffusionError> {
    if x0.raw_dim() != eps.raw_dim() || ts.len() != x0.nrows() {
        return Err(NumError::Shape {
            context: "add_noise_rows".into(),
            expected: format!("{:?} with {} time steps", x0.raw_dim(), x0.nrows()),
            got: format!("eps {:?}, {} time steps", eps.raw_dim(), ts.len()),
        }
        .into());
    }
    let mut out = Matrix::zeros(x0.raw_dim());
    for (row, &t) in ts.iter().enumerate() {
        let ab = schedule.alpha_bar(t)?;
        for col in 0..x0.ncols() {
            out[(row, col)] = ab.sqrt() * x0[(row, col)] + (1.0 - ab).sqrt() * eps[(row, col)];
        }
    }
    Ok(out)
}

/// Converts predicted noise to a score: `s = -ε̂ / √(1-ᾱ_t)`. Requires
/// `t ≥ 1` so the denominator is nonzero.
pub fn eps_to_score(
    eps_hat: &Matrix,
    t: usize,
    schedule: &NoiseSchedule,
) -> Result<Matrix, DiffusionError> {
    let ab = schedule.alpha_bar(t)?;
    if ab >= 1.0 {
        return Err(DiffusionError::ZeroNoise { t });
    }
    Ok(eps_hat.mapv(|v| -v / (1.0 - ab).sqrt()))
}

/// Inverse of [`eps_to_score`]: `ε = -√(1-ᾱ_t)·s`.
pub fn score_to_eps(
    score: &Matrix,
    t: usize,
    schedule: &NoiseSchedule,
) -> Result<Matrix, DiffusionError> {
    let ab = schedule.alpha_bar(t)?;
    if ab >= 1.0 {
        return Err(DiffusionError::ZeroNoise { t });
    }
    Ok(score.mapv(|v| -v * (1.0 - ab).sqrt()))
}

/// Independently replaces each observed slot of `cond` by the null token
/// with probability `p_uncond`. The classifier-free-guidance trick: the same
/// network learns every partial conditional, including the fully-null one.
pub fn mask_condition(cond: &ConditionVector, p_uncond: f64, rng: &mut Prng) -> ConditionVector {
    let slots = cond
        .slots()
        .iter()
        .map(|slot| {
            let drop = rng.uniform() < p_uncond;
            if drop {
                None
            } else {
                *slot
            }
        })
        .collect();
    ConditionVector::new(slots)
}

/// [`mask_condition`] over a batch, one independent draw per slot per row.
pub fn mask_conditions(
    conds: &[ConditionVector],
    p_uncond: f64,
    rng: &mut Prng,
) -> Vec<ConditionVector> {
    conds
        .iter()
        .map(|c| mask_condition(c, p_uncond, rng))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_time_step_is_the_identity_embedding() {
        let sched = cosine_alpha_bar(100).unwrap();
        let x0 = ndarray::array![[0.3, -1.2], [2.0, 0.0]];
        let eps = ndarray::array![[1.0, 1.0], [-1.0, 0.5]];
        let xt = add_noise(&x0, 0, &eps, &sched).unwrap();
        assert_eq!(xt, x0);
    }

    #[test]
    fn zero_noise_draw_scales_by_root_alpha_bar() {
        let sched = cosine_alpha_bar(100).unwrap();
        let x0 = ndarray::array![[0.5, -2.0]];
        let eps = Matrix::zeros((1, 2));
        let t = 40;
        let xt = add_noise(&x0, t, &eps, &sched).unwrap();
        let ab = sched.alpha_bar(t).unwrap();
        for (a, b) in xt.iter().zip(x0.iter()) {
            assert!((a - ab.sqrt() * b).abs() < 1e-15);
        }
    }

    #[test]
    fn noising_matches_independent_recomputation() {
        let sched = cosine_alpha_bar(50).unwrap();
        let mut rng = Prng::seed(7);
        let x0 = rng.normal_matrix(3, 2);
        let eps = rng.normal_matrix(3, 2);
        let t = 17;
        let xt = add_noise(&x0, t, &eps, &sched).unwrap();
        let ab = sched.alpha_bar(t).unwrap();
        for i in 0..3 {
            for j in 0..2 {
                let want = ab.sqrt() * x0[(i, j)] + (1.0 - ab).sqrt() * eps[(i, j)];
                assert!((xt[(i, j)] - want).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn noising_is_linear_in_inputs() {
        let sched = cosine_alpha_bar(30).unwrap();
        let mut rng = Prng::seed(8);
        let (x_a, x_b) = (rng.normal_matrix(2, 2), rng.normal_matrix(2, 2));
        let (e_a, e_b) = (rng.normal_matrix(2, 2), rng.normal_matrix(2, 2));
        let t = 11;
        let lhs = add_noise(&(&x_a + &x_b), t, &(&e_a + &e_b), &sched).unwrap();
        let rhs =
            add_noise(&x_a, t, &e_a, &sched).unwrap() + add_noise(&x_b, t, &e_b, &sched).unwrap();
        for (a, b) in lhs.iter().zip(rhs.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn per_row_noising_matches_scalar_noising_row_by_row() {
        let sched = cosine_alpha_bar(60).unwrap();
        let mut rng = Prng::seed(19);
        let x0 = rng.normal_matrix(4, 2);
        let eps = rng.normal_matrix(4, 2);
        let ts = [3usize, 60, 1, 27];
        let got = add_noise_rows(&x0, &ts, &eps, &sched).unwrap();
        for (row, &t) in ts.iter().enumerate() {
            let x_row = x0.row(row).insert_axis(ndarray::Axis(0)).to_owned();
            let e_row = eps.row(row).insert_axis(ndarray::Axis(0)).to_owned();
            let want = add_noise(&x_row, t, &e_row, &sched).unwrap();
            for col in 0..2 {
                assert_eq!(got[(row, col)], want[(0, col)]);
            }
        }
        assert!(add_noise_rows(&x0, &ts[..3], &eps, &sched).is_err());
    }

    #[test]
    fn zero_eps_hat_gives_zero_score() {
        let sched = cosine_alpha_bar(100).unwrap();
        let s = eps_to_score(&Matrix::zeros((2, 2)), 50, &sched).unwrap();
        assert!(s.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn score_eps_roundtrip_is_identity() {
        let sched = cosine_alpha_bar(100).unwrap();
        let mut rng = Prng::seed(3);
        let eps = rng.normal_matrix(4, 2);
        for t in [1, 13, 99, 100] {
            let score = eps_to_score(&eps, t, &sched).unwrap();
            let back = score_to_eps(&score, t, &sched).unwrap();
            for (a, b) in eps.iter().zip(back.iter()) {
                assert!((a - b).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn score_at_zero_noise_is_rejected() {
        let sched = cosine_alpha_bar(10).unwrap();
        let e = Matrix::zeros((1, 2));
        assert!(matches!(
            eps_to_score(&e, 0, &sched),
            Err(DiffusionError::ZeroNoise { t: 0 })
        ));
        assert!(matches!(
            eps_to_score(&e, 11, &sched),
            Err(DiffusionError::TimeOutOfRange { .. })
        ));
    }

    #[test]
    fn masking_at_rate_zero_is_identity_and_at_one_is_all_null() {
        let mut rng = Prng::seed(5);
        let cond = ConditionVector::from_tuple(&[1, 0, 2]);
        let kept = mask_condition(&cond, 0.0, &mut rng);
        assert_eq!(kept, cond);
        // 1.0 is excluded by the configured range in practice, but the limit
        // behavior is still well-defined: uniform() < 1.0 almost surely.
        let dropped = mask_condition(&cond, 1.0 - 1e-15, &mut rng);
        assert!(dropped.is_fully_null());
    }

    #[test]
    fn empirical_masking_rate_matches_p_uncond() {
        let mut rng = Prng::seed(17);
        let cond = ConditionVector::from_tuple(&[0, 1]);
        let n = 100_000;
        let mut dropped = 0usize;
        for _ in 0..n {
            let masked = mask_condition(&cond, 0.3, &mut rng);
            dropped += masked.slots().iter().filter(|s| s.is_none()).count();
        }
        let rate = dropped as f64 / (2 * n) as f64;
        assert!((rate - 0.3).abs() < 0.01, "rate {rate}");
    }

    #[test]
    fn already_null_slots_stay_null() {
        let mut rng = Prng::seed(6);
        let cond = ConditionVector::new(vec![None, Some(1)]);
        for _ in 0..100 {
            let masked = mask_condition(&cond, 0.5, &mut rng);
            assert_eq!(masked.slots()[0], None);
        }
    }
}
