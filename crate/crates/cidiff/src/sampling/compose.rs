//! Affine score combinations: classifier-free guidance mixing and the
//! AND-composition of conditional scores.
//!
//! All functions act row-wise on batches (one chain per row) and are linear
//! in every score argument, a property the tests pin down directly.

use crate::Matrix;

use super::SamplingError;

fn check_same_shape(shapes: &[&Matrix]) -> Result<(), SamplingError> {
    let dim = shapes[0].dim();
    for m in &shapes[1..] {
        if m.dim() != dim {
            return Err(SamplingError::Config(format!(
                "score shapes disagree: {:?} vs {:?}",
                dim,
                m.dim()
            )));
        }
    }
    Ok(())
}

/// Classifier-free guidance mixture `(1−γ)·s_uncond + γ·s_cond`.
///
/// γ = 1 returns the conditional score unchanged, γ = 0 the unconditional
/// one; γ > 1 extrapolates past the conditional.
pub fn cfg_score(
    s_cond: &Matrix,
    s_uncond: &Matrix,
    gamma: f64,
) -> Result<Matrix, SamplingError> {
    check_same_shape(&[s_cond, s_uncond])?;
    if !gamma.is_finite() {
        return Err(SamplingError::Config(format!("bad guidance weight {gamma}")));
    }
    let mut out = Matrix::zeros(s_cond.dim());
    for ((r, c), v) in out.indexed_iter_mut() {
        *v = (1.0 - gamma) * s_uncond[(r, c)] + gamma * s_cond[(r, c)];
    }
    Ok(out)
}

/// AND-composition of two conditional scores:
/// `γ·s_c1 + s_c2 − γ·s_null`, with γ > 0 controlling how strongly the
/// first condition is enforced relative to the second.
///
/// At γ = 1 this is the factorization identity
/// `s(x|C₁) + s(x|C₂) − s(x)`, exact whenever the two conditions act on
/// the data through independent factors.
pub fn composed_and_score(
    s_c1: &Matrix,
    s_c2: &Matrix,
    s_null: &Matrix,
    gamma: f64,
) -> Result<Matrix, SamplingError> {
    check_same_shape(&[s_c1, s_c2, s_null])?;
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(SamplingError::Config(format!(
            "composition weight must be positive and finite, got {gamma}"
        )));
    }
    let mut out = Matrix::zeros(s_c1.dim());
    for ((r, c), v) in out.indexed_iter_mut() {
        *v = gamma * s_c1[(r, c)] + s_c2[(r, c)] - gamma * s_null[(r, c)];
    }
    Ok(out)
}

/// γ-free AND-composition of any number of conditional scores:
/// `Σᵢ s_cᵢ − (n−1)·s_null`. With one score it degenerates to that score;
/// with two it equals [`composed_and_score`] at γ = 1.
pub fn composed_and_many(
    conditional: &[&Matrix],
    s_null: &Matrix,
    ) -> Result<Matrix, SamplingError> {
    if conditional.is_empty() {
        return Err(SamplingError::Config(
            "composition needs at least one conditional score".into(),
        ));
    }
    let mut all: Vec<&Matrix> = conditional.to_vec();
    all.push(s_null);
    check_same_shape(&all)?;
    let surplus = (conditional.len() - 1) as f64;
    let mut out = Matrix::zeros(s_null.dim());
    for ((r, c), v) in out.indexed_iter_mut() {
        *v = conditional.iter().map(|s| s[(r, c)]).sum::<f64>() - surplus * s_null[(r, c)];
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::Prng;
    use crate::world::{axis_pair_world, oracle_conditional_score, ConditionVector};
    use ndarray::array;

    fn rand_scores(n: usize, seed: u64) -> Vec<Matrix> {
        let mut rng = Prng::seed(seed);
        (0..n).map(|_| rng.normal_matrix(3, 2)).collect()
    }

    #[test]
    fn guidance_endpoints_return_the_inputs_bitwise() {
        let s = rand_scores(2, 1);
        let cond_only = cfg_score(&s[0], &s[1], 1.0).unwrap();
        let uncond_only = cfg_score(&s[0], &s[1], 0.0).unwrap();
        for ((r, c), v) in cond_only.indexed_iter() {
            assert_eq!(v.to_bits(), s[0][(r, c)].to_bits());
        }
        for ((r, c), v) in uncond_only.indexed_iter() {
            assert_eq!(v.to_bits(), s[1][(r, c)].to_bits());
        }
    }

    #[test]
    fn guidance_weight_two_extrapolates() {
        let s_cond = array![[1.0, -2.0]];
        let s_uncond = array![[0.5, 1.0]];
        let out = cfg_score(&s_cond, &s_uncond, 2.0).unwrap();
        // 2·s_cond − s_uncond.
        assert_eq!(out, array![[1.5, -5.0]]);
    }

    #[test]
    fn unit_weight_composition_recovers_the_unseen_gaussian_score() {
        // Under the orthogonal-support world the three *seen* tuples are
        // single Gaussians with a shared covariance, so composing
        // s_{+1,−1} + s_{−1,+1} − s_{−1,−1} must give the score of a
        // Gaussian at μ* = μ_{+1,−1} + μ_{−1,+1} − μ_{−1,−1} = (1, 1).
        let (world, orth, _) = axis_pair_world(0.3);
        let sig2 = 0.3f64 * 0.3;
        let score_of = |tuple: &[usize], x: &[f64]| {
            let cond = ConditionVector::from_tuple(tuple);
            oracle_conditional_score(&world, &orth, &cond, x).unwrap()
        };
        for x in [[0.0, 0.0], [1.3, -0.4], [-0.8, 2.1]] {
            let s1 = Matrix::from_shape_vec((1, 2), score_of(&[1, 0], &x)).unwrap();
            let s2 = Matrix::from_shape_vec((1, 2), score_of(&[0, 1], &x)).unwrap();
            let s3 = Matrix::from_shape_vec((1, 2), score_of(&[0, 0], &x)).unwrap();
            let composed = composed_and_score(&s1, &s2, &s3, 1.0).unwrap();
            for c in 0..2 {
                let want = (1.0 - x[c]) / sig2;
                assert!((composed[(0, c)] - want).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn identical_scores_compose_to_themselves_for_any_weight() {
        let s = rand_scores(1, 2).remove(0);
        for gamma in [0.3, 1.0, 2.5] {
            let out = composed_and_score(&s, &s, &s, gamma).unwrap();
            for ((r, c), v) in out.indexed_iter() {
                assert!((v - s[(r, c)]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn fractional_weight_matches_direct_recomputation() {
        let s = rand_scores(3, 3);
        let gamma = 0.46;
        let out = composed_and_score(&s[0], &s[1], &s[2], gamma).unwrap();
        for ((r, c), v) in out.indexed_iter() {
            let want = gamma * s[0][(r, c)] + s[1][(r, c)] - gamma * s[2][(r, c)];
            assert_eq!(v.to_bits(), want.to_bits());
        }
    }

    #[test]
    fn composition_is_linear_in_each_argument() {
        let s = rand_scores(4, 4);
        let gamma = 0.7;
        let base = composed_and_score(&s[0], &s[1], &s[2], gamma).unwrap();
        let bumped_first =
            composed_and_score(&(&s[0] + &s[3]), &s[1], &s[2], gamma).unwrap();
        let bumped_second =
            composed_and_score(&s[0], &(&s[1] + &s[3]), &s[2], gamma).unwrap();
        let bumped_null =
            composed_and_score(&s[0], &s[1], &(&s[2] + &s[3]), gamma).unwrap();
        for ((r, c), d) in s[3].indexed_iter() {
            assert!((bumped_first[(r, c)] - base[(r, c)] - gamma * d).abs() < 1e-12);
            assert!((bumped_second[(r, c)] - base[(r, c)] - d).abs() < 1e-12);
            assert!((bumped_null[(r, c)] - base[(r, c)] + gamma * d).abs() < 1e-12);
        }
    }

    #[test]
    fn unit_weight_two_condition_forms_agree_bitwise() {
        let s = rand_scores(3, 5);
        let weighted = composed_and_score(&s[0], &s[1], &s[2], 1.0).unwrap();
        let plain = composed_and_many(&[&s[0], &s[1]], &s[2]).unwrap();
        for ((r, c), v) in weighted.indexed_iter() {
            assert_eq!(v.to_bits(), plain[(r, c)].to_bits());
        }
    }

    #[test]
    fn many_condition_composition_counts_the_overlap() {
        let s = rand_scores(4, 6);
        let out = composed_and_many(&[&s[0], &s[1], &s[2]], &s[3]).unwrap();
        for ((r, c), v) in out.indexed_iter() {
            let want = s[0][(r, c)] + s[1][(r, c)] + s[2][(r, c)] - 2.0 * s[3][(r, c)];
            assert!((v - want).abs() < 1e-12);
        }
        let single = composed_and_many(&[&s[0]], &s[3]).unwrap();
        for ((r, c), v) in single.indexed_iter() {
            assert_eq!(v.to_bits(), s[0][(r, c)].to_bits());
        }
    }

    #[test]
    fn malformed_inputs_are_rejected() {
        let a = Matrix::zeros((2, 2));
        let b = Matrix::zeros((3, 2));
        assert!(matches!(
            cfg_score(&a, &b, 1.0),
            Err(SamplingError::Config(_))
        ));
        assert!(composed_and_score(&a, &a, &a, 0.0).is_err());
        assert!(composed_and_score(&a, &a, &a, -1.0).is_err());
        assert!(composed_and_score(&a, &a, &a, f64::NAN).is_err());
        assert!(composed_and_score(&a, &b, &a, 1.0).is_err());
        assert!(composed_and_many(&[], &a).is_err());
        assert!(composed_and_many(&[&a], &b).is_err());
    }
}
