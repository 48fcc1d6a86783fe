//! Deterministic DDIM sampling driven by an ε-prediction model, with
//! optional AND-composition of conditions at every denoising step.
//!
//! The update at schedule times τ_k → τ_{k−1} is the noise-free implicit
//! step:
//!
//! ```text
//! x̂₀ = (x − √(1−ᾱ_{τ_k})·ε̂) / √ᾱ_{τ_k}
//! x  ← √ᾱ_{τ_{k−1}}·x̂₀ + √(1−ᾱ_{τ_{k−1}})·ε̂
//! ```
//!
//! so all randomness lives in the Gaussian initialization; the trajectory
//! is a deterministic function of it. Composed conditions mix the branch
//! predictions in ε space with the same affine weights as the score-space
//! formula — the weights sum to one, and ε and score differ only by the
//! t-dependent scalar −√(1−ᾱ_t), so the two mixtures are identical.

use crate::diffusion::{EpsModel, NoiseSchedule};
use crate::numkit::Prng;
use crate::world::ConditionVector;
use crate::Matrix;

use super::compose::{composed_and_many, composed_and_score};
use super::SamplingError;

/// What to condition each denoising step on.
#[derive(Debug, Clone)]
pub enum SampleCond {
    /// A single condition vector passed straight to the model.
    Plain(ConditionVector),
    /// AND-composition of several conditions: every step evaluates the
    /// model once per part plus once unconditionally and mixes the
    /// predictions. `gamma` weights the first part against the second and
    /// must be 1 unless there are exactly two parts.
    ComposedAnd {
        parts: Vec<ConditionVector>,
        gamma: f64,
    },
}

impl SampleCond {
    fn validate(&self) -> Result<(), SamplingError> {
        match self {
            SampleCond::Plain(_) => Ok(()),
            SampleCond::ComposedAnd { parts, gamma } => {
                if parts.is_empty() {
                    return Err(SamplingError::Config(
                        "composition needs at least one condition".into(),
                    ));
                }
                let arity = parts[0].arity();
                if parts.iter().any(|p| p.arity() != arity) {
                    return Err(SamplingError::Config(
                        "composed conditions must share one attribute space".into(),
                    ));
                }
                if !(*gamma > 0.0) || !gamma.is_finite() {
                    return Err(SamplingError::Config(format!(
                        "composition weight must be positive and finite, got {gamma}"
                    )));
                }
                if parts.len() != 2 && *gamma != 1.0 {
                    return Err(SamplingError::Config(format!(
                        "weighted composition is defined for two conditions, got {} at γ = {gamma}",
                        parts.len()
                    )));
                }
                Ok(())
            }
        }
    }

    /// The (possibly mixed) ε prediction for every row of `x` at time `t`.
    /// For a composition this is the guided combination of the branch
    /// predictions; because its coefficients sum to one, converting the
    /// result to a score equals combining the branch scores.
    pub fn eps_at(
        &self,
        model: &dyn EpsModel,
        x: &Matrix,
        t: usize,
    ) -> Result<Matrix, SamplingError> {
        let n = x.nrows();
        let branch = |cond: &ConditionVector| -> Result<Matrix, SamplingError> {
            let conds = vec![cond.clone(); n];
            Ok(model.predict_eps(x, t, &conds)?)
        };
        match self {
            SampleCond::Plain(cond) => branch(cond),
            SampleCond::ComposedAnd { parts, gamma } => {
                let null = ConditionVector::all_null(parts[0].arity());
                let eps_null = branch(&null)?;
                let eps_parts: Vec<Matrix> =
                    parts.iter().map(branch).collect::<Result<_, _>>()?;
                if eps_parts.len() == 2 {
                    composed_and_score(&eps_parts[0], &eps_parts[1], &eps_null, *gamma)
                } else {
                    let refs: Vec<&Matrix> = eps_parts.iter().collect();
                    composed_and_many(&refs, &eps_null)
                }
            }
        }
    }
}

/// The descending time subsequence for a `num_steps`-step run over a
/// schedule of horizon `t_max`: evenly spaced, starting at `t_max`,
/// ending at or above 1.
pub fn ddim_times(t_max: usize, num_steps: usize) -> Result<Vec<usize>, SamplingError> {
    if num_steps == 0 || num_steps > t_max {
        return Err(SamplingError::Config(format!(
            "need 1 ≤ num_steps ≤ {t_max}, got {num_steps}"
        )));
    }
    let times: Vec<usize> = (1..=num_steps)
        .rev()
        .map(|k| ((k * t_max) as f64 / num_steps as f64).round() as usize)
        .collect();
    for w in times.windows(2) {
        if w[1] >= w[0] {
            return Err(SamplingError::Config(format!(
                "time subsequence is not strictly decreasing: {times:?}"
            )));
        }
    }
    Ok(times)
}

/// Draws `n_samples` chains from N(0, I), then runs the deterministic
/// denoising recursion under `cond`. The result is one sample per row;
/// bitwise reproducible per seed.
pub fn ddim_sample(
    model: &dyn EpsModel,
    cond: &SampleCond,
    schedule: &NoiseSchedule,
    num_steps: usize,
    n_samples: usize,
    rng: &mut Prng,
) -> Result<Matrix, SamplingError> {
    run_chain(model, cond, schedule, num_steps, n_samples, None, rng)
}

/// Like [`ddim_sample`], but clamps every coordinate of the intermediate
/// clean-point estimate x̂₀ into `[−clip, clip]` before re-noising. Early
/// in the chain the division by √ᾱ amplifies prediction error by orders
/// of magnitude; bounding x̂₀ to the box the data actually occupies is
/// the usual stabilization and leaves already-calibrated trajectories
/// untouched.
pub fn ddim_sample_clipped(
    model: &dyn EpsModel,
    cond: &SampleCond,
    schedule: &NoiseSchedule,
    num_steps: usize,
    n_samples: usize,
    clip: f64,
    rng: &mut Prng,
) -> Result<Matrix, SamplingError> {
    if !(clip > 0.0) || !clip.is_finite() {
        return Err(SamplingError::Config(format!(
            "clean-point clip must be positive and finite, got {clip}"
        )));
    }
    run_chain(model, cond, schedule, num_steps, n_samples, Some(clip), rng)
}

fn run_chain(
    model: &dyn EpsModel,
    cond: &SampleCond,
    schedule: &NoiseSchedule,
    num_steps: usize,
    n_samples: usize,
    clip: Option<f64>,
    rng: &mut Prng,
) -> Result<Matrix, SamplingError> {
    cond.validate()?;
    if n_samples == 0 {
        return Err(SamplingError::Config("need at least one sample".into()));
    }
    let times = ddim_times(schedule.t_max(), num_steps)?;
    let dim = model.data_dim();
    let mut x = rng.normal_matrix(n_samples, dim);
    for (idx, &t_cur) in times.iter().enumerate() {
        let t_next = times.get(idx + 1).copied().unwrap_or(0);
        let a_cur = schedule.alpha_bar(t_cur)?;
        let a_next = schedule.alpha_bar(t_next)?;
        let eps = cond.eps_at(model, &x, t_cur)?;
        let (sc, sn) = (a_cur.sqrt(), a_next.sqrt());
        let (rc, rn) = ((1.0 - a_cur).sqrt(), (1.0 - a_next).sqrt());
        for ((r, c), v) in x.indexed_iter_mut() {
            let mut x0_hat = (*v - rc * eps[(r, c)]) / sc;
            if let Some(b) = clip {
                x0_hat = x0_hat.clamp(-b, b);
            }
            *v = sn * x0_hat + rn * eps[(r, c)];
        }
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::{
        cosine_alpha_bar, ConditionEncoding, DiffusionError, OracleEpsModel, ScoreNet,
    };
    use crate::training::{train, CiWeighting, TrainConfig};
    use crate::world::{axis_pair_world, sample_dataset, Provenance};

    const T: usize = 50;

    struct ConstEps(Vec<f64>);

    impl EpsModel for ConstEps {
        fn data_dim(&self) -> usize {
            self.0.len()
        }
        fn predict_eps(
            &self,
            x_t: &Matrix,
            _t: usize,
            _conds: &[ConditionVector],
        ) -> Result<Matrix, DiffusionError> {
            let mut out = Matrix::zeros(x_t.dim());
            for ((_, c), v) in out.indexed_iter_mut() {
                *v = self.0[c];
            }
            Ok(out)
        }
    }

    fn orthogonal_oracle(sigma: f64) -> OracleEpsModel {
        let (world, orth, _) = axis_pair_world(sigma);
        OracleEpsModel::new(world, orth, cosine_alpha_bar(T).unwrap())
    }

    fn full_support_oracle(sigma: f64) -> OracleEpsModel {
        let (world, _, full) = axis_pair_world(sigma);
        OracleEpsModel::new(world, full, cosine_alpha_bar(T).unwrap())
    }

    #[test]
    fn time_subsequences_are_even_and_decreasing() {
        assert_eq!(ddim_times(50, 5).unwrap(), vec![50, 40, 30, 20, 10]);
        assert_eq!(ddim_times(50, 3).unwrap(), vec![50, 33, 17]);
        let full = ddim_times(50, 50).unwrap();
        assert_eq!(full.len(), 50);
        assert_eq!(full[0], 50);
        assert_eq!(full[49], 1);
        assert!(ddim_times(50, 0).is_err());
        assert!(ddim_times(50, 51).is_err());
    }

    #[test]
    fn zero_model_rescales_the_prior_by_the_terminal_noise_level() {
        // With ε̂ ≡ 0 every step multiplies by √(ᾱ_next/ᾱ_cur); the chain
        // telescopes to x_init/√ᾱ_T regardless of the subsequence.
        let sched = cosine_alpha_bar(T).unwrap();
        let model = ConstEps(vec![0.0, 0.0]);
        let cond = SampleCond::Plain(ConditionVector::all_null(2));
        for steps in [1, 7, 50] {
            let mut rng = Prng::seed(42);
            let x_init = Prng::seed(42).normal_matrix(6, 2);
            let out = ddim_sample(&model, &cond, &sched, steps, 6, &mut rng).unwrap();
            let scale = 1.0 / sched.alpha_bar(T).unwrap().sqrt();
            for ((r, c), v) in out.indexed_iter() {
                assert!(
                    (v - x_init[(r, c)] * scale).abs() < 1e-9 * scale,
                    "steps {steps}: {} vs {}",
                    v,
                    x_init[(r, c)] * scale
                );
            }
        }
    }

    #[test]
    fn one_step_run_is_the_single_denoising_formula() {
        let sched = cosine_alpha_bar(T).unwrap();
        let model = ConstEps(vec![0.3, -0.7]);
        let cond = SampleCond::Plain(ConditionVector::all_null(2));
        let mut rng = Prng::seed(11);
        let out = ddim_sample(&model, &cond, &sched, 1, 4, &mut rng).unwrap();
        let x_init = Prng::seed(11).normal_matrix(4, 2);
        let a = sched.alpha_bar(T).unwrap();
        for ((r, c), v) in out.indexed_iter() {
            let want = (x_init[(r, c)] - (1.0 - a).sqrt() * model.0[c]) / a.sqrt();
            assert!((v - want).abs() < 1e-12);
        }
    }

    #[test]
    fn oracle_conditional_sampling_lands_on_the_requested_component() {
        let model = orthogonal_oracle(0.3);
        let cond = SampleCond::Plain(ConditionVector::from_tuple(&[0, 0]));
        let sched = cosine_alpha_bar(T).unwrap();
        let out = ddim_sample(&model, &cond, &sched, 25, 500, &mut Prng::seed(3)).unwrap();
        let mut nearest_ok = 0;
        let means = [[-1.0, -1.0], [-1.0, 1.0], [1.0, -1.0], [1.0, 1.0]];
        for r in 0..out.nrows() {
            let d = |m: &[f64; 2]| {
                (out[(r, 0)] - m[0]).powi(2) + (out[(r, 1)] - m[1]).powi(2)
            };
            if (0..4).all(|k| k == 0 || d(&means[0]) < d(&means[k])) {
                nearest_ok += 1;
            }
        }
        assert!(nearest_ok >= 490, "only {nearest_ok}/500 near (−1,−1)");
    }

    #[test]
    fn composing_single_attribute_conditions_generates_the_unseen_tuple() {
        // Full-support world: marginal conditionals factorize exactly, so
        // composing “first attribute = +1” with “second attribute = +1”
        // must sample the (+1, +1) Gaussian — even though no branch ever
        // sees the joint condition.
        let model = full_support_oracle(0.3);
        let cond = SampleCond::ComposedAnd {
            parts: vec![
                ConditionVector::single(2, 0, 1),
                ConditionVector::single(2, 1, 1),
            ],
            gamma: 1.0,
        };
        let sched = cosine_alpha_bar(T).unwrap();
        let n = 1000;
        let out = ddim_sample(&model, &cond, &sched, 25, n, &mut Prng::seed(5)).unwrap();
        for c in 0..2 {
            let mean = (0..n).map(|r| out[(r, c)]).sum::<f64>() / n as f64;
            assert!((mean - 1.0).abs() < 0.05, "cloud mean[{c}] = {mean}");
        }
    }

    #[test]
    fn trained_network_sampling_recovers_a_seen_component() {
        let (world, orth, _) = axis_pair_world(0.3);
        let mut rng = Prng::seed(17);
        let ds = sample_dataset(&world, &orth, 3000, Provenance::RealTrain, &mut rng).unwrap();
        let sched = cosine_alpha_bar(T).unwrap();
        let enc = ConditionEncoding::for_space(&orth);
        let mut net = ScoreNet::new(2, &[32, 32], enc, T, &mut Prng::seed(18)).unwrap();
        let cfg = TrainConfig {
            steps: 1500,
            batch_size: 64,
            lr: 3e-3,
            lambda: 0.0,
            p_uncond: 0.3,
            ci_weighting: CiWeighting::Unweighted,
            log_every: 500,
        };
        train(&mut net, &ds, &sched, &cfg, 19, None, None).unwrap();
        let cond = SampleCond::Plain(ConditionVector::from_tuple(&[0, 0]));
        let out = ddim_sample(&net, &cond, &sched, T, 1000, &mut Prng::seed(20)).unwrap();
        let means = [[-1.0, -1.0], [-1.0, 1.0], [1.0, -1.0], [1.0, 1.0]];
        let mut nearest_ok = 0;
        for r in 0..out.nrows() {
            let d = |m: &[f64; 2]| {
                (out[(r, 0)] - m[0]).powi(2) + (out[(r, 1)] - m[1]).powi(2)
            };
            if (1..4).all(|k| d(&means[0]) < d(&means[k])) {
                nearest_ok += 1;
            }
        }
        assert!(
            nearest_ok >= 950,
            "only {nearest_ok}/1000 samples nearest the conditioned mean"
        );
    }

    #[test]
    fn generous_clip_reproduces_the_unclipped_chain_exactly() {
        let model = orthogonal_oracle(0.3);
        let cond = SampleCond::Plain(ConditionVector::from_tuple(&[1, 0]));
        let sched = cosine_alpha_bar(T).unwrap();
        let plain =
            ddim_sample(&model, &cond, &sched, 25, 100, &mut Prng::seed(7)).unwrap();
        let clipped =
            ddim_sample_clipped(&model, &cond, &sched, 25, 100, 1e6, &mut Prng::seed(7))
                .unwrap();
        assert_eq!(plain, clipped);
    }

    #[test]
    fn one_step_clip_clamps_the_clean_point_estimate() {
        // A large constant ε̂ makes the single-step x̂₀ explode through the
        // 1/√ᾱ_T division; with the bound active the output is exactly the
        // clamped estimate (ᾱ_0 = 1 so no re-noising term survives).
        let sched = cosine_alpha_bar(T).unwrap();
        let model = ConstEps(vec![5.0, -5.0]);
        let cond = SampleCond::Plain(ConditionVector::all_null(2));
        let out =
            ddim_sample_clipped(&model, &cond, &sched, 1, 50, 2.0, &mut Prng::seed(9))
                .unwrap();
        let x_init = Prng::seed(9).normal_matrix(50, 2);
        let a = sched.alpha_bar(T).unwrap();
        for ((r, c), v) in out.indexed_iter() {
            let raw = (x_init[(r, c)] - (1.0 - a).sqrt() * model.0[c]) / a.sqrt();
            assert!((v - raw.clamp(-2.0, 2.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn degenerate_clip_bounds_are_rejected() {
        let model = ConstEps(vec![0.0, 0.0]);
        let sched = cosine_alpha_bar(T).unwrap();
        let cond = SampleCond::Plain(ConditionVector::all_null(2));
        for bad in [0.0, -1.0, f64::NAN, f64::INFINITY] {
            assert!(ddim_sample_clipped(
                &model,
                &cond,
                &sched,
                5,
                5,
                bad,
                &mut Prng::seed(1)
            )
            .is_err());
        }
    }

    #[test]
    fn clouds_are_deterministic_per_seed_and_mix_across_seeds() {
        let model = orthogonal_oracle(0.3);
        let cond = SampleCond::Plain(ConditionVector::from_tuple(&[0, 1]));
        let sched = cosine_alpha_bar(T).unwrap();
        let draw = |seed| {
            ddim_sample(&model, &cond, &sched, 25, 200, &mut Prng::seed(seed)).unwrap()
        };
        let (a, a_again, b) = (draw(31), draw(31), draw(32));
        assert_eq!(a, a_again);
        assert_ne!(a, b);

        // Permutation test on the energy distance between the two clouds:
        // same law, so the observed statistic should not be extreme.
        let observed = crate::sampling::energy_distance(&a, &b);
        let pooled = ndarray::concatenate(ndarray::Axis(0), &[a.view(), b.view()]).unwrap();
        let mut perm_rng = Prng::seed(33);
        let n_perm = 199;
        let mut at_least = 1;
        let total = pooled.nrows();
        let mut order: Vec<usize> = (0..total).collect();
        for _ in 0..n_perm {
            for i in (1..total).rev() {
                order.swap(i, perm_rng.below(i + 1));
            }
            let take = |rows: &[usize]| {
                let mut m = Matrix::zeros((rows.len(), 2));
                for (out_r, &src) in rows.iter().enumerate() {
                    m[(out_r, 0)] = pooled[(src, 0)];
                    m[(out_r, 1)] = pooled[(src, 1)];
                }
                m
            };
            let perm_stat =
                crate::sampling::energy_distance(&take(&order[..200]), &take(&order[200..]));
            if perm_stat >= observed {
                at_least += 1;
            }
        }
        let p = at_least as f64 / (n_perm + 1) as f64;
        assert!(p > 0.01, "energy-distance self-test significant: p = {p}");
    }

    #[test]
    fn invalid_requests_are_rejected() {
        let model = ConstEps(vec![0.0, 0.0]);
        let sched = cosine_alpha_bar(T).unwrap();
        let plain = SampleCond::Plain(ConditionVector::all_null(2));
        let mut rng = Prng::seed(1);
        assert!(ddim_sample(&model, &plain, &sched, 0, 5, &mut rng).is_err());
        assert!(ddim_sample(&model, &plain, &sched, T + 1, 5, &mut rng).is_err());
        assert!(ddim_sample(&model, &plain, &sched, 5, 0, &mut rng).is_err());
        let bad_gamma = SampleCond::ComposedAnd {
            parts: vec![ConditionVector::all_null(2), ConditionVector::all_null(2)],
            gamma: 0.0,
        };
        assert!(ddim_sample(&model, &bad_gamma, &sched, 5, 5, &mut rng).is_err());
        let empty = SampleCond::ComposedAnd {
            parts: vec![],
            gamma: 1.0,
        };
        assert!(ddim_sample(&model, &empty, &sched, 5, 5, &mut rng).is_err());
        let three_weighted = SampleCond::ComposedAnd {
            parts: vec![
                ConditionVector::all_null(2),
                ConditionVector::all_null(2),
                ConditionVector::all_null(2),
            ],
            gamma: 0.5,
        };
        assert!(ddim_sample(&model, &three_weighted, &sched, 5, 5, &mut rng).is_err());
        let mismatched = SampleCond::ComposedAnd {
            parts: vec![ConditionVector::all_null(2), ConditionVector::all_null(3)],
            gamma: 1.0,
        };
        assert!(ddim_sample(&model, &mismatched, &sched, 5, 5, &mut rng).is_err());
    }
}
