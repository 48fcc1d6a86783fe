//! The two loss terms and their gradients, over frozen per-step randomness.

use crate::diffusion::{add_noise_rows, NoiseSchedule, ScoreNet};
use crate::numkit::{ParamGrads, Prng};
use crate::world::ConditionVector;
use crate::Matrix;

use super::TrainError;

/// Time weighting of the independence penalty.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CiWeighting {
    /// Residual measured in ε units at every t — the normative form.
    #[default]
    Unweighted,
    /// Per-sample factor `1/(1-ᾱ_t)`, i.e. the residual measured in score
    /// units instead. Emphasizes low-noise steps.
    InvOneMinusAlphaBar,
}

/// Frozen randomness for the independence term: per-sample time steps,
/// noise, and attribute pairs.
#[derive(Debug, Clone)]
pub struct CiDraws {
    pub t: Vec<usize>,
    pub eps: Matrix,
    /// Distinct attribute indices `(i, j)` per sample.
    pub pairs: Vec<(usize, usize)>,
}

/// All randomness of one training step, materialized up front. Loss values
/// and gradients are deterministic functions of `(model, batch, draws)`.
#[derive(Debug, Clone)]
pub struct StepDraws {
    /// Per-sample time step for the score term.
    pub score_t: Vec<usize>,
    /// Per-sample noise for the score term.
    pub score_eps: Matrix,
    /// Conditions for the score term: the batch labels after random masking.
    pub masked_conds: Vec<ConditionVector>,
    /// Randomness for the independence term; `None` when it is switched off
    /// (λ = 0), in which case its stream is never consumed.
    pub ci: Option<CiDraws>,
}

impl StepDraws {
    /// Draws one step's randomness from three dedicated streams. Order per
    /// stream is fixed (documented by the loop structure below); keeping the
    /// streams separate means enabling or disabling the independence term
    /// cannot shift the score term's draws.
    pub fn draw(
        labels: &[Vec<usize>],
        dim: usize,
        t_max: usize,
        p_uncond: f64,
        with_ci: bool,
        score_rng: &mut Prng,
        mask_rng: &mut Prng,
        ci_rng: &mut Prng,
    ) -> Result<StepDraws, TrainError> {
        if labels.is_empty() {
            return Err(TrainError::Config("empty batch".into()));
        }
        let n_attrs = labels[0].len();
        let batch = labels.len();
        let score_t: Vec<usize> = (0..batch).map(|_| score_rng.int_in(1, t_max)).collect();
        let score_eps = score_rng.normal_matrix(batch, dim);
        let masked_conds: Vec<ConditionVector> = labels
            .iter()
            .map(|l| {
                crate::diffusion::mask_condition(
                    &ConditionVector::from_tuple(l),
                    p_uncond,
                    mask_rng,
                )
            })
            .collect();
        let ci = if with_ci {
            if n_attrs < 2 {
                return Err(TrainError::Config(
                    "independence term needs at least two attributes".into(),
                ));
            }
            let t: Vec<usize> = (0..batch).map(|_| ci_rng.int_in(1, t_max)).collect();
            let eps = ci_rng.normal_matrix(batch, dim);
            let pairs: Vec<(usize, usize)> = (0..batch)
                .map(|_| {
                    let i = ci_rng.below(n_attrs);
                    let mut j = ci_rng.below(n_attrs - 1);
                    if j >= i {
                        j += 1;
                    }
                    (i, j)
                })
                .collect();
            Some(CiDraws { t, eps, pairs })
        } else {
            None
        };
        Ok(StepDraws {
            score_t,
            score_eps,
            masked_conds,
            ci,
        })
    }
}

/// Mean over rows of the squared prediction error `‖ε̂ - ε‖²`. With a
/// standard-normal target and a zero prediction this averages to the data
/// dimension.
pub fn eps_mse(pred: &Matrix, target: &Matrix) -> f64 {
    assert_eq!(pred.raw_dim(), target.raw_dim());
    let b = pred.nrows() as f64;
    pred.iter()
        .zip(target.iter())
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / b
}

/// Mean over rows of the squared factorization residual
/// `‖p_i + p_j - p_joint - p_null‖²`, with optional per-row weights.
pub fn ci_residual_mean_sq(
    p_i: &Matrix,
    p_j: &Matrix,
    p_joint: &Matrix,
    p_null: &Matrix,
    row_weights: Option<&[f64]>,
) -> f64 {
    let b = p_i.nrows();
    assert!(
        p_j.nrows() == b && p_joint.nrows() == b && p_null.nrows() == b,
        "branch batch sizes must agree"
    );
    let mut total = 0.0;
    for row in 0..b {
        let w = row_weights.map_or(1.0, |ws| ws[row]);
        let mut sq = 0.0;
        for col in 0..p_i.ncols() {
            let r = p_i[(row, col)] + p_j[(row, col)] - p_joint[(row, col)] - p_null[(row, col)];
            sq += r * r;
        }
        total += w * sq;
    }
    total / b as f64
}

/// Summary of one step's objective. `total = l_score + lambda·l_ci`; `pair`
/// is the first sample's attribute pair when the independence term ran.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoIndLossBreakdown {
    pub l_score: f64,
    pub l_ci: f64,
    pub lambda: f64,
    pub total: f64,
    pub pair: Option<(usize, usize)>,
}

/// Denoising score-matching term with gradients: noise each row at its own
/// `t`, predict ε under the masked condition, take mean squared residual.
pub fn score_loss_with_grads(
    net: &ScoreNet,
    x0: &Matrix,
    draws: &StepDraws,
    schedule: &NoiseSchedule,
) -> Result<(f64, ParamGrads), TrainError> {
    let x_t = add_noise_rows(x0, &draws.score_t, &draws.score_eps, schedule)?;
    let (pred, trace) = net.predict_eps_rows_traced(&x_t, &draws.score_t, &draws.masked_conds)?;
    let b = x0.nrows() as f64;
    let loss = eps_mse(&pred, &draws.score_eps);
    // d loss / d pred = 2 (pred - ε) / B
    let loss_grad = (&pred - &draws.score_eps).mapv(|r| 2.0 * r / b);
    let grads = net.net().backward(&trace, &loss_grad)?;
    Ok((loss, grads))
}

/// Builds the three non-null branch conditions for one sample: `c^i` keeps
/// only slot `i` of the label, `c^j` only slot `j`, `c^{i,j}` both.
pub(crate) fn branch_conditions(
    label: &[usize],
    (i, j): (usize, usize),
) -> (ConditionVector, ConditionVector, ConditionVector) {
    let n = label.len();
    let c_i = ConditionVector::single(n, i, label[i]);
    let c_j = ConditionVector::single(n, j, label[j]);
    let c_joint = c_i.with_slot(j, Some(label[j]));
    (c_i, c_j, c_joint)
}

/// Independence term with gradients. Every branch shares the same noised
/// input and time step per sample; conditions come from the sample's
/// unmasked label; gradients flow through all four branches.
pub fn ci_loss_with_grads(
    net: &ScoreNet,
    x0: &Matrix,
    labels: &[Vec<usize>],
    ci: &CiDraws,
    weighting: CiWeighting,
    schedule: &NoiseSchedule,
) -> Result<(f64, ParamGrads, (usize, usize)), TrainError> {
    let batch = x0.nrows();
    let x_t = add_noise_rows(x0, &ci.t, &ci.eps, schedule)?;
    let mut conds_i = Vec::with_capacity(batch);
    let mut conds_j = Vec::with_capacity(batch);
    let mut conds_joint = Vec::with_capacity(batch);
    for (label, &pair) in labels.iter().zip(&ci.pairs) {
        let (c_i, c_j, c_joint) = branch_conditions(label, pair);
        conds_i.push(c_i);
        conds_j.push(c_j);
        conds_joint.push(c_joint);
    }
    let n_attrs = labels[0].len();
    let conds_null = vec![ConditionVector::all_null(n_attrs); batch];

    let (p_i, trace_i) = net.predict_eps_rows_traced(&x_t, &ci.t, &conds_i)?;
    let (p_j, trace_j) = net.predict_eps_rows_traced(&x_t, &ci.t, &conds_j)?;
    let (p_joint, trace_joint) = net.predict_eps_rows_traced(&x_t, &ci.t, &conds_joint)?;
    let (p_null, trace_null) = net.predict_eps_rows_traced(&x_t, &ci.t, &conds_null)?;

    let weights: Option<Vec<f64>> = match weighting {
        CiWeighting::Unweighted => None,
        CiWeighting::InvOneMinusAlphaBar => Some(
            ci.t
                .iter()
                .map(|&t| Ok(1.0 / (1.0 - schedule.alpha_bar(t)?)))
                .collect::<Result<_, TrainError>>()?,
        ),
    };
    let loss = ci_residual_mean_sq(&p_i, &p_j, &p_joint, &p_null, weights.as_deref());

    // d loss / d p_i = 2w·r/B, same for p_j; p_joint and p_null get -2w·r/B.
    let b = batch as f64;
    let mut resid_grad = &(&p_i + &p_j) - &(&p_joint + &p_null);
    for (row, mut r) in resid_grad.rows_mut().into_iter().enumerate() {
        let w = weights.as_ref().map_or(1.0, |ws| ws[row]);
        r.mapv_inplace(|v| 2.0 * w * v / b);
    }
    let mut grads = net.net().backward(&trace_i, &resid_grad)?;
    grads.add_scaled(&net.net().backward(&trace_j, &resid_grad)?, 1.0);
    grads.add_scaled(&net.net().backward(&trace_joint, &resid_grad)?, -1.0);
    grads.add_scaled(&net.net().backward(&trace_null, &resid_grad)?, -1.0);
    Ok((loss, grads, ci.pairs[0]))
}

/// The full objective for one step: score term on masked conditions plus
/// `lambda` times the independence term on unmasked labels, with combined
/// parameter gradients. `lambda = 0` runs the score term alone.
pub fn coind_losses(
    net: &ScoreNet,
    x0: &Matrix,
    labels: &[Vec<usize>],
    draws: &StepDraws,
    lambda: f64,
    weighting: CiWeighting,
    schedule: &NoiseSchedule,
) -> Result<(CoIndLossBreakdown, ParamGrads), TrainError> {
    if lambda < 0.0 || !lambda.is_finite() {
        return Err(TrainError::Config(format!(
            "lambda must be finite and non-negative, got {lambda}"
        )));
    }
    let (l_score, mut grads) = score_loss_with_grads(net, x0, draws, schedule)?;
    let (l_ci, pair) = match (&draws.ci, lambda > 0.0) {
        (Some(ci), true) => {
            let (l_ci, ci_grads, pair) = ci_loss_with_grads(net, x0, labels, ci, weighting, schedule)?;
            grads.add_scaled(&ci_grads, lambda);
            (l_ci, Some(pair))
        }
        _ => (0.0, None),
    };
    Ok((
        CoIndLossBreakdown {
            l_score,
            l_ci,
            lambda,
            total: l_score + lambda * l_ci,
            pair,
        },
        grads,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::{cosine_alpha_bar, eps_to_score, ConditionEncoding, EpsModel, OracleEpsModel};
    use crate::world::{axis_pair_world, AttributeSpace};

    fn encoding() -> ConditionEncoding {
        ConditionEncoding::for_space(&AttributeSpace::binary_pair_orthogonal())
    }

    fn make_net(seed: u64, hidden: &[usize], t_max: usize) -> ScoreNet {
        let mut rng = Prng::seed(seed);
        let mut net = ScoreNet::new(2, hidden, encoding(), t_max, &mut rng).unwrap();
        // Random output layer so predictions are nontrivial.
        let out_in = net.net().sizes()[net.net().sizes().len() - 2];
        let w = rng.normal_matrix(out_in, 2).mapv(|v| 0.3 * v);
        net.net_mut()
            .layer_weight_mut(hidden.len())
            .assign(&w);
        net
    }

    fn make_draws(
        labels: &[Vec<usize>],
        t_max: usize,
        p_uncond: f64,
        with_ci: bool,
        seed: u64,
    ) -> StepDraws {
        let root = Prng::seed(seed);
        let mut score_rng = root.derive(2);
        let mut mask_rng = root.derive(3);
        let mut ci_rng = root.derive(4);
        StepDraws::draw(
            labels,
            2,
            t_max,
            p_uncond,
            with_ci,
            &mut score_rng,
            &mut mask_rng,
            &mut ci_rng,
        )
        .unwrap()
    }

    #[test]
    fn eps_mse_is_zero_on_exact_prediction() {
        let mut rng = Prng::seed(1);
        let eps = rng.normal_matrix(7, 2);
        assert_eq!(eps_mse(&eps, &eps), 0.0);
    }

    #[test]
    fn eps_mse_of_zero_prediction_approaches_data_dimension() {
        let mut rng = Prng::seed(2);
        let eps = rng.normal_matrix(20_000, 2);
        let zero = Matrix::zeros((20_000, 2));
        let loss = eps_mse(&zero, &eps);
        assert!((loss - 2.0).abs() < 0.05, "E‖ε‖² should be ≈ d, got {loss}");
    }

    #[test]
    fn score_loss_matches_straight_line_recomputation() {
        let t_max = 50;
        let net = make_net(3, &[8], t_max);
        let sched = cosine_alpha_bar(t_max).unwrap();
        let mut rng = Prng::seed(4);
        let x0 = rng.normal_matrix(3, 2);
        let labels = vec![vec![0, 0], vec![1, 0], vec![0, 1]];
        let draws = make_draws(&labels, t_max, 0.3, false, 5);
        let (loss, _) = score_loss_with_grads(&net, &x0, &draws, &sched).unwrap();
        // Replay one row at a time through the scalar-t interface.
        let mut want = 0.0;
        for row in 0..3 {
            let t = draws.score_t[row];
            let ab = sched.alpha_bar(t).unwrap();
            let mut x_t = Matrix::zeros((1, 2));
            for col in 0..2 {
                x_t[(0, col)] =
                    ab.sqrt() * x0[(row, col)] + (1.0 - ab).sqrt() * draws.score_eps[(row, col)];
            }
            let pred = net
                .predict_eps(&x_t, t, &[draws.masked_conds[row].clone()])
                .unwrap();
            for col in 0..2 {
                let r = pred[(0, col)] - draws.score_eps[(row, col)];
                want += r * r;
            }
        }
        want /= 3.0;
        assert!((loss - want).abs() < 1e-12, "{loss} vs {want}");
    }

    #[test]
    fn linear_model_factorizes_and_gets_zero_ci_loss() {
        // A single affine layer is additive in the condition blocks, so the
        // four-branch residual cancels exactly: block contributions of c^i
        // and c^j appear once on each side, and the x/time/bias terms enter
        // +2 and -2 times.
        let t_max = 40;
        let mut rng = Prng::seed(6);
        let mut net = ScoreNet::new(2, &[], encoding(), t_max, &mut rng).unwrap();
        let w = rng.normal_matrix(net.net().input_dim(), 2);
        net.net_mut().layer_weight_mut(0).assign(&w);
        let b = rng.normal_matrix(1, 2);
        net.net_mut().layer_bias_mut(0).assign(&b);
        let sched = cosine_alpha_bar(t_max).unwrap();
        let x0 = rng.normal_matrix(8, 2);
        let labels: Vec<Vec<usize>> = (0..8).map(|k| vec![k % 2, (k / 2) % 2]).collect();
        let draws = make_draws(&labels, t_max, 0.3, true, 7);
        let (l_ci, grads, _) = ci_loss_with_grads(
            &net,
            &x0,
            &labels,
            draws.ci.as_ref().unwrap(),
            CiWeighting::Unweighted,
            &sched,
        )
        .unwrap();
        assert!(l_ci < 1e-25, "factorized model should have zero loss, got {l_ci}");
        assert!(grads.flat().iter().all(|g| g.abs() < 1e-12));
    }

    #[test]
    fn joint_branch_offset_costs_its_squared_norm() {
        let mut rng = Prng::seed(8);
        let base = rng.normal_matrix(5, 2);
        let p_i = rng.normal_matrix(5, 2);
        let p_j = rng.normal_matrix(5, 2);
        // Construct an exactly-factorized set: p_joint = p_i + p_j - p_null.
        let p_null = base.clone();
        let p_joint = &(&p_i + &p_j) - &p_null;
        assert!(ci_residual_mean_sq(&p_i, &p_j, &p_joint, &p_null, None) < 1e-28);
        // Shift only the joint branch by v: residual becomes -v on each row.
        let v = [0.4, -1.1];
        let mut shifted = p_joint.clone();
        for mut row in shifted.rows_mut() {
            row[0] += v[0];
            row[1] += v[1];
        }
        let loss = ci_residual_mean_sq(&p_i, &p_j, &shifted, &p_null, None);
        let want = v[0] * v[0] + v[1] * v[1];
        assert!((loss - want).abs() < 1e-12, "{loss} vs {want}");
    }

    #[test]
    fn mutual_and_pairwise_forms_agree_for_two_attributes() {
        // Mutual form: ‖(joint-null) - (i-null) - (j-null)‖², computed
        // element by element here; pairwise form is the library function.
        let mut rng = Prng::seed(9);
        let (p_i, p_j) = (rng.normal_matrix(6, 2), rng.normal_matrix(6, 2));
        let (p_joint, p_null) = (rng.normal_matrix(6, 2), rng.normal_matrix(6, 2));
        let mut mutual = 0.0;
        for row in 0..6 {
            for col in 0..2 {
                let joint_excess = p_joint[(row, col)] - p_null[(row, col)];
                let i_excess = p_i[(row, col)] - p_null[(row, col)];
                let j_excess = p_j[(row, col)] - p_null[(row, col)];
                let r = joint_excess - i_excess - j_excess;
                mutual += r * r;
            }
        }
        mutual /= 6.0;
        let pairwise = ci_residual_mean_sq(&p_i, &p_j, &p_joint, &p_null, None);
        assert!((mutual - pairwise).abs() < 1e-12);
    }

    #[test]
    fn oracle_scores_have_zero_residual_under_full_support_only() {
        let (world, orth, full) = axis_pair_world(0.3);
        let sched = cosine_alpha_bar(100).unwrap();
        let full_oracle = OracleEpsModel::new(world.clone(), full, sched.clone());
        let orth_oracle = OracleEpsModel::new(world, orth, sched.clone());
        // Fixed grid of noised points; conditions for the tuple (-1,+1),
        // which both supports contain.
        let grid: Vec<[f64; 2]> = (-2..=2)
            .flat_map(|a| (-2..=2).map(move |b| [a as f64 * 0.7, b as f64 * 0.7]))
            .collect();
        let rows = grid.len();
        let mut x_t = Matrix::zeros((rows, 2));
        for (r, p) in grid.iter().enumerate() {
            x_t[(r, 0)] = p[0];
            x_t[(r, 1)] = p[1];
        }
        let label = vec![0usize, 1];
        let conds_i = vec![ConditionVector::single(2, 0, label[0]); rows];
        let conds_j = vec![ConditionVector::single(2, 1, label[1]); rows];
        let conds_joint = vec![ConditionVector::from_tuple(&label); rows];
        let conds_null = vec![ConditionVector::all_null(2); rows];
        for t in [5, 40, 90] {
            let eval = |oracle: &OracleEpsModel| {
                let p_i = oracle.predict_eps(&x_t, t, &conds_i).unwrap();
                let p_j = oracle.predict_eps(&x_t, t, &conds_j).unwrap();
                let p_joint = oracle.predict_eps(&x_t, t, &conds_joint).unwrap();
                let p_null = oracle.predict_eps(&x_t, t, &conds_null).unwrap();
                ci_residual_mean_sq(&p_i, &p_j, &p_joint, &p_null, None)
            };
            let full_loss = eval(&full_oracle);
            let orth_loss = eval(&orth_oracle);
            assert!(full_loss < 1e-12, "t={t}: full-support residual {full_loss}");
            assert!(orth_loss > 1e-3, "t={t}: partial-support residual {orth_loss}");
        }
    }

    #[test]
    fn composite_gradients_match_finite_differences() {
        let t_max = 30;
        let sched = cosine_alpha_bar(t_max).unwrap();
        let mut net = make_net(10, &[6], t_max);
        let mut rng = Prng::seed(11);
        let x0 = rng.normal_matrix(4, 2);
        let labels = vec![vec![0, 0], vec![0, 1], vec![1, 0], vec![0, 0]];
        let lambda = 0.7;
        for weighting in [CiWeighting::Unweighted, CiWeighting::InvOneMinusAlphaBar] {
            let draws = make_draws(&labels, t_max, 0.3, true, 12);
            let (_, analytic) =
                coind_losses(&net, &x0, &labels, &draws, lambda, weighting, &sched).unwrap();
            let analytic = analytic.flat();
            let mut params = net.net().flat_params();
            let h = 1e-6;
            let mut worst: f64 = 0.0;
            for k in (0..params.len()).step_by(7) {
                let orig = params[k];
                params[k] = orig + h;
                net.net_mut().set_flat_params(&params).unwrap();
                let (up, _) =
                    coind_losses(&net, &x0, &labels, &draws, lambda, weighting, &sched).unwrap();
                params[k] = orig - h;
                net.net_mut().set_flat_params(&params).unwrap();
                let (dn, _) =
                    coind_losses(&net, &x0, &labels, &draws, lambda, weighting, &sched).unwrap();
                params[k] = orig;
                net.net_mut().set_flat_params(&params).unwrap();
                let fd = (up.total - dn.total) / (2.0 * h);
                let denom = analytic[k].abs().max(fd.abs()).max(1e-6);
                worst = worst.max((analytic[k] - fd).abs() / denom);
            }
            assert!(worst < 1e-4, "{weighting:?}: worst relative error {worst}");
        }
    }

    #[test]
    fn swapping_pair_roles_leaves_the_loss_unchanged() {
        let t_max = 25;
        let sched = cosine_alpha_bar(t_max).unwrap();
        let net = make_net(13, &[8], t_max);
        let mut rng = Prng::seed(14);
        let x0 = rng.normal_matrix(6, 2);
        let labels: Vec<Vec<usize>> = (0..6).map(|k| vec![k % 2, (k / 3) % 2]).collect();
        let draws = make_draws(&labels, t_max, 0.3, true, 15);
        let ci = draws.ci.clone().unwrap();
        let mut swapped = ci.clone();
        for p in swapped.pairs.iter_mut() {
            *p = (p.1, p.0);
        }
        let (a, _, _) =
            ci_loss_with_grads(&net, &x0, &labels, &ci, CiWeighting::Unweighted, &sched).unwrap();
        let (b, _, _) =
            ci_loss_with_grads(&net, &x0, &labels, &swapped, CiWeighting::Unweighted, &sched)
                .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn weighting_flag_rescales_by_inverse_one_minus_alpha_bar() {
        let t_max = 20;
        let sched = cosine_alpha_bar(t_max).unwrap();
        let net = make_net(16, &[8], t_max);
        let mut rng = Prng::seed(17);
        let x0 = rng.normal_matrix(4, 2);
        let labels = vec![vec![1, 0]; 4];
        let mut draws = make_draws(&labels, t_max, 0.3, true, 18);
        // Force one shared t so the weighted loss is a scalar multiple.
        let shared_t = 9;
        let ci = draws.ci.as_mut().unwrap();
        for t in ci.t.iter_mut() {
            *t = shared_t;
        }
        let ci = draws.ci.clone().unwrap();
        let (unweighted, _, _) =
            ci_loss_with_grads(&net, &x0, &labels, &ci, CiWeighting::Unweighted, &sched).unwrap();
        let (weighted, _, _) = ci_loss_with_grads(
            &net,
            &x0,
            &labels,
            &ci,
            CiWeighting::InvOneMinusAlphaBar,
            &sched,
        )
        .unwrap();
        let factor = 1.0 / (1.0 - sched.alpha_bar(shared_t).unwrap());
        assert!((weighted - unweighted * factor).abs() < 1e-12 * factor.max(1.0));
    }

    #[test]
    fn lambda_zero_skips_the_independence_term() {
        let t_max = 25;
        let sched = cosine_alpha_bar(t_max).unwrap();
        let net = make_net(19, &[8], t_max);
        let mut rng = Prng::seed(20);
        let x0 = rng.normal_matrix(4, 2);
        let labels = vec![vec![0, 1]; 4];
        let draws = make_draws(&labels, t_max, 0.3, false, 21);
        let (bd, _) = coind_losses(
            &net,
            &x0,
            &labels,
            &draws,
            0.0,
            CiWeighting::Unweighted,
            &sched,
        )
        .unwrap();
        assert_eq!(bd.l_ci, 0.0);
        assert_eq!(bd.total, bd.l_score);
        assert_eq!(bd.pair, None);
        assert!(bd.l_score >= 0.0);
    }

    #[test]
    fn breakdown_total_is_the_weighted_sum() {
        let t_max = 25;
        let sched = cosine_alpha_bar(t_max).unwrap();
        let net = make_net(22, &[8], t_max);
        let mut rng = Prng::seed(23);
        let x0 = rng.normal_matrix(5, 2);
        let labels = vec![vec![1, 0]; 5];
        let draws = make_draws(&labels, t_max, 0.3, true, 24);
        let lambda = 3.25;
        let (bd, _) = coind_losses(
            &net,
            &x0,
            &labels,
            &draws,
            lambda,
            CiWeighting::Unweighted,
            &sched,
        )
        .unwrap();
        assert!(bd.l_score >= 0.0 && bd.l_ci >= 0.0);
        assert!((bd.total - (bd.l_score + lambda * bd.l_ci)).abs() < 1e-15);
        assert_eq!(bd.pair, Some(draws.ci.unwrap().pairs[0]));
        // The regularizer is active on a nonlinear net: loss must be
        // strictly positive.
        assert!(bd.l_ci > 0.0);
    }

    #[test]
    fn ci_conditions_come_from_unmasked_labels() {
        // Same seeds, different masking rates: the independence term must
        // not change, because it reads the labels, not the masked versions.
        let t_max = 25;
        let sched = cosine_alpha_bar(t_max).unwrap();
        let net = make_net(25, &[8], t_max);
        let mut rng = Prng::seed(26);
        let x0 = rng.normal_matrix(4, 2);
        let labels = vec![vec![0, 0], vec![1, 0], vec![0, 1], vec![1, 0]];
        let low_mask = make_draws(&labels, t_max, 0.05, true, 27);
        let high_mask = make_draws(&labels, t_max, 0.95, true, 27);
        let (a, _, _) = ci_loss_with_grads(
            &net,
            &x0,
            &labels,
            low_mask.ci.as_ref().unwrap(),
            CiWeighting::Unweighted,
            &sched,
        )
        .unwrap();
        let (b, _, _) = ci_loss_with_grads(
            &net,
            &x0,
            &labels,
            high_mask.ci.as_ref().unwrap(),
            CiWeighting::Unweighted,
            &sched,
        )
        .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn single_attribute_spaces_cannot_use_the_independence_term() {
        let labels = vec![vec![0]];
        let root = Prng::seed(1);
        let err = StepDraws::draw(
            &labels,
            2,
            10,
            0.3,
            true,
            &mut root.derive(2),
            &mut root.derive(3),
            &mut root.derive(4),
        )
        .unwrap_err();
        assert!(matches!(err, TrainError::Config(_)));
    }

    #[test]
    fn drawn_pairs_are_distinct_and_cover_both_orders() {
        let labels = vec![vec![0, 0, 0]; 4000];
        let root = Prng::seed(33);
        let draws = StepDraws::draw(
            &labels,
            2,
            10,
            0.3,
            true,
            &mut root.derive(2),
            &mut root.derive(3),
            &mut root.derive(4),
        )
        .unwrap();
        let pairs = &draws.ci.unwrap().pairs;
        assert!(pairs.iter().all(|&(i, j)| i != j && i < 3 && j < 3));
        // All 6 ordered pairs of 3 attributes should occur in 4000 draws.
        for i in 0..3 {
            for j in 0..3 {
                if i != j {
                    assert!(pairs.contains(&(i, j)), "missing pair ({i},{j})");
                }
            }
        }
    }

    #[test]
    fn oracle_residual_in_eps_space_tracks_score_space_conversion() {
        // Sanity link between spaces: the ε-residual equals the
        // score-space residual scaled by √(1-ᾱ_t), per eps_to_score.
        let (world, orth, _) = axis_pair_world(0.3);
        let sched = cosine_alpha_bar(50).unwrap();
        let oracle = OracleEpsModel::new(world, orth, sched.clone());
        let t = 20;
        let x_t = ndarray::array![[0.5, 0.5]];
        let branches = [
            vec![ConditionVector::single(2, 0, 1)],
            vec![ConditionVector::single(2, 1, 1)],
            vec![ConditionVector::from_tuple(&[1, 0])],
            vec![ConditionVector::all_null(2)],
        ];
        let eps: Vec<Matrix> = branches
            .iter()
            .map(|c| oracle.predict_eps(&x_t, t, c).unwrap())
            .collect();
        let eps_resid = &(&eps[0] + &eps[1]) - &(&eps[2] + &eps[3]);
        let scores: Vec<Matrix> = eps
            .iter()
            .map(|e| eps_to_score(e, t, &sched).unwrap())
            .collect();
        let score_resid = &(&scores[0] + &scores[1]) - &(&scores[2] + &scores[3]);
        let root = (1.0 - sched.alpha_bar(t).unwrap()).sqrt();
        for (e, s) in eps_resid.iter().zip(score_resid.iter()) {
            assert!((e + root * s).abs() < 1e-12);
        }
    }
}
