//! The implicit classifier and the independence-violation metric built on
//! top of it.
//!
//! A conditional ε-model scores how well a condition explains a data point:
//! the Monte Carlo denoising error
//!
//! ```text
//! err(c) ≈ E_{t,ε} ‖ε − ε̂(√ᾱ_t·x + √(1−ᾱ_t)·ε, t, c)‖²
//! ```
//!
//! ranks candidate conditions exactly like their conditional likelihoods,
//! so `softmax(−err)` over candidates is a probability table for `p(c|x)`.
//! The same `(t, ε)` draws are reused for *every* candidate: the table then
//! depends on the draws only through a shared baseline, which cancels in
//! the softmax, making the argmax far more stable than with independent
//! draws per candidate.
//!
//! Independence violation compares, per evaluation point, the joint table
//! over the first attribute pair with the outer product of the two marginal
//! tables, via the Jensen–Shannon divergence (natural log, so the value
//! lives in `[0, ln 2]`).

use crate::diffusion::{add_noise, EpsModel, NoiseSchedule};
use crate::numkit::Prng;
use crate::world::{AttributeSpace, ConditionVector};
use crate::Matrix;

use super::EvalError;

/// Monte Carlo budget for the implicit classifier.
#[derive(Debug, Clone, Copy)]
pub struct ImplicitClassifierConfig {
    /// How many time steps to draw.
    pub n_timesteps: usize,
    /// Inclusive range `[lo, hi]` the time steps are drawn from.
    pub t_range: (usize, usize),
    /// How many noise draws per time step.
    pub eps_per_timestep: usize,
}

impl Default for ImplicitClassifierConfig {
    fn default() -> ImplicitClassifierConfig {
        ImplicitClassifierConfig {
            n_timesteps: 5,
            t_range: (300, 600),
            eps_per_timestep: 8,
        }
    }
}

impl ImplicitClassifierConfig {
    /// The default budget rescaled to a schedule of horizon `t_max`: five
    /// time steps from the middle band `[0.3·T, 0.6·T]`, eight noise draws
    /// each.
    pub fn for_horizon(t_max: usize) -> ImplicitClassifierConfig {
        let lo = ((0.3 * t_max as f64).round() as usize).max(1);
        let hi = ((0.6 * t_max as f64).round() as usize).max(lo + 1);
        ImplicitClassifierConfig {
            n_timesteps: 5,
            t_range: (lo, hi),
            eps_per_timestep: 8,
        }
    }

    fn validate(&self, t_max: usize) -> Result<(), EvalError> {
        let (lo, hi) = self.t_range;
        if self.n_timesteps == 0 || self.eps_per_timestep == 0 {
            return Err(EvalError::Config("draw counts must be at least 1".into()));
        }
        if lo == 0 || lo >= hi || hi > t_max {
            return Err(EvalError::Config(format!(
                "need 1 ≤ lo < hi ≤ {t_max}, got time range [{lo}, {hi}]"
            )));
        }
        Ok(())
    }
}

/// Which conditional table to estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClassTarget {
    /// Distribution over one attribute's values.
    Single(usize),
    /// Joint distribution over an attribute pair's value combinations.
    Pair(usize, usize),
}

/// A probability table over candidate conditions: `probs[k]` belongs to the
/// attribute values in `candidates[k]` (one entry for a single target, two
/// for a pair).
#[derive(Debug, Clone)]
pub struct ProbTable {
    pub candidates: Vec<Vec<usize>>,
    pub probs: Vec<f64>,
}

impl ProbTable {
    /// Index of the most probable candidate.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for k in 1..self.probs.len() {
            if self.probs[k] > self.probs[best] {
                best = k;
            }
        }
        best
    }
}

fn candidate_conds(
    space: &AttributeSpace,
    target: ClassTarget,
) -> Result<(Vec<Vec<usize>>, Vec<ConditionVector>), EvalError> {
    let n = space.n_attrs();
    let check = |i: usize| {
        if i >= n {
            Err(EvalError::Config(format!(
                "attribute index {i} out of range for {n} attributes"
            )))
        } else {
            Ok(())
        }
    };
    match target {
        ClassTarget::Single(i) => {
            check(i)?;
            let values: Vec<Vec<usize>> = (0..space.cardinality(i)).map(|v| vec![v]).collect();
            let conds = values
                .iter()
                .map(|v| ConditionVector::single(n, i, v[0]))
                .collect();
            Ok((values, conds))
        }
        ClassTarget::Pair(i, j) => {
            check(i)?;
            check(j)?;
            if i == j {
                return Err(EvalError::Config(format!(
                    "attribute pair needs two distinct attributes, got ({i}, {j})"
                )));
            }
            let mut values = Vec::new();
            let mut conds = Vec::new();
            for vi in 0..space.cardinality(i) {
                for vj in 0..space.cardinality(j) {
                    values.push(vec![vi, vj]);
                    let cond = ConditionVector::all_null(n)
                        .with_slot(i, Some(vi))
                        .with_slot(j, Some(vj));
                    conds.push(cond);
                }
            }
            Ok((values, conds))
        }
    }
}

/// Mean denoising error per row and candidate under shared draws:
/// entry `(r, k)` is the Monte Carlo error of candidate `k` at row `r`.
fn candidate_errors(
    model: &dyn EpsModel,
    xs: &Matrix,
    conds: &[ConditionVector],
    draws: &[(usize, Matrix)],
    schedule: &NoiseSchedule,
) -> Result<Matrix, EvalError> {
    let rows = xs.nrows();
    let dim = xs.ncols();
    let mut errs = Matrix::zeros((rows, conds.len()));
    for (t, eps) in draws {
        let x_t = add_noise(xs, *t, eps, schedule)?;
        for (k, cond) in conds.iter().enumerate() {
            let cond_rows = vec![cond.clone(); rows];
            let pred = model.predict_eps(&x_t, *t, &cond_rows)?;
            for r in 0..rows {
                let mut e = 0.0;
                for c in 0..dim {
                    let d = eps[(r, c)] - pred[(r, c)];
                    e += d * d;
                }
                errs[(r, k)] += e;
            }
        }
    }
    let scale = 1.0 / draws.len() as f64;
    errs.mapv_inplace(|v| v * scale);
    Ok(errs)
}

fn draw_set(
    cfg: &ImplicitClassifierConfig,
    rows: usize,
    dim: usize,
    rng: &mut Prng,
) -> Vec<(usize, Matrix)> {
    let mut draws = Vec::with_capacity(cfg.n_timesteps * cfg.eps_per_timestep);
    for _ in 0..cfg.n_timesteps {
        let t = rng.int_in(cfg.t_range.0, cfg.t_range.1);
        for _ in 0..cfg.eps_per_timestep {
            draws.push((t, rng.normal_matrix(rows, dim)));
        }
    }
    draws
}

/// Stable softmax of negated errors along each row of `errs`.
fn softmax_neg_rows(errs: &Matrix) -> Vec<Vec<f64>> {
    let (rows, k) = errs.dim();
    let mut out = Vec::with_capacity(rows);
    for r in 0..rows {
        let min = (0..k).map(|c| errs[(r, c)]).fold(f64::INFINITY, f64::min);
        let weights: Vec<f64> = (0..k).map(|c| (-(errs[(r, c)] - min)).exp()).collect();
        let z: f64 = weights.iter().sum();
        out.push(weights.into_iter().map(|w| w / z).collect());
    }
    out
}

/// Probability tables for every row of `xs` at once, sharing one draw set
/// across rows and candidates.
pub fn implicit_class_probs_batch(
    model: &dyn EpsModel,
    space: &AttributeSpace,
    xs: &Matrix,
    target: ClassTarget,
    cfg: &ImplicitClassifierConfig,
    schedule: &NoiseSchedule,
    rng: &mut Prng,
) -> Result<Vec<ProbTable>, EvalError> {
    cfg.validate(schedule.t_max())?;
    if xs.nrows() == 0 {
        return Err(EvalError::Config("empty evaluation set".into()));
    }
    let (candidates, conds) = candidate_conds(space, target)?;
    let draws = draw_set(cfg, xs.nrows(), xs.ncols(), rng);
    let errs = candidate_errors(model, xs, &conds, &draws, schedule)?;
    Ok(softmax_neg_rows(&errs)
        .into_iter()
        .map(|probs| ProbTable {
            candidates: candidates.clone(),
            probs,
        })
        .collect())
}

/// Probability table for a single data point.
pub fn implicit_class_probs(
    model: &dyn EpsModel,
    space: &AttributeSpace,
    x: &[f64],
    target: ClassTarget,
    cfg: &ImplicitClassifierConfig,
    schedule: &NoiseSchedule,
    rng: &mut Prng,
) -> Result<ProbTable, EvalError> {
    let xs = Matrix::from_shape_vec((1, x.len()), x.to_vec())
        .expect("row construction cannot fail");
    Ok(implicit_class_probs_batch(model, space, &xs, target, cfg, schedule, rng)?.remove(0))
}

/// Jensen–Shannon divergence between two distributions over the same
/// support, in nats; symmetric, non-negative, at most `ln 2`.
pub fn js_divergence(p: &[f64], q: &[f64]) -> f64 {
    assert_eq!(p.len(), q.len(), "distributions must share a support");
    let kl_to_mid = |a: &[f64]| {
        a.iter()
            .zip(p.iter().zip(q))
            .map(|(&ai, (&pi, &qi))| {
                if ai > 0.0 {
                    ai * (ai / (0.5 * (pi + qi))).ln()
                } else {
                    0.0
                }
            })
            .sum::<f64>()
    };
    0.5 * (kl_to_mid(p) + kl_to_mid(q))
}

/// Mean independence violation over an evaluation set: for each row, the
/// JS divergence between the model's joint table over the first attribute
/// pair and the outer product of its two marginal tables, all three
/// estimated from one shared draw set.
pub fn jsd_violation(
    model: &dyn EpsModel,
    space: &AttributeSpace,
    eval_xs: &Matrix,
    cfg: &ImplicitClassifierConfig,
    schedule: &NoiseSchedule,
    rng: &mut Prng,
) -> Result<f64, EvalError> {
    cfg.validate(schedule.t_max())?;
    if space.n_attrs() < 2 {
        return Err(EvalError::Config(
            "independence violation needs at least two attributes".into(),
        ));
    }
    if eval_xs.nrows() == 0 {
        return Err(EvalError::Config("empty evaluation set".into()));
    }
    let (_, joint_conds) = candidate_conds(space, ClassTarget::Pair(0, 1))?;
    let (_, first_conds) = candidate_conds(space, ClassTarget::Single(0))?;
    let (_, second_conds) = candidate_conds(space, ClassTarget::Single(1))?;
    let draws = draw_set(cfg, eval_xs.nrows(), eval_xs.ncols(), rng);
    let joint_errs = candidate_errors(model, eval_xs, &joint_conds, &draws, schedule)?;
    let first_errs = candidate_errors(model, eval_xs, &first_conds, &draws, schedule)?;
    let second_errs = candidate_errors(model, eval_xs, &second_conds, &draws, schedule)?;
    let joint = softmax_neg_rows(&joint_errs);
    let first = softmax_neg_rows(&first_errs);
    let second = softmax_neg_rows(&second_errs);
    let card_second = space.cardinality(1);
    let mut acc = 0.0;
    for r in 0..eval_xs.nrows() {
        let product: Vec<f64> = first[r]
            .iter()
            .flat_map(|&pi| second[r].iter().map(move |&pj| pi * pj))
            .collect();
        debug_assert_eq!(product.len(), joint[r].len());
        debug_assert_eq!(joint[r].len() % card_second, 0);
        acc += js_divergence(&joint[r], &product);
    }
    Ok(acc / eval_xs.nrows() as f64)
}
