//! Per-attribute predictors and the conformity score.
//!
//! Conformity asks: do generated samples actually carry the attributes
//! they were generated for? Judgment comes from small dense classifiers
//! trained on clean *full-support* data — they have seen every attribute
//! combination, so they are a fair referee for samples from combinations
//! the generator itself never trained on. A sample conforms only if every
//! attribute predictor agrees with the requested tuple; the score is the
//! fraction of conforming samples.

use crate::numkit::{AdamConfig, AdamState, DenseNet, Prng};
use crate::world::{sample_dataset, AttributeSpace, GaussianWorld, Provenance};
use crate::Matrix;

use super::EvalError;

/// Cross-entropy fit of a logits net on integer labels; shared by every
/// classifier in the metrics stack. The loss gradient per row is
/// `softmax(logits) − onehot(label)`, scaled by the batch size.
pub(crate) fn fit_softmax_classifier(
    net: &mut DenseNet,
    xs: &Matrix,
    labels: &[usize],
    steps: usize,
    batch_size: usize,
    lr: f64,
    rng: &mut Prng,
) -> Result<(), EvalError> {
    let n = xs.nrows();
    let n_classes = net.sizes()[net.sizes().len() - 1];
    if n == 0 {
        return Err(EvalError::Config("empty training set".into()));
    }
    if labels.len() != n {
        return Err(EvalError::Config(format!(
            "{} labels for {} rows",
            labels.len(),
            n
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= n_classes) {
        return Err(EvalError::Config(format!(
            "label {bad} out of range for {n_classes} classes"
        )));
    }
    let adam_cfg = AdamConfig::with_lr(lr);
    let mut adam = AdamState::for_net(net);
    let dim = xs.ncols();
    for _ in 0..steps {
        let idx: Vec<usize> = (0..batch_size).map(|_| rng.below(n)).collect();
        let mut x = Matrix::zeros((batch_size, dim));
        for (r, &i) in idx.iter().enumerate() {
            for c in 0..dim {
                x[(r, c)] = xs[(i, c)];
            }
        }
        let (logits, trace) = net.forward_traced(&x)?;
        let mut grad = Matrix::zeros((batch_size, n_classes));
        for (r, &i) in idx.iter().enumerate() {
            let max = (0..n_classes)
                .map(|c| logits[(r, c)])
                .fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = (0..n_classes).map(|c| (logits[(r, c)] - max).exp()).sum();
            for c in 0..n_classes {
                let p = (logits[(r, c)] - max).exp() / z;
                let y = if labels[i] == c { 1.0 } else { 0.0 };
                grad[(r, c)] = (p - y) / batch_size as f64;
            }
        }
        let grads = net.backward(&trace, &grad)?;
        adam.update(net, &grads, &adam_cfg)?;
    }
    Ok(())
}

/// Argmax class per row of `xs` under a logits net.
pub(crate) fn predict_classes(net: &DenseNet, xs: &Matrix) -> Result<Vec<usize>, EvalError> {
    let logits = net.forward(xs)?;
    let k = logits.ncols();
    Ok((0..logits.nrows())
        .map(|r| {
            let mut best = 0;
            for c in 1..k {
                if logits[(r, c)] > logits[(r, best)] {
                    best = c;
                }
            }
            best
        })
        .collect())
}

/// Classifier for one attribute's value from a data point.
#[derive(Debug, Clone)]
pub struct AttributePredictor {
    net: DenseNet,
    attr: usize,
    steps_trained: usize,
}

impl AttributePredictor {
    pub fn attr(&self) -> usize {
        self.attr
    }

    /// Predicted value codes for each row.
    pub fn predict(&self, xs: &Matrix) -> Result<Vec<usize>, EvalError> {
        if self.steps_trained == 0 {
            return Err(EvalError::Config(format!(
                "predictor for attribute {} was never trained",
                self.attr
            )));
        }
        predict_classes(&self.net, xs)
    }
}

/// Trains one predictor per attribute on freshly sampled full-support data
/// (`n_samples` points). Deterministic per seed.
pub fn train_attribute_predictors(
    world: &GaussianWorld,
    full_space: &AttributeSpace,
    n_samples: usize,
    seed: u64,
) -> Result<Vec<AttributePredictor>, EvalError> {
    if n_samples == 0 {
        return Err(EvalError::Config("need at least one training sample".into()));
    }
    let root = Prng::seed(seed);
    let ds = sample_dataset(
        world,
        full_space,
        n_samples,
        Provenance::RealTrain,
        &mut root.derive(0),
    )?;
    let steps = 600;
    let mut out = Vec::with_capacity(full_space.n_attrs());
    for attr in 0..full_space.n_attrs() {
        let labels: Vec<usize> = ds.labels().iter().map(|tuple| tuple[attr]).collect();
        let mut net = DenseNet::random(
            &[world.dim(), 32, full_space.cardinality(attr)],
            &mut root.derive(1 + attr as u64),
        )?;
        fit_softmax_classifier(
            &mut net,
            ds.xs(),
            &labels,
            steps,
            128,
            1e-2,
            &mut root.derive(100 + attr as u64),
        )?;
        out.push(AttributePredictor {
            net,
            attr,
            steps_trained: steps,
        });
    }
    Ok(out)
}

/// Fraction of generated samples whose *every* predicted attribute matches
/// the tuple they were generated for. `batches` pairs each requested tuple
/// with the samples generated under it.
pub fn conformity_score(
    batches: &[(Vec<usize>, Matrix)],
    predictors: &[AttributePredictor],
) -> Result<f64, EvalError> {
    if batches.is_empty() || batches.iter().all(|(_, m)| m.nrows() == 0) {
        return Err(EvalError::Config("no generated samples to judge".into()));
    }
    if predictors.is_empty() {
        return Err(EvalError::Config("no attribute predictors".into()));
    }
    let mut conforming = 0usize;
    let mut total = 0usize;
    for (tuple, samples) in batches {
        if tuple.len() != predictors.len() {
            return Err(EvalError::Config(format!(
                "tuple of arity {} judged by {} predictors",
                tuple.len(),
                predictors.len()
            )));
        }
        if samples.nrows() == 0 {
            continue;
        }
        let mut ok = vec![true; samples.nrows()];
        for p in predictors {
            let preds = p.predict(samples)?;
            for (r, &pred) in preds.iter().enumerate() {
                ok[r] &= pred == tuple[p.attr()];
            }
        }
        conforming += ok.iter().filter(|&&b| b).count();
        total += samples.nrows();
    }
    Ok(conforming as f64 / total as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::axis_pair_world;

    fn trained() -> (GaussianWorld, AttributeSpace, Vec<AttributePredictor>) {
        let (world, _, full) = axis_pair_world(0.3);
        let preds = train_attribute_predictors(&world, &full, 4000, 7).unwrap();
        (world, full, preds)
    }

    #[test]
    fn predictors_recover_attributes_from_clean_draws() {
        let (world, full, preds) = trained();
        let mut rng = Prng::seed(9);
        let ds = sample_dataset(&world, &full, 2000, Provenance::RealTest, &mut rng).unwrap();
        for p in &preds {
            let guesses = p.predict(ds.xs()).unwrap();
            let correct = guesses
                .iter()
                .zip(ds.labels())
                .filter(|(&g, tuple)| g == tuple[p.attr()])
                .count();
            assert!(
                correct >= 1980,
                "attribute {}: {correct}/2000 correct",
                p.attr()
            );
        }
    }

    #[test]
    fn exact_component_means_conform_perfectly() {
        let (world, full, preds) = trained();
        let batches: Vec<(Vec<usize>, Matrix)> = full
            .all_tuples()
            .into_iter()
            .map(|tuple| {
                let mu = world.mean_of(&tuple);
                let mut m = Matrix::zeros((50, 2));
                for r in 0..50 {
                    m[(r, 0)] = mu[0];
                    m[(r, 1)] = mu[1];
                }
                (tuple, m)
            })
            .collect();
        let cs = conformity_score(&batches, &preds).unwrap();
        assert_eq!(cs, 1.0);
    }

    #[test]
    fn generator_that_flips_a_coin_for_one_attribute_scores_half() {
        let (world, full, preds) = trained();
        let mut rng = Prng::seed(11);
        // Coordinate 0 honors the request; coordinate 1 ignores it and
        // flips between the two component means.
        let batches: Vec<(Vec<usize>, Matrix)> = full
            .all_tuples()
            .into_iter()
            .map(|tuple| {
                let mu = world.mean_of(&tuple);
                let mut m = Matrix::zeros((500, 2));
                for r in 0..500 {
                    m[(r, 0)] = mu[0] + 0.05 * rng.normal();
                    let flip = if rng.uniform() < 0.5 { 1.0 } else { -1.0 };
                    m[(r, 1)] = flip + 0.05 * rng.normal();
                }
                (tuple, m)
            })
            .collect();
        let cs = conformity_score(&batches, &preds).unwrap();
        assert!((cs - 0.5).abs() < 0.05, "coin-flip conformity {cs}");
    }

    #[test]
    fn untrained_predictor_is_an_error() {
        let (_, full, mut preds) = trained();
        preds[0].steps_trained = 0;
        let batches = vec![(vec![0usize, 0], Matrix::zeros((3, 2)))];
        assert!(conformity_score(&batches, &preds).is_err());
        let _ = full;
    }

    #[test]
    fn malformed_judgment_requests_are_rejected() {
        let (_, _, preds) = trained();
        assert!(conformity_score(&[], &preds).is_err());
        let empty_only = vec![(vec![0usize, 0], Matrix::zeros((0, 2)))];
        assert!(conformity_score(&empty_only, &preds).is_err());
        let wrong_arity = vec![(vec![0usize], Matrix::zeros((2, 2)))];
        assert!(conformity_score(&wrong_arity, &preds).is_err());
        let no_preds: Vec<AttributePredictor> = Vec::new();
        let batches = vec![(vec![0usize, 0], Matrix::zeros((2, 2)))];
        assert!(conformity_score(&batches, &no_preds).is_err());
    }

    #[test]
    fn training_is_deterministic_per_seed() {
        let (world, _, full) = axis_pair_world(0.3);
        let a = train_attribute_predictors(&world, &full, 500, 3).unwrap();
        let b = train_attribute_predictors(&world, &full, 500, 3).unwrap();
        let xs = Prng::seed(4).normal_matrix(50, 2);
        for (pa, pb) in a.iter().zip(&b) {
            assert_eq!(pa.predict(&xs).unwrap(), pb.predict(&xs).unwrap());
        }
    }
}
