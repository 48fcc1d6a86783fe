//! Downstream classification on synthetic data and group-sliced accuracy.
//!
//! The downstream probe: train a small classifier on *generated* data
//! spanning every attribute combination, then test it on real data. If the
//! generator only ever produced the combinations it saw during its own
//! training, the classifier inherits that spurious coupling and collapses
//! on the groups where the attributes disagree — which is exactly what
//! worst-group accuracy detects. Groups are full attribute tuples;
//! balanced accuracy averages over groups, worst-group takes the minimum.
//!
//! Two probe flavors. The single-attribute probe predicts one attribute's
//! value; the joint probe predicts the entire attribute tuple at once and
//! scores a test point as correct only when the whole tuple matches. The
//! joint version is the stricter audit: it must place every combination
//! somewhere in data space, so a generator that cannot populate a
//! combination forfeits that group's region to its neighbors instead of
//! being rescued by attribute-wise shortcuts.

use crate::diffusion::{EpsModel, NoiseSchedule};
use crate::numkit::{DenseNet, Prng};
use crate::world::{AttributeSpace, LabeledDataset};
use crate::Matrix;

use super::classifier::{implicit_class_probs_batch, ClassTarget, ImplicitClassifierConfig};
use super::predictors::{fit_softmax_classifier, predict_classes};
use super::EvalError;

/// Accuracy sliced by attribute tuple.
///
/// `per_group` holds `(tuple, accuracy)` for every tuple with test
/// samples; `excluded` records tuples of the space absent from the test
/// set. Always `worst_group_acc ≤ balanced_acc ≤ max group accuracy` and
/// every number lies in `[0, 1]`.
#[derive(Debug, Clone)]
pub struct GroupMetrics {
    pub per_group: Vec<(Vec<usize>, f64)>,
    pub test_acc: f64,
    pub balanced_acc: f64,
    pub worst_group_acc: f64,
    pub excluded: Vec<Vec<usize>>,
}

/// Training backbone for the downstream probe.
#[derive(Debug, Clone)]
pub struct DownstreamConfig {
    pub hidden: Vec<usize>,
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
}

impl Default for DownstreamConfig {
    fn default() -> DownstreamConfig {
        DownstreamConfig {
            hidden: vec![32],
            steps: 800,
            batch_size: 128,
            lr: 1e-2,
        }
    }
}

/// Predicts one attribute's value from a data point.
#[derive(Debug, Clone)]
pub struct DownstreamClassifier {
    net: DenseNet,
    target_attr: usize,
}

impl DownstreamClassifier {
    pub fn target_attr(&self) -> usize {
        self.target_attr
    }

    pub fn predict(&self, xs: &Matrix) -> Result<Vec<usize>, EvalError> {
        predict_classes(&self.net, xs)
    }
}

/// Trains the probe on `dataset` (typically synthetic) to predict
/// attribute `target_attr`. Deterministic per seed.
pub fn train_downstream_classifier(
    dataset: &LabeledDataset,
    space: &AttributeSpace,
    target_attr: usize,
    cfg: &DownstreamConfig,
    seed: u64,
) -> Result<DownstreamClassifier, EvalError> {
    if target_attr >= space.n_attrs() {
        return Err(EvalError::Config(format!(
            "target attribute {target_attr} out of range"
        )));
    }
    let labels: Vec<usize> = dataset
        .labels()
        .iter()
        .map(|tuple| tuple[target_attr])
        .collect();
    let first = labels.first().ok_or_else(|| {
        EvalError::Config("empty synthetic dataset".into())
    })?;
    if labels.iter().all(|l| l == first) {
        return Err(EvalError::Config(format!(
            "all samples carry value {first} for attribute {target_attr}; nothing to learn"
        )));
    }
    let mut sizes = vec![dataset.dim()];
    sizes.extend_from_slice(&cfg.hidden);
    sizes.push(space.cardinality(target_attr));
    let root = Prng::seed(seed);
    let mut net = DenseNet::random(&sizes, &mut root.derive(0))?;
    fit_softmax_classifier(
        &mut net,
        dataset.xs(),
        &labels,
        cfg.steps,
        cfg.batch_size,
        cfg.lr,
        &mut root.derive(1),
    )?;
    Ok(DownstreamClassifier {
        net,
        target_attr,
    })
}

/// Group metrics from already-computed predictions of the target
/// attribute, sliced by the full tuples in `labels`.
pub fn group_metrics_from_preds(
    space: &AttributeSpace,
    labels: &[Vec<usize>],
    preds: &[usize],
    target_attr: usize,
) -> Result<GroupMetrics, EvalError> {
    if labels.len() != preds.len() {
        return Err(EvalError::Config(format!(
            "{} predictions for {} test samples",
            preds.len(),
            labels.len()
        )));
    }
    let hit: Vec<bool> = labels
        .iter()
        .zip(preds)
        .map(|(tuple, &pred)| tuple.get(target_attr) == Some(&pred))
        .collect();
    slice_hits_by_group(space, labels, &hit)
}

/// Slices row-level hit/miss outcomes into [`GroupMetrics`] by full tuple.
fn slice_hits_by_group(
    space: &AttributeSpace,
    labels: &[Vec<usize>],
    hit: &[bool],
) -> Result<GroupMetrics, EvalError> {
    if labels.is_empty() {
        return Err(EvalError::Config("empty test set".into()));
    }
    let tuples = space.all_tuples();
    let mut hits = vec![0usize; tuples.len()];
    let mut counts = vec![0usize; tuples.len()];
    let mut total_hits = 0usize;
    for (tuple, &ok) in labels.iter().zip(hit) {
        let in_space = tuple.len() == space.n_attrs()
            && tuple
                .iter()
                .enumerate()
                .all(|(i, &code)| code < space.cardinality(i));
        if !in_space {
            return Err(EvalError::Config(format!(
                "test label {tuple:?} outside the attribute space"
            )));
        }
        let g = space.tuple_index(tuple);
        counts[g] += 1;
        if ok {
            hits[g] += 1;
            total_hits += 1;
        }
    }
    let mut per_group = Vec::new();
    let mut excluded = Vec::new();
    for (g, tuple) in tuples.into_iter().enumerate() {
        if counts[g] == 0 {
            excluded.push(tuple);
        } else {
            per_group.push((tuple, hits[g] as f64 / counts[g] as f64));
        }
    }
    let balanced_acc =
        per_group.iter().map(|(_, a)| a).sum::<f64>() / per_group.len() as f64;
    let worst_group_acc = per_group
        .iter()
        .map(|&(_, a)| a)
        .fold(f64::INFINITY, f64::min);
    Ok(GroupMetrics {
        per_group,
        test_acc: total_hits as f64 / labels.len() as f64,
        balanced_acc,
        worst_group_acc,
        excluded,
    })
}

/// Evaluates a trained probe on a real labeled test set.
pub fn group_metrics(
    clf: &DownstreamClassifier,
    test: &LabeledDataset,
    space: &AttributeSpace,
) -> Result<GroupMetrics, EvalError> {
    let preds = clf.predict(test.xs())?;
    group_metrics_from_preds(space, test.labels(), &preds, clf.target_attr)
}

/// Predicts the complete attribute tuple of a data point with one softmax
/// over every combination in the space.
#[derive(Debug, Clone)]
pub struct JointDownstreamClassifier {
    net: DenseNet,
}

impl JointDownstreamClassifier {
    /// The predicted tuple for every row of `xs`, decoded through the
    /// tuple order of `space`.
    pub fn predict(
        &self,
        xs: &Matrix,
        space: &AttributeSpace,
    ) -> Result<Vec<Vec<usize>>, EvalError> {
        let tuples = space.all_tuples();
        if self.net.output_dim() != tuples.len() {
            return Err(EvalError::Config(format!(
                "probe has {} classes but the space has {} tuples",
                self.net.output_dim(),
                tuples.len()
            )));
        }
        let classes = predict_classes(&self.net, xs)?;
        Ok(classes.into_iter().map(|k| tuples[k].clone()).collect())
    }
}

/// Trains a probe for the *entire* tuple, one softmax class per attribute
/// combination. Unlike the single-attribute probe — which may ride one
/// coordinate that happens to separate the target — this one has to place
/// every combination somewhere, so a generator that cannot populate a
/// combination forfeits that group's region to its neighbors.
pub fn train_joint_downstream_classifier(
    dataset: &LabeledDataset,
    space: &AttributeSpace,
    cfg: &DownstreamConfig,
    seed: u64,
) -> Result<JointDownstreamClassifier, EvalError> {
    let n_classes: usize = (0..space.n_attrs()).map(|a| space.cardinality(a)).product();
    let mut labels = Vec::with_capacity(dataset.len());
    for tuple in dataset.labels() {
        let in_space = tuple.len() == space.n_attrs()
            && tuple
                .iter()
                .enumerate()
                .all(|(i, &code)| code < space.cardinality(i));
        if !in_space {
            return Err(EvalError::Config(format!(
                "training label {tuple:?} outside the attribute space"
            )));
        }
        labels.push(space.tuple_index(tuple));
    }
    let first = labels
        .first()
        .ok_or_else(|| EvalError::Config("empty synthetic dataset".into()))?;
    if labels.iter().all(|l| l == first) {
        return Err(EvalError::Config(format!(
            "all samples carry tuple class {first}; nothing to learn"
        )));
    }
    let mut sizes = vec![dataset.dim()];
    sizes.extend_from_slice(&cfg.hidden);
    sizes.push(n_classes);
    let root = Prng::seed(seed);
    let mut net = DenseNet::random(&sizes, &mut root.derive(0))?;
    fit_softmax_classifier(
        &mut net,
        dataset.xs(),
        &labels,
        cfg.steps,
        cfg.batch_size,
        cfg.lr,
        &mut root.derive(1),
    )?;
    Ok(JointDownstreamClassifier { net })
}

/// Evaluates the whole-tuple probe on a real labeled test set; a hit
/// requires every attribute of the predicted tuple to match.
pub fn joint_group_metrics(
    clf: &JointDownstreamClassifier,
    test: &LabeledDataset,
    space: &AttributeSpace,
) -> Result<GroupMetrics, EvalError> {
    let preds = clf.predict(test.xs(), space)?;
    let hit: Vec<bool> = test
        .labels()
        .iter()
        .zip(&preds)
        .map(|(t, p)| t == p)
        .collect();
    slice_hits_by_group(space, test.labels(), &hit)
}

/// Classifies every test point by the argmax of the model's own implicit
/// probability table for the target attribute — no separately trained
/// classifier involved — and slices the accuracy by group.
pub fn implicit_generative_classifier_metrics(
    model: &dyn EpsModel,
    space: &AttributeSpace,
    test: &LabeledDataset,
    target_attr: usize,
    cfg: &ImplicitClassifierConfig,
    schedule: &NoiseSchedule,
    rng: &mut Prng,
) -> Result<GroupMetrics, EvalError> {
    let tables = implicit_class_probs_batch(
        model,
        space,
        test.xs(),
        ClassTarget::Single(target_attr),
        cfg,
        schedule,
        rng,
    )?;
    let preds: Vec<usize> = tables
        .iter()
        .map(|t| t.candidates[t.argmax()][0])
        .collect();
    group_metrics_from_preds(space, test.labels(), &preds, target_attr)
}
