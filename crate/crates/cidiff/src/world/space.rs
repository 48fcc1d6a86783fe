//! Discrete attribute spaces, training supports, and partial conditions.
//!
//! An attribute space is a Cartesian product of finite value sets together
//! with an explicit *training support*: the subset of value tuples the
//! training data actually contains. Compositional generalization is about
//! what a model trained on that subset can say about the rest of the product.

use std::collections::BTreeSet;

use super::WorldError;

/// A product of finite attribute value sets plus the training support.
///
/// Values are arbitrary labels mapped to integer codes `0..cardinality`;
/// all tuples are stored as code vectors.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttributeSpace {
    value_labels: Vec<Vec<String>>,
    train_support: Vec<Vec<usize>>,
}

impl AttributeSpace {
    /// Builds a space and validates its invariants: at least one attribute,
    /// nonempty value sets, a nonempty training support of well-formed,
    /// distinct tuples.
    pub fn new(
        value_labels: Vec<Vec<String>>,
        train_support: Vec<Vec<usize>>,
    ) -> Result<AttributeSpace, WorldError> {
        if value_labels.is_empty() {
            return Err(WorldError::Space("no attributes".into()));
        }
        for (i, vals) in value_labels.iter().enumerate() {
            if vals.is_empty() {
                return Err(WorldError::Space(format!("attribute {i} has no values")));
            }
        }
        if train_support.is_empty() {
            return Err(WorldError::Space("training support is empty".into()));
        }
        let mut seen = BTreeSet::new();
        for tuple in &train_support {
            if tuple.len() != value_labels.len() {
                return Err(WorldError::Space(format!(
                    "support tuple {tuple:?} has arity {}, expected {}",
                    tuple.len(),
                    value_labels.len()
                )));
            }
            for (i, &code) in tuple.iter().enumerate() {
                if code >= value_labels[i].len() {
                    return Err(WorldError::Space(format!(
                        "support tuple {tuple:?} uses out-of-range code {code} for attribute {i}"
                    )));
                }
            }
            if !seen.insert(tuple.clone()) {
                return Err(WorldError::Space(format!(
                    "support tuple {tuple:?} listed twice"
                )));
            }
        }
        Ok(AttributeSpace {
            value_labels,
            train_support,
        })
    }

    /// Two binary attributes labeled `-1`/`+1`, all four tuples in support.
    pub fn binary_pair_full() -> AttributeSpace {
        Self::binary_pair(vec![vec![0, 0], vec![0, 1], vec![1, 0], vec![1, 1]])
    }

    /// Two binary attributes labeled `-1`/`+1` with the L-shaped support
    /// `{(-1,-1), (-1,+1), (+1,-1)}`: every value appears, but the tuple
    /// `(+1,+1)` is never seen. The canonical unseen-composition setting.
    pub fn binary_pair_orthogonal() -> AttributeSpace {
        Self::binary_pair(vec![vec![0, 0], vec![0, 1], vec![1, 0]])
    }

    fn binary_pair(support: Vec<Vec<usize>>) -> AttributeSpace {
        let labels = vec!["-1".to_string(), "+1".to_string()];
        AttributeSpace::new(vec![labels.clone(), labels], support)
            .expect("built-in binary pair space is well-formed")
    }

    pub fn n_attrs(&self) -> usize {
        self.value_labels.len()
    }

    pub fn cardinality(&self, attr: usize) -> usize {
        self.value_labels[attr].len()
    }

    pub fn value_label(&self, attr: usize, code: usize) -> &str {
        &self.value_labels[attr][code]
    }

    pub fn train_support(&self) -> &[Vec<usize>] {
        &self.train_support
    }

    pub fn in_train_support(&self, tuple: &[usize]) -> bool {
        self.train_support.iter().any(|t| t == tuple)
    }

    /// Every tuple of the full product, lexicographic in code order.
    pub fn all_tuples(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new()];
        for vals in &self.value_labels {
            let mut next = Vec::with_capacity(out.len() * vals.len());
            for prefix in &out {
                for code in 0..vals.len() {
                    let mut t = prefix.clone();
                    t.push(code);
                    next.push(t);
                }
            }
            out = next;
        }
        out
    }

    /// Tuples of the full product missing from the training support.
    pub fn unseen_tuples(&self) -> Vec<Vec<usize>> {
        self.all_tuples()
            .into_iter()
            .filter(|t| !self.in_train_support(t))
            .collect()
    }

    /// Position of `tuple` in the [`Self::all_tuples`] enumeration.
    pub fn tuple_index(&self, tuple: &[usize]) -> usize {
        let mut idx = 0;
        for (i, &code) in tuple.iter().enumerate() {
            idx = idx * self.cardinality(i) + code;
        }
        idx
    }

    /// Human-readable rendering of a code tuple, e.g. `(+1, -1)`.
    pub fn format_tuple(&self, tuple: &[usize]) -> String {
        let parts: Vec<&str> = tuple
            .iter()
            .enumerate()
            .map(|(i, &c)| self.value_label(i, c))
            .collect();
        format!("({})", parts.join(", "))
    }
}

/// A partial assignment of attribute values: each slot holds a value code or
/// the null token (no constraint on that attribute).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ConditionVector {
    slots: Vec<Option<usize>>,
}

impl ConditionVector {
    pub fn new(slots: Vec<Option<usize>>) -> ConditionVector {
        ConditionVector { slots }
    }

    /// The fully-null condition (no attribute constrained).
    pub fn all_null(n: usize) -> ConditionVector {
        ConditionVector {
            slots: vec![None; n],
        }
    }

    /// Every attribute set, none null.
    pub fn from_tuple(tuple: &[usize]) -> ConditionVector {
        ConditionVector {
            slots: tuple.iter().map(|&c| Some(c)).collect(),
        }
    }

    /// Exactly one attribute set.
    pub fn single(n: usize, attr: usize, value: usize) -> ConditionVector {
        let mut slots = vec![None; n];
        slots[attr] = Some(value);
        ConditionVector { slots }
    }

    pub fn arity(&self) -> usize {
        self.slots.len()
    }

    pub fn slots(&self) -> &[Option<usize>] {
        &self.slots
    }

    pub fn is_fully_null(&self) -> bool {
        self.slots.iter().all(|s| s.is_none())
    }

    /// `(attribute, value)` pairs for the observed (non-null) slots.
    pub fn observed(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.slots
            .iter()
            .enumerate()
            .filter_map(|(i, s)| s.map(|v| (i, v)))
    }

    /// True when `tuple` agrees with every observed slot.
    pub fn matches(&self, tuple: &[usize]) -> bool {
        self.slots.len() == tuple.len()
            && self
                .observed()
                .all(|(attr, value)| tuple[attr] == value)
    }

    /// Replaces one slot, returning the modified copy.
    pub fn with_slot(&self, attr: usize, value: Option<usize>) -> ConditionVector {
        let mut slots = self.slots.clone();
        slots[attr] = value;
        ConditionVector { slots }
    }
}

/// Result of [`check_support_cover`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoverReport {
    /// True iff every value of every attribute occurs in some training tuple.
    pub covers: bool,
    /// `(attribute, value code)` pairs absent from the entire support.
    pub missing: Vec<(usize, usize)>,
    /// Support tuples with no support neighbor differing in exactly one
    /// attribute. A lonely tuple contributes nothing compositional: none of
    /// its attribute values can be swapped while staying in support.
    pub lonely_tuples: Vec<Vec<usize>>,
}

/// Checks whether the training support covers the attribute space: every
/// value of every attribute must appear somewhere, so that marginal
/// information about each value exists even when most combinations don't.
/// Also reports support tuples lacking a one-attribute neighbor.
pub fn check_support_cover(space: &AttributeSpace) -> CoverReport {
    let mut missing = Vec::new();
    for attr in 0..space.n_attrs() {
        for code in 0..space.cardinality(attr) {
            let appears = space
                .train_support()
                .iter()
                .any(|t| t[attr] == code);
            if !appears {
                missing.push((attr, code));
            }
        }
    }
    let lonely_tuples = space
        .train_support()
        .iter()
        .filter(|t| {
            !space.train_support().iter().any(|other| {
                let diff = t
                    .iter()
                    .zip(other.iter())
                    .filter(|(a, b)| a != b)
                    .count();
                diff == 1
            })
        })
        .cloned()
        .collect();
    CoverReport {
        covers: missing.is_empty(),
        missing,
        lonely_tuples,
    }
}
