//! Gaussian mixture world with additive per-attribute means, and exact
//! scores for every conditional the training distribution defines.
//!
//! An observation given tuple `(c₁, …, cₙ)` is
//!
//! ```text
//! x = Σᵢ fᵢ(cᵢ) + σ·ε,   ε ~ N(0, I)
//! ```
//!
//! so each conditional is a Gaussian `N(Σᵢ fᵢ(cᵢ), σ²I)` and every partial
//! conditional (some attributes unconstrained) is a finite mixture of such
//! Gaussians over the training tuples consistent with the condition. Scores
//! of those mixtures are available in closed form at any diffusion noise
//! level, which is what makes this world a verification instrument.
//!
//! Because means add across attributes, the mean of an *unseen* tuple is
//! reachable from seen ones: with two binary attributes,
//! `μ(+1,+1) = μ(+1,-1) + μ(-1,+1) - μ(-1,-1)` exactly — swap one
//! attribute at a time and the cross terms cancel. Composition operators are
//! judged against that identity.

use crate::numkit::Prng;

use super::{AttributeSpace, ConditionVector, LabeledDataset, Provenance, WorldError};

/// The data-generating process: per-attribute component maps `fᵢ`, a shared
/// isotropic noise scale, and the observation dimension.
#[derive(Debug, Clone)]
pub struct GaussianWorld {
    /// `component_means[attr][code]` is `fᵢ(cᵢ)` in ℝᵈ.
    component_means: Vec<Vec<Vec<f64>>>,
    sigma: f64,
    dim: usize,
}

impl GaussianWorld {
    pub fn new(component_means: Vec<Vec<Vec<f64>>>, sigma: f64) -> Result<GaussianWorld, WorldError> {
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(WorldError::World(format!("sigma must be positive, got {sigma}")));
        }
        if component_means.is_empty() {
            return Err(WorldError::World("no attributes".into()));
        }
        let dim = component_means
            .first()
            .and_then(|maps| maps.first())
            .map(|m| m.len())
            .unwrap_or(0);
        if dim == 0 {
            return Err(WorldError::World("zero-dimensional component means".into()));
        }
        for (i, maps) in component_means.iter().enumerate() {
            if maps.is_empty() {
                return Err(WorldError::World(format!("attribute {i} has no component means")));
            }
            for m in maps {
                if m.len() != dim {
                    return Err(WorldError::World(format!(
                        "attribute {i} mean has dimension {}, expected {dim}",
                        m.len()
                    )));
                }
                if m.iter().any(|v| !v.is_finite()) {
                    return Err(WorldError::World(format!("attribute {i} mean is non-finite")));
                }
            }
        }
        Ok(GaussianWorld {
            component_means,
            sigma,
            dim,
        })
    }

    /// The canonical 2-attribute world in ℝ²: the first attribute shifts
    /// along the x-axis (`f₁(∓1) = (∓1, 0)`), the second along the y-axis
    /// (`f₂(∓1) = (0, ∓1)`). With σ well below 1 the four tuple means
    /// `(±1, ±1)` are visually separated clusters.
    pub fn axis_pair(sigma: f64) -> Result<GaussianWorld, WorldError> {
        GaussianWorld::new(
            vec![
                vec![vec![-1.0, 0.0], vec![1.0, 0.0]],
                vec![vec![0.0, -1.0], vec![0.0, 1.0]],
            ],
            sigma,
        )
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn n_attrs(&self) -> usize {
        self.component_means.len()
    }

    pub fn component_mean(&self, attr: usize, code: usize) -> &[f64] {
        &self.component_means[attr][code]
    }

    /// Mean of the conditional for a full tuple: `Σᵢ fᵢ(cᵢ)`.
    pub fn mean_of(&self, tuple: &[usize]) -> Vec<f64> {
        let mut mean = vec![0.0; self.dim];
        for (attr, &code) in tuple.iter().enumerate() {
            for (m, f) in mean.iter_mut().zip(&self.component_means[attr][code]) {
                *m += f;
            }
        }
        mean
    }

    /// Component means of the training conditional for `cond`: one mean per
    /// training tuple consistent with the condition (uniform weights).
    pub fn conditional_components(
        &self,
        space: &AttributeSpace,
        cond: &ConditionVector,
    ) -> Result<Vec<Vec<f64>>, WorldError> {
        self.check_compatible(space)?;
        if cond.arity() != space.n_attrs() {
            return Err(WorldError::Space(format!(
                "condition arity {} does not match {} attributes",
                cond.arity(),
                space.n_attrs()
            )));
        }
        let comps: Vec<Vec<f64>> = space
            .train_support()
            .iter()
            .filter(|t| cond.matches(t))
            .map(|t| self.mean_of(t))
            .collect();
        if comps.is_empty() {
            return Err(WorldError::UnsupportedCondition(format!("{cond:?}")));
        }
        Ok(comps)
    }

    fn check_compatible(&self, space: &AttributeSpace) -> Result<(), WorldError> {
        if space.n_attrs() != self.n_attrs() {
            return Err(WorldError::World(format!(
                "space has {} attributes, world has {}",
                space.n_attrs(),
                self.n_attrs()
            )));
        }
        for attr in 0..space.n_attrs() {
            if space.cardinality(attr) > self.component_means[attr].len() {
                return Err(WorldError::World(format!(
                    "attribute {attr} has {} values but only {} component means",
                    space.cardinality(attr),
                    self.component_means[attr].len()
                )));
            }
        }
        Ok(())
    }
}

/// The canonical world at its default noise scale with its two standard
/// supports: `(world, orthogonal-support space, full-support space)`.
pub fn axis_pair_world(sigma: f64) -> (GaussianWorld, AttributeSpace, AttributeSpace) {
    (
        GaussianWorld::axis_pair(sigma).expect("built-in world is well-formed"),
        AttributeSpace::binary_pair_orthogonal(),
        AttributeSpace::binary_pair_full(),
    )
}

/// Score `∇ₓ log p(x)` of a uniform mixture of isotropic Gaussians
/// `N(μₖ, σ²I)`:
///
/// ```text
/// s(x) = Σₖ wₖ(x) · (μₖ - x)/σ²,   wₖ = softmax(-‖x-μₖ‖²/(2σ²))
/// ```
///
/// Weights are computed in log space with max subtraction, so the result is
/// finite even when every component likelihood underflows (tiny σ, far x).
pub fn oracle_mixture_score(x: &[f64], components: &[Vec<f64>], sigma: f64) -> Vec<f64> {
    assert!(!components.is_empty(), "mixture needs at least one component");
    let inv_var = 1.0 / (sigma * sigma);
    let log_w: Vec<f64> = components
        .iter()
        .map(|mu| {
            let d2: f64 = x.iter().zip(mu).map(|(a, b)| (a - b) * (a - b)).sum();
            -0.5 * d2 * inv_var
        })
        .collect();
    let max = log_w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = log_w.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut score = vec![0.0; x.len()];
    for (w, mu) in weights.iter().zip(components) {
        let wn = w / total;
        for ((s, &m), &xi) in score.iter_mut().zip(mu).zip(x) {
            *s += wn * (m - xi) * inv_var;
        }
    }
    score
}

/// Score of the *training* conditional `p_train(x | cond)`: the mixture over
/// training tuples consistent with `cond`. A fully-null condition gives the
/// unconditional training score. This is what an ideal score model trained
/// on the partial support converges to — which under partial support can
/// differ from the true conditional of the underlying world.
pub fn oracle_conditional_score(
    world: &GaussianWorld,
    space: &AttributeSpace,
    cond: &ConditionVector,
    x: &[f64],
) -> Result<Vec<f64>, WorldError> {
    let comps = world.conditional_components(space, cond)?;
    Ok(oracle_mixture_score(x, &comps, world.sigma()))
}

/// Score of the training conditional after forward diffusion to noise level
/// `alpha_bar`: each component `N(μ, σ²I)` becomes
/// `N(√ᾱ·μ, (ᾱσ² + 1-ᾱ)·I)` under `x_t = √ᾱ·x₀ + √(1-ᾱ)·ε`, and the
/// mixture weights are unchanged. `alpha_bar = 1` recovers the clean score.
pub fn oracle_noised_conditional_score(
    world: &GaussianWorld,
    space: &AttributeSpace,
    cond: &ConditionVector,
    x: &[f64],
    alpha_bar: f64,
) -> Result<Vec<f64>, WorldError> {
    if !(0.0..=1.0).contains(&alpha_bar) {
        return Err(WorldError::World(format!(
            "alpha_bar must lie in [0, 1], got {alpha_bar}"
        )));
    }
    let comps = world.conditional_components(space, cond)?;
    let root = alpha_bar.sqrt();
    let scaled: Vec<Vec<f64>> = comps
        .iter()
        .map(|mu| mu.iter().map(|&m| root * m).collect())
        .collect();
    let eff_sigma = (alpha_bar * world.sigma() * world.sigma() + 1.0 - alpha_bar).sqrt();
    Ok(oracle_mixture_score(x, &scaled, eff_sigma))
}

/// Draws `m` labeled observations: tuples uniform over the space's training
/// support, observations `Σᵢ fᵢ(cᵢ) + σ·ε`. Deterministic given the RNG
/// state.
pub fn sample_dataset(
    world: &GaussianWorld,
    space: &AttributeSpace,
    m: usize,
    provenance: Provenance,
    rng: &mut Prng,
) -> Result<LabeledDataset, WorldError> {
    world.check_compatible(space)?;
    if m == 0 {
        return Err(WorldError::Dataset("requested zero samples".into()));
    }
    let support = space.train_support();
    let mut xs = crate::Matrix::zeros((m, world.dim()));
    let mut labels = Vec::with_capacity(m);
    for row in 0..m {
        let tuple = &support[rng.below(support.len())];
        let mean = world.mean_of(tuple);
        for (col, &mu) in mean.iter().enumerate() {
            xs[(row, col)] = mu + world.sigma() * rng.normal();
        }
        labels.push(tuple.clone());
    }
    LabeledDataset::new(xs, labels, provenance, space)
}
